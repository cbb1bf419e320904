"""Command-line front end.

Subcommands:

  solve      run one (method, zeta, seed) cell and write its trace CSV
  replicate  run a whole campaign preset (gauss-table | image-table)
  figure1    exact 1-D walkthrough of the two acceptance conditions + SVG
  generate   emit a problem instance (truth + observations) to a directory

Configuration is a flat ``key = value`` text file (all keys optional, '#'
starts a comment line) plus command-line flags named after the keys; flags
win over the file, the file wins over built-in defaults.  Unknown keys are a
hard error.  Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

from .harness import (
    CampaignConfig,
    build_instance,
    metric_e_mse,
    metric_e_omega,
    read_problem_dir,
    run_campaign,
    synthetic_scene,
    write_pgm,
    write_problem_dir,
    downscale_mean,
    load_image_matrix,
)
from .dense import RngSpec
from .harness import STREAM_LANCZOS
from .projections import IntervalUnion, project_interval_union
from .solvers import (
    IntervalFeasibility,
    SolverConfig,
    eval_q,
    run,
    write_trace_csv,
)

DEFAULTS = {
    "family": "gaussian",
    "n1": "512",
    "n2": "512",
    "rank": "30",
    "oversampling": "2.6",
    "lam_mu": "16",
    "gamma": "0.1",
    "zeta": "1e-7",
    "zetas": "1e-9,1e-7,1e-5,1e-3",
    "methods": "apm,rapm,irapm",
    "seeds": "5",
    "seed": "1",
    "max_iter": "200",
    "image": "",
    "ell_cap": "",
    "ritz_tol_multiplier": "16",
    "record_l": "0",
    "jobs": "1",
    "scale": "1",
    "out": "",
    "method": "irapm",
    "problem": "",
}


class UsageError(Exception):
    pass


def _load_config_file(path) -> dict:
    cfg = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = value.strip()
    return cfg


class _Resolver:
    """Merge flag > config-file > default, with typed accessors."""

    def __init__(self, ns: argparse.Namespace):
        self.flags = ns
        self.file = _load_config_file(ns.config) if getattr(ns, "config", None) else {}

    def was_flagged(self, key: str) -> bool:
        return getattr(self.flags, key, None) is not None

    def raw(self, key: str) -> str:
        v = getattr(self.flags, key, None)
        if v is not None:
            return str(v)
        if key in self.file:
            return self.file[key]
        return DEFAULTS[key]

    def str(self, key: str) -> str:
        return self.raw(key)

    def int(self, key: str, low=None) -> int:
        try:
            v = int(self.raw(key))
        except ValueError:
            raise UsageError(f"{key} must be an integer, got {self.raw(key)!r}")
        if low is not None and v < low:
            raise UsageError(f"{key} must be >= {low}")
        return v

    def float(self, key: str) -> float:
        try:
            return float(self.raw(key))
        except ValueError:
            raise UsageError(f"{key} must be a number, got {self.raw(key)!r}")

    def bool(self, key: str) -> bool:
        v = self.raw(key).lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off", ""):
            return False
        raise UsageError(f"{key} must be a boolean, got {self.raw(key)!r}")

    def opt_int(self, key: str):
        return None if self.raw(key) == "" else self.int(key, low=1)

    def float_list(self, key: str) -> tuple:
        try:
            return tuple(float(tok) for tok in self.raw(key).split(",") if tok.strip())
        except ValueError:
            raise UsageError(f"{key} must be a comma-separated number list")

    def str_list(self, key: str) -> tuple:
        return tuple(tok.strip() for tok in self.raw(key).split(",") if tok.strip())

    def dims(self) -> tuple:
        # --n is a square-shape shorthand; explicit --n1/--n2 win over it
        n = getattr(self.flags, "n", None)
        n1 = self.int("n1", low=1) if (self.was_flagged("n1") or n is None) else int(n)
        n2 = self.int("n2", low=1) if (self.was_flagged("n2") or n is None) else int(n)
        return n1, n2


def _check_zeta(z: float):
    if not 0.0 < z <= 1.0:
        raise UsageError(f"zeta must lie in (0, 1], got {z!r}")


def _check_rank(rank: int, n1: int, n2: int):
    if rank > min(n1, n2):
        raise UsageError(f"rank {rank} exceeds min(n1, n2) = {min(n1, n2)}")


def _zeta_label(zeta) -> str:
    return "na" if zeta is None else f"{zeta:g}"


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def cmd_solve(ns) -> int:
    r = _Resolver(ns)
    method = r.str("method")
    if method not in ("apm", "rapm", "irapm"):
        raise UsageError(f"unknown method {method!r}")
    if method != "irapm" and r.was_flagged("zeta"):
        raise UsageError(f"zeta only applies to irapm (method is {method})")
    zeta = r.float("zeta")
    _check_zeta(zeta)
    seed = r.int("seed", low=0)
    lam_mu = r.float("lam_mu")

    if r.str("problem"):
        inst = read_problem_dir(r.str("problem"))
        rank = inst.rank
    else:
        n1, n2 = r.dims()
        rank = r.int("rank", low=1)
        _check_rank(rank, n1, n2)
        family = r.str("family")
        image = r.str("image") or None
        if family == "image" and image is None:
            raise UsageError("family=image requires an image path")
        camp = CampaignConfig(family=family, n1=n1, n2=n2, rank=rank,
                              oversampling=r.float("oversampling"), image=image)
        inst = build_instance(camp, seed)

    cfg = SolverConfig(
        variant=method, rank=rank, lam=lam_mu, mu=lam_mu, zeta=zeta,
        gamma=r.float("gamma"), max_iter=r.int("max_iter", low=1),
        ritz_tol_multiplier=r.float("ritz_tol_multiplier"),
        ell_cap=r.opt_int("ell_cap"), rng=RngSpec(seed, STREAM_LANCZOS),
        record_l=r.bool("record_l"))
    trace = run(inst.observed, cfg)

    zlabel = _zeta_label(zeta if method == "irapm" else None)
    out = r.str("out") or f"trace_{method}_{zlabel}_{seed}.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out, trace)
    final = trace.final_y.densify()
    e_om = metric_e_omega(final, inst.observed)
    e_mse = metric_e_mse(final, inst.ground_truth)
    print(f"method={method} zeta={zlabel} seed={seed} e_omega={e_om!r} "
          f"e_mse={e_mse!r} cost={trace.total_cost} trace={out}")
    return 0


# ---------------------------------------------------------------------------
# replicate
# ---------------------------------------------------------------------------

def _scaled(v: int, scale: float, low: int = 1) -> int:
    return max(low, round(v * scale))


def cmd_replicate(ns) -> int:
    r = _Resolver(ns)
    preset = ns.preset
    scale = r.float("scale")
    if scale <= 0:
        raise UsageError("scale must be positive")
    n1, n2 = (_scaled(512, scale), _scaled(512, scale))
    if r.was_flagged("n1") or r.was_flagged("n2") or getattr(ns, "n", None) is not None:
        n1, n2 = r.dims()
    rank = _scaled(30, scale) if not r.was_flagged("rank") else r.int("rank", low=1)
    _check_rank(rank, n1, n2)
    zetas = r.float_list("zetas")
    for z in zetas:
        _check_zeta(z)
    methods = r.str_list("methods")
    out_dir = r.str("out") or (f"replicate_{preset}" +
                               ("" if scale == 1 else f"_s{scale:g}"))

    image = None
    family = "gaussian"
    if preset == "image-table":
        family = "image"
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        src = r.str("image")
        image = str(Path(out_dir) / "scene.pgm")
        if src:
            img = load_image_matrix(src)
            factor = round(img.shape[0] / n1)
            if factor > 1:
                img = downscale_mean(img, factor)
            if img.shape != (n1, n2):
                raise UsageError(f"image shape {img.shape} does not match "
                                 f"({n1}, {n2}) and cannot be block-averaged to it")
            write_pgm(image, img)
        else:
            write_pgm(image, synthetic_scene(n1, n2))
    elif preset != "gauss-table":
        raise UsageError(f"unknown preset {preset!r}")

    camp = CampaignConfig(
        family=family, n1=n1, n2=n2, rank=rank,
        oversampling=r.float("oversampling"), methods=methods, zetas=zetas,
        seeds=r.int("seeds", low=1), lam=r.float("lam_mu"), mu=r.float("lam_mu"),
        gamma=r.float("gamma"), max_iter=r.int("max_iter", low=1),
        ritz_tol_multiplier=r.float("ritz_tol_multiplier"),
        ell_cap=r.opt_int("ell_cap"), record_l=r.bool("record_l"),
        image=image, out_dir=out_dir, jobs=r.int("jobs", low=1))
    summary = run_campaign(camp)

    print(f"campaign written to {out_dir}")
    print("method,zeta,e_omega,e_mse,e_mse_std,cost")
    for row in summary.rows:
        zeta = "" if row.zeta is None else f"{row.zeta:g}"
        vals = [row.method, zeta] + [
            "" if v is None else repr(v)
            for v in (row.e_omega, row.e_mse, row.e_mse_std, row.cost)]
        print(",".join(vals))
    for name, err in summary.failures:
        print(f"cell failed: {name}: {err}", file=sys.stderr)
    return 1 if summary.failures else 0


# ---------------------------------------------------------------------------
# figure1
# ---------------------------------------------------------------------------

def cmd_figure1(ns) -> int:
    """Exact rational walkthrough of the two inexactness conditions on the
    interval model problem A = [0,2], B = [0,1] u [2,3]."""
    lam, mu, zeta = Fraction(1), Fraction(10), Fraction(1, 2)
    x0, y0 = Fraction(0), Fraction(3)
    a_set = IntervalUnion([(Fraction(0), Fraction(2))])
    b_set = IntervalUnion([(Fraction(0), Fraction(1)),
                           (Fraction(2), Fraction(3))])
    sets = IntervalFeasibility(a_set, b_set)

    x_reg = (x0 + lam * y0) / (1 + lam)
    x1 = sets.project_a(x_reg)
    y_reg = (y0 + mu * x1) / (1 + mu)
    y_hat = project_interval_union(y_reg, b_set)
    q_hat = eval_q(y_hat, y0, x1, mu)

    def verdict(y):
        q_y = eval_q(y, y0, x1, mu)
        inexact = q_y <= zeta * q_hat
        bound = (y - y_hat) ** 2 <= -(1 - zeta) / zeta * q_y
        return q_y, inexact, bound

    print(f"A=[0,2] B=[0,1]u[2,3] x0={float(x0)!r} y0={float(y0)!r} "
          f"lambda={float(lam)!r} mu={float(mu)!r} zeta={float(zeta)!r}")
    print(f"x_reg={float(x_reg)!r}")
    print(f"y_reg={float(y_reg)!r} ({y_reg})")
    print(f"yhat={y_hat}")
    for y in (Fraction(2), Fraction(1)):
        print(f"Q({y})={float(eval_q(y, y0, x1, mu))!r}")
    for y in (Fraction(2), Fraction(1)):
        q_y, inexact, bound = verdict(y)
        print(f"y={y} inexact:{'PASS' if inexact else 'FAIL'} "
              f"bound:{'PASS' if bound else 'FAIL'}")

    accepted, cert = sets.project_b_certified(y_reg, y0, mu, zeta, Fraction(1, 10))
    print(f"accepted={accepted} q_accepted={float(cert.q_value)!r}")

    out = getattr(ns, "out", None) or "figure1.svg"
    _emit_figure1_svg(out, float(y_reg), float(y0), float(x1), float(mu),
                      float(zeta), float(y_hat), b_set)
    print(f"figure={out}")
    return 0


def _emit_figure1_svg(path, y_reg, y0, x1, mu, zeta, y_hat, b_set):
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    import numpy as np

    ys = np.linspace(-0.25, 3.25, 701)
    q = (1 + mu) / (2 * mu) * ((ys - y_reg) ** 2 - (y0 - y_reg) ** 2)
    q_hat = (1 + mu) / (2 * mu) * ((y_hat - y_reg) ** 2 - (y0 - y_reg) ** 2)
    bound_ok = (ys - y_hat) ** 2 <= -(1 - zeta) / zeta * q

    plt.rcParams["svg.hashsalt"] = "altproj"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(ys, q, label="Q(y)")
    ax.axhline(zeta * q_hat, linestyle="--", linewidth=1,
               label="zeta * Q(yhat)")
    ax.axhline(0, color="black", linewidth=0.6)
    for lo, hi in b_set.intervals:
        ax.plot([float(lo), float(hi)], [0, 0], linewidth=4, alpha=0.4,
                color="tab:gray")
    ax.fill_between(ys, q.min() * 1.05, q.max(), where=q <= zeta * q_hat,
                    alpha=0.10, label="first condition holds")
    ax.fill_between(ys, q.min() * 1.05, q.max(), where=bound_ok,
                    alpha=0.10, color="tab:green",
                    label="second condition holds")
    for marker, label in ((y_hat, "yhat"), (y_reg, "y_reg"), (1.0, "y=1")):
        ax.axvline(marker, linestyle=":", linewidth=0.8)
        ax.annotate(label, (marker, q.max() * 0.9), fontsize=8, rotation=90)
    ax.set_xlabel("y")
    ax.set_ylabel("Q")
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(ns) -> int:
    r = _Resolver(ns)
    n1, n2 = r.dims()
    rank = r.int("rank", low=1)
    _check_rank(rank, n1, n2)
    family = r.str("family")
    image = r.str("image") or None
    if family == "image" and image is None:
        raise UsageError("family=image requires an image path")
    camp = CampaignConfig(family=family, n1=n1, n2=n2, rank=rank,
                          oversampling=r.float("oversampling"), image=image)
    inst = build_instance(camp, r.int("seed", low=0))
    out = r.str("out") or "problem_out"
    write_problem_dir(out, inst)
    print(f"problem written to {out} (|observed|={inst.observed.count})")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, keys):
    p.add_argument("--config", help="flat key=value config file")
    if "n" in keys:
        p.add_argument("--n", type=int, help="square dimension shorthand")
    for key in keys:
        if key == "n":
            continue
        p.add_argument(f"--{key}", dest=key, help=f"(default {DEFAULTS[key]!r})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="altproj",
        description="Alternating projection methods for low-rank matrix "
                    "completion with certified inexact rank projections.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one (method, zeta, seed) cell")
    _add_common(p_solve, ["method", "zeta", "seed", "n", "n1", "n2", "rank",
                          "oversampling", "lam_mu", "gamma", "max_iter",
                          "family", "image", "problem", "ell_cap",
                          "ritz_tol_multiplier", "record_l", "out"])
    p_solve.set_defaults(func=cmd_solve)

    p_rep = sub.add_parser("replicate", help="run a campaign preset")
    p_rep.add_argument("preset", choices=["gauss-table", "image-table"])
    _add_common(p_rep, ["scale", "n", "n1", "n2", "rank", "oversampling",
                        "lam_mu", "gamma", "max_iter", "seeds", "zetas",
                        "methods", "image", "ell_cap", "ritz_tol_multiplier",
                        "record_l", "jobs", "out"])
    p_rep.set_defaults(func=cmd_replicate)

    p_fig = sub.add_parser("figure1", help="exact 1-D conditions walkthrough")
    p_fig.add_argument("--out", help="SVG output path (default figure1.svg)")
    p_fig.set_defaults(func=cmd_figure1)

    p_gen = sub.add_parser("generate", help="emit a problem instance to disk")
    _add_common(p_gen, ["family", "n", "n1", "n2", "rank", "oversampling",
                        "seed", "image", "out"])
    p_gen.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except UsageError as exc:
        parser.exit(2, f"{parser.prog}: error: {exc}\n")
    except Exception as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
