"""Matrix-completion experiment harness: problem generation (Gaussian
low-rank and image-based), observation masks, error metrics, campaign
execution over (method, zeta, seed) cells, and CSV/SVG artifact emission.

Randomness is split by purpose into fixed stream ids off a single seed —
factor generation, mask sampling, and Krylov start vectors never share a
stream — so regenerating any one ingredient cannot perturb the others, and
every output file is reproducible byte-for-byte from the config echo.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dense import (
    RngSpec,
    as_matrix,
    read_matrix_csv,
    read_matrix_dmat,
    write_matrix_dmat,
)
from .projections import ObservedData, read_observed_csv, write_observed_csv
from .solvers import SolverConfig, SolverTrace, run, write_trace_csv

# stream-id convention (offsets from the campaign seed)
STREAM_FACTORS = 1
STREAM_MASK = 2
STREAM_LANCZOS = 3  # base stream; B-projection i of a run uses base + i

_RANK_CHECK_MAX_DIM = 1024


@dataclass(frozen=True)
class ProblemInstance:
    ground_truth: np.ndarray
    observed: ObservedData
    rank: int
    oversampling: float
    provenance: str
    rng: RngSpec


def observation_count(n1: int, n2: int, r: int, oversampling: float) -> int:
    return int(round(oversampling * (n1 + n2 - r) * r))


def _sample_mask(n1: int, n2: int, q: int, gen: np.random.Generator):
    """q distinct linear indices, uniform without replacement, via a partial
    Fisher-Yates shuffle (only the first q positions are ever settled)."""
    n = n1 * n2
    idx = np.arange(n, dtype=np.int64)
    for i in range(q):
        j = i + int(gen.integers(n - i))
        idx[i], idx[j] = idx[j], idx[i]
    chosen = idx[:q]
    return chosen // n2, chosen % n2


def _verify_rank(m: np.ndarray, r: int) -> None:
    if min(m.shape) > _RANK_CHECK_MAX_DIM:
        return
    s = np.linalg.svd(m, compute_uv=False)
    if s.size > r and s[0] > 0 and s[r] > 1e-8 * s[0]:
        raise ValueError(f"ground truth has numerical rank > {r}")


def generate_gaussian(n1: int, n2: int, r: int, oversampling: float,
                      rng: RngSpec) -> ProblemInstance:
    """M = L @ R.T with i.i.d. standard normal factors, plus a uniform
    observation mask of round(oversampling * (n1+n2-r) * r) entries."""
    if r > min(n1, n2):
        raise ValueError("rank exceeds matrix dimensions")
    q = observation_count(n1, n2, r, oversampling)
    if q < 1 or q > n1 * n2:
        raise ValueError(f"infeasible observation count {q}")
    gen_f = RngSpec(rng.seed, STREAM_FACTORS).generator()
    left = gen_f.standard_normal((n1, r))
    right = gen_f.standard_normal((n2, r))
    m = left @ right.T
    _verify_rank(m, r)
    rows, cols = _sample_mask(n1, n2, q, RngSpec(rng.seed, STREAM_MASK).generator())
    obs = ObservedData.from_matrix(m, rows, cols)
    return ProblemInstance(ground_truth=m, observed=obs, rank=r,
                           oversampling=oversampling, provenance="gaussian",
                           rng=rng)


# ---------------------------------------------------------------------------
# image problems
# ---------------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Grayscale PGM (P2 ASCII or P5 binary, maxval <= 65535) as floats in
    [0, 1]; 2-byte P5 samples are big-endian per the format."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P2", b"P5"):
        raise ValueError("not a P2/P5 PGM file")
    binary = data[:2] == b"P5"
    # header = magic, width, height, maxval; '#' comments may appear between
    tokens = []
    pos = 2
    while len(tokens) < 3 and pos < len(data):
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    if len(tokens) < 3:
        raise ValueError("truncated PGM header")
    width, height, maxval = (int(t) for t in tokens)
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval {maxval} out of range")
    if binary:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        count = width * height
        raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        if raster.size != count:
            raise ValueError("truncated PGM raster")
    else:
        vals = data[pos:].split()
        if len(vals) != width * height:
            raise ValueError(f"expected {width * height} samples, got {len(vals)}")
        raster = np.array([int(v) for v in vals], dtype=np.int64)
    if raster.max(initial=0) > maxval:
        raise ValueError("sample exceeds declared maxval")
    return raster.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, img, maxval: int = 255, binary: bool = True) -> None:
    """Quantize an array of [0, 1] intensities to a P5 (or P2) PGM file."""
    img = as_matrix(img)
    if not 0 < maxval <= 65535:
        raise ValueError("maxval out of range")
    raster = np.clip(np.rint(img * maxval), 0, maxval)
    header = f"P{'5' if binary else '2'}\n{img.shape[1]} {img.shape[0]}\n{maxval}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
            fh.write(raster.astype(dtype).tobytes())
        else:
            flat = raster.astype(np.int64).ravel()
            for start in range(0, flat.size, 16):
                fh.write(" ".join(str(v) for v in flat[start:start + 16]).encode("ascii"))
                fh.write(b"\n")


def load_image_matrix(path) -> np.ndarray:
    """PGM files are scaled to [0, 1] by their maxval; CSV matrices are taken
    as they are (the caller owns their scale)."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P5"):
        return read_pgm(path)
    return read_matrix_csv(path)


def truncate_rank(m: np.ndarray, r: int) -> np.ndarray:
    """Exact best rank-r approximation by dense SVD (oracle-grade)."""
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    k = min(r, s.size)
    return (u[:, :k] * s[:k]) @ vh[:k]


def load_image_problem(path, r: int, oversampling: float,
                       rng: RngSpec) -> ProblemInstance:
    """Read an image, keep its exact rank-r truncation as the ground truth,
    and mask it exactly as in generate_gaussian."""
    raw = load_image_matrix(path)
    if r > min(raw.shape):
        raise ValueError("rank exceeds image dimensions")
    m = truncate_rank(raw, r)
    n1, n2 = m.shape
    q = observation_count(n1, n2, r, oversampling)
    if q < 1 or q > n1 * n2:
        raise ValueError(f"infeasible observation count {q}")
    _verify_rank(m, r)
    rows, cols = _sample_mask(n1, n2, q, RngSpec(rng.seed, STREAM_MASK).generator())
    obs = ObservedData.from_matrix(m, rows, cols)
    return ProblemInstance(ground_truth=m, observed=obs, rank=r,
                           oversampling=oversampling, provenance=f"image({path})",
                           rng=rng)


def synthetic_scene(n1: int, n2: int) -> np.ndarray:
    """Deterministic grayscale test image used when no image file is supplied.

    An illumination gradient carries most of the energy; forty cross-banded
    texture harmonics with slowly decaying weights fill in the rest, so the
    singular values fall off smoothly with no spectral gap — the profile of a
    photograph — while the singular vectors stay spread out, which keeps
    masked completion at low sampling rates well posed."""
    yy = np.linspace(0.0, 1.0, n1)[:, None]
    xx = np.linspace(0.0, 1.0, n2)[None, :]
    z = 0.55 - 0.18 * yy + 0.08 * xx
    for k in range(1, 41):
        amp = 0.05 / float(k) ** 0.35
        # incommensurate frequency/phase schedule: keeps the harmonics
        # linearly independent at every raster size we care about
        fy = 0.5 + 0.9 * k + 0.23 * ((3 * k) % 5)
        fx = 0.5 + 1.1 * k + 0.31 * ((2 * k) % 7)
        z = z + amp * np.cos(np.pi * fy * yy + 2.399963 * k) \
                    * np.cos(np.pi * fx * xx + 1.324718 * k)
    return np.rint(np.clip(z, 0.0, 1.0) * 255) / 255


def downscale_mean(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-average by an integer factor (dimensions must divide evenly)."""
    img = as_matrix(img)
    n1, n2 = img.shape
    if factor < 1 or n1 % factor or n2 % factor:
        raise ValueError("factor must divide both dimensions")
    return img.reshape(n1 // factor, factor, n2 // factor, factor).mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def metric_e_omega(y, observed: ObservedData) -> float:
    """Relative Frobenius error restricted to the observed entries."""
    y = as_matrix(y)
    denom = observed.norm()
    if denom == 0.0:
        raise ValueError("all observed entries are zero")
    return float(np.linalg.norm(observed.values - y[observed.rows, observed.cols])) / denom


def metric_e_mse(y_final, m) -> float:
    """Mean squared error over all entries."""
    y_final = as_matrix(y_final)
    m = as_matrix(m)
    if y_final.shape != m.shape:
        raise ValueError("shape mismatch")
    d = m - y_final
    return float(np.sum(d * d)) / (m.shape[0] * m.shape[1])


# ---------------------------------------------------------------------------
# problem instance serialization (the `generate` artifact)
# ---------------------------------------------------------------------------

def write_problem_dir(out_dir, inst: ProblemInstance) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_dmat(out / "truth.dmat", inst.ground_truth)
    write_observed_csv(out / "observed.csv", inst.observed)
    meta = {
        "rank": inst.rank,
        "oversampling": inst.oversampling,
        "provenance": inst.provenance,
        "seed": inst.rng.seed,
        "stream": inst.rng.stream,
    }
    with open(out / "instance.json", "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_problem_dir(path) -> ProblemInstance:
    p = Path(path)
    with open(p / "instance.json", "r", encoding="ascii") as fh:
        meta = json.load(fh)
    m = read_matrix_dmat(p / "truth.dmat")
    obs = read_observed_csv(p / "observed.csv")
    if (obs.n1, obs.n2) != m.shape:
        raise ValueError("observed.csv dims do not match truth.dmat")
    return ProblemInstance(ground_truth=m, observed=obs, rank=int(meta["rank"]),
                           oversampling=float(meta["oversampling"]),
                           provenance=str(meta["provenance"]),
                           rng=RngSpec(int(meta["seed"]), int(meta["stream"])))


# ---------------------------------------------------------------------------
# campaigns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignConfig:
    family: str = "gaussian"            # gaussian | image
    n1: int = 512
    n2: int = 512
    rank: int = 30
    oversampling: float = 2.6
    methods: tuple = ("apm", "rapm", "irapm")
    zetas: tuple = (1e-9, 1e-7, 1e-5, 1e-3)
    seeds: int = 5
    lam: float = 16.0
    mu: float = 16.0
    gamma: float = 0.1
    max_iter: int = 200
    ritz_tol_multiplier: float = 16.0
    ell_cap: int | None = None
    record_l: bool = False
    image: str | None = None            # image path; None -> synthetic scene
    out_dir: str = "campaign_out"
    jobs: int = 1


@dataclass(frozen=True)
class SummaryRow:
    method: str
    zeta: float | None
    e_omega: float | None
    e_mse: float | None
    e_mse_std: float | None
    cost: float | None
    n_runs: int


@dataclass
class CampaignSummary:
    rows: list
    failures: list  # (cell name, error message)


def _zeta_label(zeta: float | None) -> str:
    return "na" if zeta is None else f"{zeta:g}"


def campaign_cells(cfg: CampaignConfig):
    """Canonical cell order: methods as configured, zeta grid inside irapm,
    seeds innermost (1-based)."""
    for method in cfg.methods:
        zetas = cfg.zetas if method == "irapm" else (None,)
        for zeta in zetas:
            for seed in range(1, cfg.seeds + 1):
                yield method, zeta, seed


def build_instance(cfg: CampaignConfig, seed: int) -> ProblemInstance:
    if cfg.family == "gaussian":
        return generate_gaussian(cfg.n1, cfg.n2, cfg.rank, cfg.oversampling,
                                 RngSpec(seed))
    if cfg.family == "image":
        if cfg.image is None:
            raise ValueError("image family requires an image path")
        return load_image_problem(cfg.image, cfg.rank, cfg.oversampling,
                                  RngSpec(seed))
    raise ValueError(f"unknown problem family {cfg.family!r}")


def _cell_solver_config(cfg: CampaignConfig, method: str, zeta: float | None,
                        seed: int) -> SolverConfig:
    return SolverConfig(
        variant=method, rank=cfg.rank, lam=cfg.lam, mu=cfg.mu,
        zeta=zeta if zeta is not None else 1e-7, gamma=cfg.gamma,
        max_iter=cfg.max_iter, ritz_tol_multiplier=cfg.ritz_tol_multiplier,
        ell_cap=cfg.ell_cap, rng=RngSpec(seed, STREAM_LANCZOS),
        record_l=cfg.record_l)


def _run_cell(inst: ProblemInstance, config: SolverConfig):
    """One campaign cell: solve, measure, strip the heavy arrays."""
    trace = run(inst.observed, config)
    final_dense = trace.final_y.densify()
    e_om = metric_e_omega(final_dense, inst.observed)
    e_mse = metric_e_mse(final_dense, inst.ground_truth)
    trace.final_x = None
    trace.final_y = None
    return trace, e_om, e_mse


def _run_cell_safe(args):
    key, inst, config = args
    try:
        return key, _run_cell(inst, config), None
    except Exception as exc:  # pragma: no cover - exercised via fault injection
        return key, None, f"{type(exc).__name__}: {exc}"


def run_campaign(cfg: CampaignConfig) -> CampaignSummary:
    """Execute every (method, zeta, seed) cell and write summary.csv, one
    trace CSV per cell, the three figures, and a manifest into out_dir.

    Cells are independent; with jobs > 1 they run on a process pool.  All
    files are written by this (single) process in canonical cell order, so
    scheduling never changes bytes.  A failing cell is recorded and skipped
    in the aggregation; it never takes down its neighbors.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    instances = {seed: build_instance(cfg, seed)
                 for seed in range(1, cfg.seeds + 1)}
    work = [((method, zeta, seed), instances[seed],
             _cell_solver_config(cfg, method, zeta, seed))
            for method, zeta, seed in campaign_cells(cfg)]

    results = {}
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for key, payload, err in pool.map(_run_cell_safe, work):
                results[key] = (payload, err)
    else:
        for item in work:
            key, payload, err = _run_cell_safe(item)
            results[key] = (payload, err)

    failures = []
    traces = {}
    finals = {}
    for key in (w[0] for w in work):
        payload, err = results[key]
        method, zeta, seed = key
        name = f"trace_{method}_{_zeta_label(zeta)}_{seed}.csv"
        if err is not None:
            failures.append((name, err))
            continue
        trace, e_om, e_mse = payload
        traces[key] = trace
        finals[key] = (e_om, e_mse, trace.total_cost)
        write_trace_csv(out / name, trace)

    rows = []
    for method in cfg.methods:
        zetas = cfg.zetas if method == "irapm" else (None,)
        for zeta in zetas:
            cells = [(method, zeta, s) for s in range(1, cfg.seeds + 1)]
            done = [finals[c] for c in cells if c in finals]
            if not done:
                rows.append(SummaryRow(method, zeta, None, None, None, None, 0))
                continue
            e_oms = [d[0] for d in done]
            e_mses = [d[1] for d in done]
            costs = [d[2] for d in done]
            std = float(np.std(e_mses, ddof=1)) if len(e_mses) > 1 else None
            rows.append(SummaryRow(
                method, zeta, float(np.mean(e_oms)), float(np.mean(e_mses)),
                std, float(np.mean(costs)), len(done)))
    summary = CampaignSummary(rows=rows, failures=failures)
    write_summary_csv(out / "summary.csv", summary)

    if traces:
        emit_plots(list(traces.values()), "e_omega_band", out / "fig_e_omega_band.svg")
        emit_plots(list(traces.values()), "krylov_dims", out / "fig_krylov_dims.svg")
        if any(k[0] == "apm" for k in traces):
            emit_plots(list(traces.values()), "cost_ratio_vs_apm",
                       out / "fig_cost_ratio_vs_apm.svg")
    _write_manifest(out / "manifest.json", cfg, results)
    return summary


def write_summary_csv(path, summary: CampaignSummary) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("method,zeta,e_omega,e_mse,e_mse_std,cost\n")
        for row in summary.rows:
            zeta = "" if row.zeta is None else f"{row.zeta:g}"
            cells = [row.method, zeta]
            for v in (row.e_omega, row.e_mse, row.e_mse_std, row.cost):
                cells.append("" if v is None else repr(v))
            fh.write(",".join(cells) + "\n")


def read_summary_csv(path):
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "method,zeta,e_omega,e_mse,e_mse_std,cost":
            raise ValueError(f"unexpected summary header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            method, zeta, e_om, e_mse, std, cost = line.split(",")
            rows.append({
                "method": method,
                "zeta": None if zeta == "" else float(zeta),
                "e_omega": None if e_om == "" else float(e_om),
                "e_mse": None if e_mse == "" else float(e_mse),
                "e_mse_std": None if std == "" else float(std),
                "cost": None if cost == "" else float(cost),
            })
    return rows


def _write_manifest(path, cfg: CampaignConfig, results) -> None:
    cells = []
    for (method, zeta, seed), (payload, err) in sorted(
            results.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]), kv[0][2])):
        entry = {
            "method": method,
            "zeta": None if zeta is None else zeta,
            "seed": seed,
            "status": "ok" if err is None else "failed",
            "trace": f"trace_{method}_{_zeta_label(zeta)}_{seed}.csv",
        }
        if err is not None:
            entry["error"] = err
        cells.append(entry)
    doc = {
        "config": {
            "family": cfg.family, "n1": cfg.n1, "n2": cfg.n2, "rank": cfg.rank,
            "oversampling": cfg.oversampling, "methods": list(cfg.methods),
            "zetas": list(cfg.zetas), "seeds": cfg.seeds, "lam": cfg.lam,
            "mu": cfg.mu, "gamma": cfg.gamma, "max_iter": cfg.max_iter,
            "ritz_tol_multiplier": cfg.ritz_tol_multiplier,
            "ell_cap": cfg.ell_cap, "record_l": cfg.record_l,
            "image": cfg.image,
        },
        "streams": {"factors": STREAM_FACTORS, "mask": STREAM_MASK,
                    "lanczos_base": STREAM_LANCZOS},
        "cells": cells,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def _series_map(traces_by_key):
    """Group traces by (method, zeta) series; values keep seed order."""
    series = {}
    for (method, zeta, seed), trace in sorted(
            traces_by_key.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]), kv[0][2])):
        series.setdefault((method, zeta), []).append(trace)
    return series


def _series_label(method: str, zeta: float | None) -> str:
    pretty = {"apm": "APM", "rapm": "RAPM", "irapm": "iRAPM"}[method]
    return pretty if zeta is None else f"{pretty} zeta={zeta:g}"


def emit_plots(traces, kind: str, path) -> None:
    """Render one of the three campaign figures to an SVG file.

    kinds: ``e_omega_band`` (per-series mean of e_omega across seeds with a
    min-max band, log y), ``cost_ratio_vs_apm`` (cumulative cost of each
    series over APM's, representative first seed), and ``krylov_dims``
    (accepted subspace dimension per iteration, first seed).
    """
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    if not traces:
        raise ValueError("no traces to plot")
    keyed = {}
    for tr in traces:
        cfg = tr.config
        zeta = cfg.zeta if cfg.variant == "irapm" else None
        keyed[(cfg.variant, zeta, cfg.rng.seed)] = tr
    series = _series_map(keyed)

    plt.rcParams["svg.hashsalt"] = "altproj"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if kind == "e_omega_band":
        for (method, zeta), runs in series.items():
            data = np.array([[rec.e_omega for rec in tr.records] for tr in runs])
            ks = np.arange(1, data.shape[1] + 1)
            mean = data.mean(axis=0)
            ax.semilogy(ks, mean, label=_series_label(method, zeta))
            ax.fill_between(ks, data.min(axis=0), data.max(axis=0), alpha=0.2)
        ax.set_ylabel("relative error on observed entries")
    elif kind == "cost_ratio_vs_apm":
        apm_runs = series.get(("apm", None))
        if not apm_runs:
            raise ValueError("cost_ratio_vs_apm requires an APM trace")
        base = np.array([rec.cost for rec in apm_runs[0].records], dtype=float)
        for (method, zeta), runs in series.items():
            cost = np.array([rec.cost for rec in runs[0].records], dtype=float)
            n = min(cost.size, base.size)
            ok = base[:n] > 0
            ks = np.arange(1, n + 1)[ok]
            ax.plot(ks, cost[:n][ok] / base[:n][ok],
                    label=_series_label(method, zeta))
        ax.set_ylabel("cumulative cost over APM")
    elif kind == "krylov_dims":
        for (method, zeta), runs in series.items():
            dims = [rec.ell_bar for rec in runs[0].records]
            ax.plot(np.arange(1, len(dims) + 1), dims,
                    label=_series_label(method, zeta))
        ax.set_ylabel("accepted Krylov dimension")
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    ax.set_xlabel("iteration k")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
