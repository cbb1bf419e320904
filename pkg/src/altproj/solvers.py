"""Alternating projection solvers over a pair of sets (A, B): the plain
method (APM), its regularized variant (RAPM), and the inexact regularized
variant (iRAPM) whose B-projections only need to pass a computable
certificate.

The step functions are generic over the ambient space: points may be floats
(the 1-D interval model problem, where exact fraction arithmetic survives)
or dense matrices.  A ``sets`` object supplies the projections:

    project_a(p)                          exact projection onto A
    project_b(p)                          projection onto B (APM / RAPM route)
    project_b_certified(y_reg, y_prev,    certified inexact projection onto B
                        mu, zeta, gamma)  -> (point, certificate)

``run`` drives the matrix-completion instance for a fixed iteration budget
and records per-iteration diagnostics, including the joint step length

    d_k = sqrt(||x_{k+1}-x_k||^2 + ||y_{k+1}-y_k||^2 - q_value),

where q_value is the (nonpositive) improvement functional of the accepted
inexact projection; for APM/RAPM q_value is recorded as 0, so d_k reduces to
the plain step norm.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .dense import RngSpec, as_matrix
from .lanczos import TruncatedFactors, bidiag_step, init_bidiag, small_svd, \
    assemble_truncated, refined_ritz_bounds
from .projections import (
    InexactCertificate,
    IntervalUnion,
    ObservedData,
    inexact_project_rank,
    project_affine_mask,
    project_interval_union,
)

VARIANTS = ("apm", "rapm", "irapm")


def _dist_sq(a, b):
    d = a - b
    if isinstance(d, np.ndarray):
        return float(np.sum(d * d))
    return d * d


def eval_l(x, y):
    """Proximity term of the merit function: L(x, y) = ||x - y||^2 / 2
    (the set indicators vanish on feasible arguments)."""
    if isinstance(x, np.ndarray) and x.shape != np.shape(y):
        raise ValueError("shape mismatch")
    return _dist_sq(x, y) / 2


def eval_q(y, y_prev, x_next, mu):
    """Improvement functional of the regularized B-update, in closed form:

        Q(y) = (1+mu)/(2 mu) * (||y - y_reg||^2 - ||y_prev - y_reg||^2),
        y_reg = (y_prev + mu x_next) / (1 + mu).

    Equal to 1/(2 mu) ||y-y_prev||^2 + L(x_next, y) - L(x_next, y_prev); the
    closed form costs one distance pair and stays exact for fraction inputs.
    Q(y_prev) = 0 and Q is negative exactly inside the ball around y_reg
    through y_prev.
    """
    y_reg = (y_prev + mu * x_next) / (1 + mu)
    return (1 + mu) / (2 * mu) * (_dist_sq(y, y_reg) - _dist_sq(y_prev, y_reg))


def step_apm(y, sets):
    """One plain alternating step: x = P_A(y), then y = P_B(x)."""
    x_next = sets.project_a(y)
    y_next = sets.project_b(x_next)
    return x_next, y_next


def step_rapm(x, y, lam, mu, sets):
    """One regularized step: both projections act on convex combinations
    anchored at the current pair, with weights lam (A side) and mu (B side)."""
    x_next = sets.project_a((x + lam * y) / (1 + lam))
    y_next = sets.project_b((y + mu * x_next) / (1 + mu))
    return x_next, y_next


def step_irapm(x, y, lam, mu, zeta, gamma, sets):
    """One regularized step with a certified inexact B-projection; returns
    (x_next, y_next, certificate)."""
    x_next = sets.project_a((x + lam * y) / (1 + lam))
    y_reg = (y + mu * x_next) / (1 + mu)
    y_next, cert = sets.project_b_certified(y_reg, y, mu, zeta, gamma)
    return x_next, y_next, cert


# ---------------------------------------------------------------------------
# concrete set pairs
# ---------------------------------------------------------------------------

@dataclass
class BProjection:
    """What the last B-projection did: subspace dimension used + factors."""
    ell_bar: int
    factors: TruncatedFactors | None


def project_rank_ritz(g, r, rng: RngSpec, tol_multiplier: float = 16.0,
                      ell_cap: int | None = None):
    """Rank-<=r truncated SVD via bidiagonalization with the standard
    stopping rule: grow the subspace until every one of the first r Ritz
    values carries an error bound below tol_multiplier * eps_machine relative
    to the largest Ritz value.  Bounds are gap-refined first, as the classic
    partial-SVD codes do, so convergence is declared at the minimal
    dimension.  Returns (factors, ell_bar)."""
    g = as_matrix(g)
    if float(np.sum(g * g)) == 0.0:
        empty = TruncatedFactors(u=np.zeros((g.shape[0], 0)), sigmas=np.zeros(0),
                                 v=np.zeros((g.shape[1], 0)), rank_bound=r)
        return empty, 0
    min_dim = min(g.shape)
    cap = min_dim if ell_cap is None else min(int(ell_cap), min_dim)
    tol = tol_multiplier * np.finfo(np.float64).eps
    state = init_bidiag(g, rng)
    while state.ell < min(r, cap) and not state.breakdown:
        bidiag_step(state)
    while True:
        done = state.breakdown or state.ell >= cap
        svd = small_svd(state.alphas, state.betas)
        if not done:
            top = float(svd.sigmas[0])
            bounds = refined_ritz_bounds(state, svd)
            done = bool(np.all(bounds[:min(r, state.ell)] <= tol * top))
        if done:
            return assemble_truncated(state, svd, min(r, state.ell)), state.ell
        bidiag_step(state)


class MatrixFeasibility:
    """Set pair for low-rank completion: A = matrices matching the observed
    entries, B = matrices of rank at most r.  Points are dense arrays; the
    factored form of the latest B-projection is kept on ``last_projection``.

    Each B-projection draws its Krylov start vector from a fresh derived
    stream (base stream + call index), so runs are reproducible and the
    stream schedule does not depend on the solver variant.
    """

    def __init__(self, obs: ObservedData, rank: int, rng: RngSpec,
                 ritz_tol_multiplier: float = 16.0, ell_cap: int | None = None):
        self.obs = obs
        self.rank = rank
        self.rng = rng
        self.ritz_tol_multiplier = ritz_tol_multiplier
        self.ell_cap = ell_cap
        self.last_projection: BProjection | None = None
        self._calls = 0

    def _next_rng(self) -> RngSpec:
        spec = self.rng.derived(self._calls)
        self._calls += 1
        return spec

    def project_a(self, z):
        return project_affine_mask(z, self.obs)

    def project_b_factors(self, g) -> TruncatedFactors:
        fac, ell_bar = project_rank_ritz(g, self.rank, self._next_rng(),
                                         self.ritz_tol_multiplier, self.ell_cap)
        self.last_projection = BProjection(ell_bar, fac)
        return fac

    def project_b(self, g):
        return self.project_b_factors(g).densify()

    def project_b_certified(self, y_reg, y_prev, mu, zeta, gamma):
        fac, cert = inexact_project_rank(y_reg, y_prev, self.rank, mu, zeta,
                                         gamma, self._next_rng(), self.ell_cap)
        self.last_projection = BProjection(cert.ell_bar, fac)
        return fac.densify(), cert


class IntervalFeasibility:
    """Set pair on the real line: A and B are unions of closed intervals.

    The certified B-projection here is an enumeration: candidates are the
    per-interval exact projections plus a fixed grid over B, scanned in
    ascending value; the first candidate passing both acceptance conditions
    (measured against the *exact* projection, which is computable in 1-D) is
    returned.  That brute force is only meant for the scalar model problem.
    """

    def __init__(self, a: IntervalUnion, b: IntervalUnion, grid_points: int = 10_000):
        self.a = a
        self.b = b
        self.grid_points = grid_points
        self.last_projection: BProjection | None = None

    def project_a(self, t):
        return project_interval_union(t, self.a)

    def project_b(self, t):
        self.last_projection = BProjection(0, None)
        return project_interval_union(t, self.b)

    def _candidates(self, y_reg):
        cands = [project_interval_union(y_reg, self.b)]
        for lo, hi in self.b.intervals:
            cands.append(lo if y_reg < lo else (hi if y_reg > hi else y_reg))
        total = sum(hi - lo for lo, hi in self.b.intervals)
        for lo, hi in self.b.intervals:
            share = max(2, int(self.grid_points * (hi - lo) / total)) if total > 0 else 2
            for i in range(share + 1):
                cands.append(lo + (hi - lo) * i / share)
        return sorted(set(cands))

    def project_b_certified(self, y_reg, y_prev, mu, zeta, gamma):
        # exact types (fractions) pass through untouched, so the scalar model
        # problem can be audited in exact arithmetic
        y_hat = project_interval_union(y_reg, self.b)
        scale = (1 + mu) / (2 * mu)
        d_prev = _dist_sq(y_prev, y_reg)
        q_hat = scale * (_dist_sq(y_hat, y_reg) - d_prev)
        for cand in self._candidates(y_reg):
            q_c = scale * (_dist_sq(cand, y_reg) - d_prev)
            if q_c > zeta * q_hat:
                continue
            radius_sq = 0 if zeta >= 1 else -(1 - zeta) / zeta * q_c
            if radius_sq < 0 or _dist_sq(cand, y_hat) > radius_sq:
                continue
            cert = InexactCertificate(
                ell_bar=0, c=_dist_sq(y_hat, y_reg), a=abs(cand - y_hat),
                kappa=None, q_value=q_c, dist_w_sq=_dist_sq(cand, y_reg),
                dist_prev_sq=d_prev, zeta=zeta, gamma=gamma, mu=mu,
                forced=False)
            self.last_projection = BProjection(0, None)
            return cand, cert
        raise RuntimeError("enumeration failed to accept even the exact projection")


# ---------------------------------------------------------------------------
# fixed-budget driver for matrix problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Everything a run needs.  ``lam``/``mu`` take either a constant or a
    per-iteration tuple (length >= max_iter); all values must be positive and
    finite.  ``e_omega_stop`` enables an early exit below that residual and
    is off by default (fixed-budget runs, comparable across methods)."""

    variant: str
    rank: int
    lam: float | tuple = 16.0
    mu: float | tuple = 16.0
    zeta: float = 1e-7
    gamma: float = 0.1
    max_iter: int = 200
    ritz_tol_multiplier: float = 16.0
    ell_cap: int | None = None
    rng: RngSpec = RngSpec(0, 0)
    record_l: bool = False
    e_omega_stop: float | None = None

    def lam_at(self, k: int) -> float:
        return _seq_value(self.lam, k)

    def mu_at(self, k: int) -> float:
        return _seq_value(self.mu, k)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.variant in ("rapm", "irapm"):
            for name, spec in (("lam", self.lam), ("mu", self.mu)):
                vals = spec if isinstance(spec, tuple) else (spec,)
                if isinstance(spec, tuple) and len(spec) < self.max_iter:
                    raise ValueError(f"{name} sequence shorter than max_iter")
                if not vals or not all(v > 0 and math.isfinite(v) for v in vals):
                    raise ValueError(f"{name} values must be positive and finite")
        if self.variant == "irapm":
            if not 0.0 < self.zeta <= 1.0:
                raise ValueError("zeta must lie in (0, 1]")
            if not 0.0 < self.gamma < 1.0:
                raise ValueError("gamma must lie strictly in (0, 1)")


def _seq_value(spec, k: int) -> float:
    """Value of a constant-or-sequence parameter at iteration k (1-based)."""
    if isinstance(spec, tuple):
        return float(spec[k - 1])
    return float(spec)


@dataclass
class IterationRecord:
    k: int
    e_omega: float
    l_value: float | None
    d: float
    ell_bar: int
    cost: int
    q_value: float
    cert: InexactCertificate | None = None


@dataclass
class SolverTrace:
    config: SolverConfig
    records: list = field(default_factory=list)
    final_x: np.ndarray | None = None
    final_y: TruncatedFactors | None = None
    wall_time: float = 0.0

    @property
    def total_cost(self) -> int:
        return self.records[-1].cost if self.records else 0


def run(obs: ObservedData, config: SolverConfig) -> SolverTrace:
    """Run the configured variant for exactly ``max_iter`` iterations.

    Initialization: X^0 is the observed matrix zero-filled off the mask and
    Y^0 its rank-r projection (standard stopping rule), identical across
    variants so trajectories are comparable run-to-run.
    """
    config.validate()
    t0 = time.perf_counter()
    sets = MatrixFeasibility(obs, config.rank, config.rng,
                             config.ritz_tol_multiplier, config.ell_cap)
    x = np.zeros((obs.n1, obs.n2))
    x[obs.rows, obs.cols] = obs.values
    y_fac = sets.project_b_factors(x)
    y = y_fac.densify()
    obs_norm = obs.norm()
    if obs_norm == 0.0:
        raise ValueError("observed entries are all zero")

    trace = SolverTrace(config=config)
    cost = 0
    for k in range(1, config.max_iter + 1):
        x_prev, y_prev = x, y
        lam_k, mu_k = config.lam_at(k), config.mu_at(k)
        cert = None
        if config.variant == "apm":
            x, y = step_apm(y, sets)
        elif config.variant == "rapm":
            x, y = step_rapm(x, y, lam_k, mu_k, sets)
        else:
            x, y, cert = step_irapm(x, y, lam_k, mu_k, config.zeta,
                                    config.gamma, sets)
        info = sets.last_projection
        cost += info.ell_bar - config.rank
        q_val = float(cert.q_value) if cert is not None else 0.0
        delta_sq = _dist_sq(x, x_prev) + _dist_sq(y, y_prev)
        d = math.sqrt(max(0.0, delta_sq - q_val))
        # by construction d dominates both the step norm and sqrt(-q)
        if cert is None or not cert.forced:
            assert d + 1e-9 >= math.sqrt(delta_sq)
            assert d + 1e-9 >= math.sqrt(max(0.0, -q_val))
        e_om = float(np.linalg.norm(obs.values - y[obs.rows, obs.cols])) / obs_norm
        l_val = eval_l(x, y) if config.record_l else None
        trace.records.append(IterationRecord(
            k=k, e_omega=e_om, l_value=l_val, d=d, ell_bar=info.ell_bar,
            cost=cost, q_value=q_val, cert=cert))
        if config.e_omega_stop is not None and e_om <= config.e_omega_stop:
            break
    trace.final_x = x
    trace.final_y = sets.last_projection.factors
    trace.wall_time = time.perf_counter() - t0
    return trace


# ---------------------------------------------------------------------------
# trace serialization
# ---------------------------------------------------------------------------

_TRACE_COLUMNS = "k,e_omega,L,d_k,ell_bar,cost,q_value,forced"


def write_trace_csv(path, trace: SolverTrace) -> None:
    """Config echo as '#'-comments, then one row per iteration.  d_k is
    sqrt(max(0, ||step||^2 - q_value)); q_value is 0 for apm/rapm rows, and
    L is left empty unless the run recorded it."""
    cfg = trace.config
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# variant = {cfg.variant}\n")
        fh.write(f"# rank = {cfg.rank}\n")
        fh.write(f"# lam = {cfg.lam!r}\n")
        fh.write(f"# mu = {cfg.mu!r}\n")
        fh.write(f"# zeta = {cfg.zeta!r}\n")
        fh.write(f"# gamma = {cfg.gamma!r}\n")
        fh.write(f"# max_iter = {cfg.max_iter}\n")
        fh.write(f"# ritz_tol_multiplier = {cfg.ritz_tol_multiplier!r}\n")
        fh.write(f"# ell_cap = {'' if cfg.ell_cap is None else cfg.ell_cap}\n")
        fh.write(f"# seed = {cfg.rng.seed}\n")
        fh.write(f"# stream = {cfg.rng.stream}\n")
        fh.write(f"# record_l = {int(cfg.record_l)}\n")
        fh.write("# d_k = sqrt(max(0, ||(dX,dY)||^2 - q_value));"
                 " q_value = 0 for apm/rapm\n")
        fh.write(_TRACE_COLUMNS + "\n")
        for rec in trace.records:
            l_txt = "" if rec.l_value is None else repr(rec.l_value)
            forced = 1 if (rec.cert is not None and rec.cert.forced) else 0
            fh.write(f"{rec.k},{rec.e_omega!r},{l_txt},{rec.d!r},"
                     f"{rec.ell_bar},{rec.cost},{rec.q_value!r},{forced}\n")


def read_trace_csv(path):
    """Returns (header dict, list of row dicts with typed fields)."""
    meta = {}
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                m = re.fullmatch(r"#\s*([A-Za-z_]+)\s*=\s*(.*)", line)
                if m:
                    meta[m.group(1)] = m.group(2).strip()
                continue
            if line == _TRACE_COLUMNS or not line:
                continue
            k, e_om, l_txt, d, ell_bar, cost, q_val, forced = line.split(",")
            rows.append({
                "k": int(k), "e_omega": float(e_om),
                "L": None if l_txt == "" else float(l_txt),
                "d_k": float(d), "ell_bar": int(ell_bar), "cost": int(cost),
                "q_value": float(q_val), "forced": bool(int(forced)),
            })
    return meta, rows
