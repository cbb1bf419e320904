"""Projections onto the constraint sets, exact and certified-inexact.

Two matrix sets appear throughout: the affine set of matrices agreeing with
the observed entries on a mask, and the (nonconvex) set of matrices of rank
at most r.  The mask projection is exact and cheap; the rank projection is
where all the work lives.  ``inexact_project_rank`` grows a Krylov subspace
one step at a time and stops as soon as two computable inequalities certify
that the current truncation is an acceptable inexact projection — without
ever forming a dense residual.  A 1-D interval-union set is also provided
for the scalar model problem.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .dense import RngSpec, as_matrix
from .lanczos import (
    TruncatedFactors,
    assemble_truncated,
    bidiag_step,
    init_bidiag,
    residual_norms,
    small_svd,
)

# Relative gap under which sigma_r and sigma_{r+1} are treated as tied (the
# error amplification factor kappa is undefined at an exact tie).
TIE_REL_TOL = 1e-12

# Roundoff slack, relative to ||y_prev - y_reg||^2, allowed in the first
# acceptance inequality; keeps exact-arithmetic acceptances from being
# rejected by cancellation noise in the omega recurrence.
_TEST1_REL_SLACK = 1e-12

_DENSE_ORACLE_DIM = 64  # below this, exact rank projection goes through LAPACK


@dataclass(frozen=True)
class ObservedData:
    """Observed entries of an n1 x n2 matrix: sorted unique (i, j) -> value."""

    n1: int
    n2: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    @classmethod
    def from_entries(cls, n1, n2, rows, cols, values) -> "ObservedData":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, values must be equal-length 1-D")
        if rows.size == 0:
            raise ValueError("at least one observed entry is required")
        if rows.min() < 0 or rows.max() >= n1 or cols.min() < 0 or cols.max() >= n2:
            raise ValueError("index out of bounds")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        flat = rows * n2 + cols
        if np.any(np.diff(flat) == 0):
            raise ValueError("duplicate observed index")
        return cls(n1=n1, n2=n2, rows=rows, cols=cols, values=values)

    @classmethod
    def from_matrix(cls, m, rows, cols) -> "ObservedData":
        m = as_matrix(m)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return cls.from_entries(m.shape[0], m.shape[1], rows, cols, m[rows, cols])

    @property
    def count(self) -> int:
        return int(self.values.size)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def write_observed_csv(path, obs: ObservedData) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# rows={obs.n1} cols={obs.n2}\n")
        fh.write("i,j,value\n")
        for i, j, v in zip(obs.rows, obs.cols, obs.values):
            fh.write(f"{i},{j},{float(v)!r}\n")


def read_observed_csv(path) -> ObservedData:
    with open(path, "r", encoding="ascii") as fh:
        head = fh.readline().strip()
        m = re.fullmatch(r"#\s*rows=(\d+)\s+cols=(\d+)", head)
        if not m:
            raise ValueError(f"expected '# rows=<n1> cols=<n2>' first line, got {head!r}")
        n1, n2 = int(m.group(1)), int(m.group(2))
        header = fh.readline().strip()
        if header != "i,j,value":
            raise ValueError(f"expected 'i,j,value' header, got {header!r}")
        rows, cols, vals = [], [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i, j, v = line.split(",")
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
    return ObservedData.from_entries(n1, n2, rows, cols, vals)


def project_affine_mask(z, obs: ObservedData) -> np.ndarray:
    """Nearest matrix agreeing with the observations: overwrite on the mask."""
    z = as_matrix(z)
    if z.shape != (obs.n1, obs.n2):
        raise ValueError(f"shape {z.shape} does not match observations "
                         f"({obs.n1}, {obs.n2})")
    out = z.copy()
    out[obs.rows, obs.cols] = obs.values
    return out


def project_rank_exact(g, r: int, rng: RngSpec | None = None) -> TruncatedFactors:
    """Best rank-<=r approximation (truncated SVD).

    Small matrices (min dimension below 64) go through a dense LAPACK SVD —
    this is the oracle path the tests compare against.  Larger ones run the
    bidiagonalization to breakdown or full dimension, which yields the exact
    SVD as well.  A singular-value tie at position r makes the minimizer
    non-unique; the LAPACK/Ritz ordering is returned deterministically.
    """
    g = as_matrix(g)
    if r < 1:
        raise ValueError("rank must be >= 1")
    if min(g.shape) < _DENSE_ORACLE_DIM:
        u, s, vh = np.linalg.svd(g, full_matrices=False)
        k = min(r, s.size)
        return TruncatedFactors(u=u[:, :k], sigmas=s[:k].copy(), v=vh[:k].T,
                                rank_bound=r)
    state = init_bidiag(g, rng if rng is not None else RngSpec(0, 0))
    while not state.breakdown and state.ell < state.min_dim:
        bidiag_step(state)
    if state.ell == 0:
        return _empty_factors(g.shape, r)
    svd = small_svd(state.alphas, state.betas)
    return assemble_truncated(state, svd, min(r, state.ell))


def kappa(sigma_r: float, sigma_r1: float, gamma: float) -> float:
    """Amplification factor turning the Krylov residual into a distance bound
    to the exact rank-r projection:

        kappa = 2/(1-gamma) * ((1-gamma) sigma_r + gamma sigma_{r+1})
                            / (sigma_r - sigma_{r+1})    >= 2.

    Callers must guard the tie sigma_r == sigma_{r+1} (division by zero).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie strictly in (0, 1)")
    if sigma_r < sigma_r1 or sigma_r1 < 0.0:
        raise ValueError("need sigma_r >= sigma_{r+1} >= 0")
    if sigma_r == sigma_r1:
        raise ValueError("kappa is undefined at a singular-value tie")
    return (2.0 / (1.0 - gamma)) * ((1.0 - gamma) * sigma_r + gamma * sigma_r1) \
        / (sigma_r - sigma_r1)


@dataclass(frozen=True)
class InexactCertificate:
    """Audit record for one certified (or forced) inexact rank projection.

    ``dist_w_sq`` is ||w - y_reg||^2 for the returned point w, ``c`` the sum
    of squared discarded Ritz values, ``a`` the distance bound to the exact
    projection (0 on the exact branch), and ``q_value`` the regularized
    improvement functional at w (nonpositive whenever the acceptance tests
    passed).  ``forced`` marks a return at the dimension cap without both
    tests holding; such a record is reported, never silently dropped.
    """

    ell_bar: int
    c: float
    a: float | None
    kappa: float | None
    q_value: float
    dist_w_sq: float
    dist_prev_sq: float
    zeta: float
    gamma: float
    mu: float
    forced: bool

    def bound_rhs(self) -> float:
        """sqrt(-(1-zeta)/zeta * q_value), the certified distance radius."""
        if self.zeta >= 1.0:
            return 0.0
        return float(np.sqrt(max(0.0, -(1.0 - self.zeta) / self.zeta * self.q_value)))


def _empty_factors(shape, r: int) -> TruncatedFactors:
    return TruncatedFactors(u=np.zeros((shape[0], 0)), sigmas=np.zeros(0),
                            v=np.zeros((shape[1], 0)), rank_bound=r)


def inexact_project_rank(y_reg, y_prev, r: int, mu: float, zeta: float,
                         gamma: float, rng: RngSpec,
                         ell_cap: int | None = None):
    """Certified inexact projection of ``y_reg`` onto the rank-<=r set.

    Runs r bidiagonalization steps unconditionally (the second test needs
    sigma~_{r+1}), then checks, at every further step ell, the two
    inequalities

        (1)  ||w - y_reg||^2 <= zeta*c + (1-zeta)*||y_prev - y_reg||^2
        (2)  a <= sqrt(-(1-zeta)/zeta * Q(w)),   a = kappa * ||y_reg - G_ell||

    on the current truncation w of the Krylov approximant.  Both sides are
    available in O(ell) per step from the omega recurrence and the small SVD.
    Acceptance returns (factors, certificate); breakdown or a full-dimension
    subspace is the exact branch (a = 0).  Hitting ``ell_cap`` without both
    tests holding returns the current truncation flagged ``forced=True``.

    zeta = 1 makes the right side of (2) zero, so acceptance then happens
    only on the exact branch and the result equals the exact projection.

    Parameters
    ----------
    y_reg : target matrix to project.
    y_prev : previous iterate (the anchor of the improvement functional Q).
    r : rank bound, >= 1.
    mu : regularization weight of Q, > 0.
    zeta : inexactness level in (0, 1].
    gamma : tie-guard parameter of kappa, in (0, 1).
    rng : stream for the Krylov start vector.
    ell_cap : optional hard cap on the subspace dimension
        (default min(n1, n2)).
    """
    if not 0.0 < zeta <= 1.0:
        raise ValueError("zeta must lie in (0, 1]")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie strictly in (0, 1)")
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    if r < 1:
        raise ValueError("rank must be >= 1")
    y_reg = as_matrix(y_reg)
    y_prev = as_matrix(y_prev)
    if y_prev.shape != y_reg.shape:
        raise ValueError("y_prev shape must match y_reg")
    min_dim = min(y_reg.shape)
    cap = min_dim if ell_cap is None else min(int(ell_cap), min_dim)
    if cap < 1:
        raise ValueError("ell_cap must be >= 1")

    diff = y_prev - y_reg
    dist_prev_sq = float(np.sum(diff * diff))
    q_scale = (1.0 + mu) / (2.0 * mu)

    def _cert(ell_bar, c, a, kap, dist_w_sq, forced):
        return InexactCertificate(
            ell_bar=ell_bar, c=c, a=a, kappa=kap,
            q_value=q_scale * (dist_w_sq - dist_prev_sq),
            dist_w_sq=dist_w_sq, dist_prev_sq=dist_prev_sq,
            zeta=zeta, gamma=gamma, mu=mu, forced=forced)

    norm_sq = float(np.sum(y_reg * y_reg))
    if norm_sq == 0.0:
        # zero target: the zero matrix is its own exact rank-r projection
        return _empty_factors(y_reg.shape, r), _cert(0, 0.0, 0.0, None, 0.0, False)

    state = init_bidiag(y_reg, rng)
    while state.ell < min(r, cap) and not state.breakdown:
        bidiag_step(state)

    while True:
        exact_branch = state.breakdown or state.ell >= min_dim
        exhausted = exact_branch or state.ell >= cap
        if state.ell >= r + 1 or exhausted:
            if state.ell == 0:
                # first step broke down: target is numerically zero
                return _empty_factors(y_reg.shape, r), \
                    _cert(0, 0.0, 0.0, None, norm_sq, False)
            svd = small_svd(state.alphas, state.betas)
            r_eff = min(r, state.ell)
            omega_g, omega_w = residual_norms(state, svd, r_eff)
            c = omega_w - omega_g
            test1 = omega_w <= zeta * c + (1.0 - zeta) * dist_prev_sq \
                + _TEST1_REL_SLACK * dist_prev_sq
            if exact_branch:
                a_val, kap, test2 = 0.0, None, True
            elif svd.sigmas.size < r + 1:
                a_val, kap, test2 = None, None, False
            else:
                s_r, s_r1 = float(svd.sigmas[r - 1]), float(svd.sigmas[r])
                if s_r - s_r1 <= TIE_REL_TOL * float(svd.sigmas[0]):
                    # kappa undefined at the tie: fail the test, keep stepping
                    a_val, kap, test2 = None, None, False
                else:
                    kap = kappa(s_r, s_r1, gamma)
                    a_val = kap * float(np.sqrt(omega_g))
                    q_w = q_scale * (omega_w - dist_prev_sq)
                    rhs_sq = -(1.0 - zeta) / zeta * q_w if zeta < 1.0 else 0.0
                    test2 = rhs_sq >= 0.0 and a_val * a_val <= rhs_sq
            if (test1 and test2) or exhausted:
                w = assemble_truncated(state, svd, r_eff)
                return w, _cert(state.ell, c, a_val, kap, omega_w,
                                forced=not (test1 and test2))
        bidiag_step(state)


# ---------------------------------------------------------------------------
# 1-D interval-union set for the scalar model problem
# ---------------------------------------------------------------------------

class IntervalUnion:
    """Finite union of disjoint closed intervals on the real line.

    Arithmetic is kept in pure Python so exact types (fractions) survive.
    """

    def __init__(self, intervals):
        ivs = [(lo, hi) for lo, hi in intervals]
        if not ivs:
            raise ValueError("at least one interval is required")
        for lo, hi in ivs:
            if lo > hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
        ivs.sort()
        for (_, hi_a), (lo_b, _) in zip(ivs, ivs[1:]):
            if lo_b <= hi_a:
                raise ValueError("intervals must be disjoint")
        self.intervals = tuple(ivs)

    def contains(self, t) -> bool:
        return any(lo <= t <= hi for lo, hi in self.intervals)

    def __repr__(self):
        return "IntervalUnion(%s)" % ", ".join(f"[{lo}, {hi}]" for lo, hi in self.intervals)


def project_interval_union(t, u: IntervalUnion):
    """Nearest point of the union; an exact distance tie goes to the smaller
    candidate, so the result is single-valued."""
    best = None
    best_d = None
    for lo, hi in u.intervals:
        cand = lo if t < lo else (hi if t > hi else t)
        d = abs(t - cand)
        if best_d is None or d < best_d:
            best, best_d = cand, d
    return best
