"""Incremental Golub-Kahan bidiagonalization with full reorthogonalization,
plus the small-matrix SVD layer on top of it.

After ``ell`` steps on a target Y (n1 x n2) the state holds orthonormal
P = [p_1..p_{ell+1}] and Q = [q_1..q_ell] with

    Y @ Q = P @ B,    B lower bidiagonal, shape (ell+1, ell),
    B[i, i] = alpha_{i+1},  B[i+1, i] = beta_{i+2}   (0-based storage),

so G_ell = P @ B @ Q.T is the rank-(<= ell) Krylov approximant of Y.  The
squared residual ||Y - G_ell||_F^2 is tracked in O(1) per step via

    omega_ell = omega_{ell-1} - alpha_ell^2 - beta_{ell+1}^2,
    omega_0   = ||Y||_F^2,

which avoids ever forming G_ell densely.  Ritz singular values/vectors come
from the SVD of the small B, and a per-Ritz-value error bound is available
from the first scalar of the *next* step (the lookahead alpha), which is
cached so no matvec is wasted when the step is eventually taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dense import RngSpec, as_matrix


@dataclass
class SmallSVD:
    """Full SVD of the (ell+1) x ell bidiagonal factor B."""

    u: np.ndarray       # (ell+1, ell+1), orthonormal columns
    sigmas: np.ndarray  # (ell,), nonnegative, descending
    v: np.ndarray       # (ell, ell), right singular vectors as columns


@dataclass
class TruncatedFactors:
    """Rank-r factored matrix u @ diag(sigmas) @ v.T with orthonormal u, v."""

    u: np.ndarray       # (n1, k), k <= rank_bound
    sigmas: np.ndarray  # (k,), nonnegative, descending
    v: np.ndarray       # (n2, k)
    rank_bound: int

    def densify(self) -> np.ndarray:
        if self.sigmas.size == 0:
            return np.zeros((self.u.shape[0], self.v.shape[0]))
        return (self.u * self.sigmas) @ self.v.T


@dataclass
class BidiagState:
    target: np.ndarray
    ell: int = 0
    breakdown: bool = False
    omega: float = 0.0          # ||Y - G_ell||_F^2 by the recurrence above
    alphas: list = field(default_factory=list)   # alpha_1 .. alpha_ell
    betas: list = field(default_factory=list)    # beta_2 .. beta_{ell+1}
    p_mat: np.ndarray = None    # preallocated, columns 0..n_p-1 in use
    q_mat: np.ndarray = None
    n_p: int = 0
    n_q: int = 0
    target_norm: float = 0.0
    # lookahead cache: (ell it was computed at, alpha_{ell+1}, candidate q)
    _lookahead: tuple = None

    @property
    def min_dim(self) -> int:
        return min(self.target.shape)

    def breakdown_eps(self) -> float:
        return self.target_norm * np.sqrt(max(self.target.shape)) * np.finfo(np.float64).eps


def _reorth(v: np.ndarray, basis: np.ndarray, count: int) -> np.ndarray:
    # classical Gram-Schmidt against the active columns, with one re-pass
    if count == 0:
        return v
    b = basis[:, :count]
    for _ in range(2):
        v = v - b @ (b.T @ v)
    return v


def init_bidiag(y, rng: RngSpec | None = None, p1=None) -> BidiagState:
    """Start a bidiagonalization of ``y``.

    The start vector p_1 is a unit-norm Gaussian drawn from ``rng`` (the
    randomness protects against starting exactly inside a fixed singular
    subspace); tests may instead pass an explicit ``p1``.
    """
    y = as_matrix(y)
    n1, n2 = y.shape
    if p1 is None:
        if rng is None:
            raise ValueError("either rng or an explicit p1 is required")
        p1 = rng.generator().standard_normal(n1)
    p1 = np.asarray(p1, dtype=np.float64)
    nrm = np.linalg.norm(p1)
    if nrm == 0.0:
        raise ValueError("start vector must be nonzero")
    cap = min(n1, n2)
    state = BidiagState(target=y)
    state.p_mat = np.zeros((n1, cap + 1))
    state.q_mat = np.zeros((n2, cap))
    state.p_mat[:, 0] = p1 / nrm
    state.n_p = 1
    state.target_norm = float(np.linalg.norm(y, "fro"))
    state.omega = state.target_norm ** 2
    return state


def _next_alpha(state: BidiagState):
    """alpha_{ell+1} and its q candidate (one Y.T matvec; cached on state)."""
    if state._lookahead is not None and state._lookahead[0] == state.ell:
        return state._lookahead[1], state._lookahead[2]
    ell = state.ell
    p_new = state.p_mat[:, ell]
    u = state.target.T @ p_new
    if ell >= 1:
        u = u - state.betas[ell - 1] * state.q_mat[:, ell - 1]
    u = _reorth(u, state.q_mat, state.n_q)
    alpha = float(np.linalg.norm(u))
    qvec = u / alpha if alpha > 0.0 else u
    state._lookahead = (ell, alpha, qvec)
    return alpha, qvec


def bidiag_step(state: BidiagState) -> BidiagState:
    """Advance by one step: append q_{ell+1}, alpha_{ell+1}, and (barring
    breakdown) p_{ell+2}, beta_{ell+2}; update omega in O(1).

    A normalization coefficient at or below the breakdown threshold is
    treated as exact rank exhaustion: the flag is set, the offending vector
    is not appended, and omega is set to 0 (a random start makes the
    factorization exact at that point).
    """
    if state.breakdown:
        raise RuntimeError("cannot step after breakdown")
    if state.ell >= state.min_dim:
        raise RuntimeError("cannot step beyond min(n1, n2)")
    eps_bd = state.breakdown_eps()

    alpha, qvec = _next_alpha(state)
    state._lookahead = None
    if alpha <= eps_bd:
        state.breakdown = True
        state.omega = 0.0
        return state
    state.q_mat[:, state.n_q] = qvec
    state.n_q += 1
    state.alphas.append(alpha)

    v = state.target @ qvec - alpha * state.p_mat[:, state.ell]
    v = _reorth(v, state.p_mat, state.n_p)
    beta = float(np.linalg.norm(v))
    state.ell += 1
    if beta <= eps_bd or state.n_p >= state.target.shape[0]:
        state.betas.append(0.0)
        state.breakdown = True
        state.omega = 0.0
        return state
    state.p_mat[:, state.n_p] = v / beta
    state.n_p += 1
    state.betas.append(beta)
    state.omega -= alpha * alpha + beta * beta
    return state


def small_svd(alphas, betas) -> SmallSVD:
    """SVD of the lower-bidiagonal B built from the recurrence coefficients.

    ``alphas`` holds ell >= 1 diagonal values, ``betas`` the ell subdiagonal
    values (the last may be 0 after breakdown).  Backward-stable dense SVD;
    singular values returned descending.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    ell = alphas.size
    if ell < 1:
        raise ValueError("need at least one step before small_svd")
    if betas.size != ell:
        raise ValueError(f"expected {ell} betas, got {betas.size}")
    b = np.zeros((ell + 1, ell))
    idx = np.arange(ell)
    b[idx, idx] = alphas
    b[idx + 1, idx] = betas
    u, s, vh = np.linalg.svd(b, full_matrices=True)
    return SmallSVD(u=u, sigmas=s, v=vh.T)


def ritz_error_bound(state: BidiagState, svd: SmallSVD, j: int) -> float:
    """Upper bound on the distance from Ritz value sigma~_j to the nearest
    true singular value of the target: |alpha_{ell+1}| * |U_B[ell+1, j]|.

    Zero after breakdown or at full dimension (Ritz values exact there).
    """
    if not 1 <= j <= state.ell:
        raise ValueError(f"j must be in 1..{state.ell}, got {j}")
    if state.breakdown or state.ell >= state.min_dim:
        return 0.0
    alpha_next, _ = _next_alpha(state)
    return abs(alpha_next) * abs(float(svd.u[state.ell, j - 1]))


def refined_ritz_bounds(state: BidiagState, svd: SmallSVD) -> np.ndarray:
    """All ell Ritz error bounds, sharpened by the gap theorem.

    The raw bound is the residual norm of the Ritz pair in the augmented
    symmetric problem; whenever a Ritz value is separated from both
    neighbours by more than that residual, the classical gap theorem
    improves the bound quadratically to residual^2 / gap.  This is the
    sharpening classic bidiagonal SVD codes apply before their convergence
    test, and it is what lets the stopping test fire as soon as a leading
    value has actually converged instead of one step later.
    """
    ell = state.ell
    if state.breakdown or ell >= state.min_dim:
        return np.zeros(ell)
    alpha_next, _ = _next_alpha(state)
    raw = abs(alpha_next) * np.abs(svd.u[ell, :ell])
    if ell < 2:
        return raw
    s = svd.sigmas
    gaps = np.full(ell, np.inf)
    gaps[1:] = s[:-1] - raw[:-1] - s[1:]
    gaps[:-1] = np.minimum(gaps[:-1], s[:-1] - s[1:] - raw[1:])
    out = raw.copy()
    wins = gaps > raw
    out[wins] = raw[wins] * (raw[wins] / gaps[wins])
    return out


def assemble_truncated(state: BidiagState, svd: SmallSVD, r: int) -> TruncatedFactors:
    """Lift the leading r Ritz triplets to the ambient space:
    W = P @ U_B[:, :r] * sigmas[:r] @ (Q @ V_B[:, :r]).T."""
    if not 1 <= r <= state.ell:
        raise ValueError(f"r must be in 1..{state.ell}, got {r}")
    # After a p-side breakdown the last row of B is zero, so U_B's leading
    # columns have zero last entry and the missing p_{ell+1} never enters.
    u = state.p_mat[:, :state.n_p] @ svd.u[:state.n_p, :r]
    v = state.q_mat[:, :state.n_q] @ svd.v[:, :r]
    return TruncatedFactors(u=u, sigmas=svd.sigmas[:r].copy(), v=v, rank_bound=r)


def residual_norms(state: BidiagState, svd: SmallSVD, r: int):
    """(||Y - G_ell||^2, ||Y - W_ell||^2) in O(ell) — no dense residual.

    The W residual adds the squared discarded Ritz values to omega; omega is
    clamped at 0 first, since cancellation in the recurrence can leave a tiny
    negative as the factorization becomes exact.
    """
    omega_g = max(0.0, state.omega)
    omega_w = omega_g + float(np.sum(svd.sigmas[r:] ** 2))
    return omega_g, omega_w
