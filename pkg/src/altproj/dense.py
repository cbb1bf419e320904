"""Dense matrix primitives: validation, Frobenius geometry, seeded Gaussian
draws, and the two on-disk formats (CSV text and the DMAT binary container).

Everything downstream works on plain 2-D float64 numpy arrays with finite
entries; the helpers here are the single place where that contract is
enforced and where bytes enter or leave the process.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DMAT_MAGIC = b"DMAT"
_DMAT_HEADER = struct.Struct("<4sIII")  # magic, rows, cols, reserved(0) -> 16 bytes


@dataclass(frozen=True)
class RngSpec:
    """Deterministic random-stream label: a (seed, stream) pair.

    The pair keys a counter-based Philox generator, so distinct streams drawn
    from the same seed are independent and reproducible regardless of draw
    order elsewhere in the program.  Normal variates come from numpy's
    ziggurat sampler, which is a fixed, documented algorithm for a given
    generator state.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        if self.seed < 0 or self.stream < 0:
            raise ValueError("seed and stream must be nonnegative")
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def derived(self, offset: int) -> "RngSpec":
        """A sibling stream at ``stream + offset`` (e.g. one per iteration)."""
        return RngSpec(self.seed, self.stream + offset)


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite (no NaN/Inf)")
    return m


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64), "fro"))


def frobenius_inner(a, b) -> float:
    """<A, B> = sum_ij A_ij B_ij.  Shapes must match exactly."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def matvec(a, x, transpose: bool = False) -> np.ndarray:
    """A @ x, or A.T @ x when ``transpose`` is set."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return (a.T if transpose else a) @ x


def gaussian_matrix(rows: int, cols: int, rng: RngSpec) -> np.ndarray:
    """i.i.d. standard normal matrix, entries drawn in row-major order."""
    if rows <= 0 or cols <= 0:
        raise ValueError("matrix dimensions must be positive")
    return rng.generator().standard_normal((rows, cols))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_matrix_csv(path, a) -> None:
    """Comma-separated rows; shortest round-trip float formatting."""
    m = as_matrix(a)
    with open(path, "w", encoding="ascii") as fh:
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            vals = [float(tok) for tok in line.split(",")]
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(f"ragged row at line {lineno}")
            rows.append(vals)
    if not rows:
        raise ValueError("empty matrix file")
    return as_matrix(rows)


def write_matrix_dmat(path, a) -> None:
    """Binary container: 16-byte header (magic ``DMAT``, u32 rows, u32 cols,
    u32 reserved zero, little-endian) followed by row-major float64 payload."""
    m = as_matrix(a)
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_DMAT_HEADER.pack(DMAT_MAGIC, rows, cols, 0))
        fh.write(np.ascontiguousarray(m).tobytes())


def read_matrix_dmat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_DMAT_HEADER.size)
        if len(header) != _DMAT_HEADER.size:
            raise ValueError("truncated DMAT header")
        magic, rows, cols, _reserved = _DMAT_HEADER.unpack(header)
        if magic != DMAT_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {DMAT_MAGIC!r}")
        payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise ValueError(f"payload is {len(payload)} bytes, expected {expected}")
    m = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
    return as_matrix(m)
