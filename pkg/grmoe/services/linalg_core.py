"""Dense linear algebra: sign-fixed QR, Gaussian and sphere sampling, seeded streams.

All arrays are float64. Random state is always passed explicitly as a
`numpy.random.Generator`; `rng_stream(seed, label)` gives each purpose
(init, data, pairs, eval, mc, ...) its own reproducible sub-stream.
"""

from __future__ import annotations

import hashlib
from typing import Tuple

import numpy as np

from ..errors import InvalidArgument, NumericalError, RankDeficient

RngState = np.random.Generator

RANK_TOL = 1e-12


def _label_key(label: str) -> int:
    # stable across interpreter runs (unlike hash())
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(seed: int, label: str = "default") -> RngState:
    """Independent PCG64 stream for (seed, purpose label)."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label),))
    return np.random.Generator(np.random.PCG64(seq))


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgument(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError("matrix has non-finite entries")
    return arr


def qr_positive(m) -> Tuple[np.ndarray, np.ndarray]:
    """Reduced Householder QR with diag(R) >= 0.

    Returns Q (d x k, orthonormal columns) and R (k x k upper triangular).
    Raises RankDeficient when a diagonal entry of R (the residual column norm at
    that elimination step) falls below RANK_TOL.
    """
    a = as_matrix(m)
    d, k = a.shape
    if k > d:
        raise InvalidArgument(f"qr_positive needs k <= d, got {d}x{k}")
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.diag(r)
    small = np.abs(diag) < RANK_TOL
    if np.any(small):
        col = int(np.argmax(small))
        raise RankDeficient(f"column {col} has residual norm {abs(diag[col]):.3e}")
    signs = np.where(diag < 0.0, -1.0, 1.0)
    q = q * signs[np.newaxis, :]
    r = r * signs[:, np.newaxis]
    return q, r


def orthonormality_defect(m) -> float:
    """Frobenius norm of m^T m - I."""
    a = np.asarray(m, dtype=np.float64)
    k = a.shape[1]
    return float(np.linalg.norm(a.T @ a - np.eye(k), "fro"))


def gaussian_matrix(rows: int, cols: int, rng: RngState) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise InvalidArgument(
            f"gaussian_matrix needs rows, cols >= 1, got {rows}x{cols}"
        )
    return rng.standard_normal((rows, cols))


def sphere_uniform(d: int, rng: RngState) -> np.ndarray:
    """Uniform point on S^{d-1} (normalized Gaussian)."""
    if d < 1:
        raise InvalidArgument(f"sphere_uniform needs d >= 1, got {d}")
    while True:
        v = rng.standard_normal(d)
        norm = np.linalg.norm(v)
        if norm > 0.0:
            return v / norm


def sphere_uniform_batch(n: int, d: int, rng: RngState) -> np.ndarray:
    """n uniform points on S^{d-1}, one per row."""
    if n < 1 or d < 1:
        raise InvalidArgument(f"sphere_uniform_batch needs n, d >= 1, got n={n}, d={d}")
    v = rng.standard_normal((n, d))
    norms = np.linalg.norm(v, axis=1)
    zero = norms == 0.0
    # probability zero; redraw rows individually if it ever happens
    for i in np.flatnonzero(zero):
        v[i] = sphere_uniform(d, rng)
        norms[i] = 1.0
    return v / norms[:, np.newaxis]
