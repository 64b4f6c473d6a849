"""Grassmannian / Stiefel geometry on orthonormal frames.

Subspaces are represented by frames U (d x k, U^T U = I); every quantity here
depends only on span(U), so results are invariant to U -> U O for orthogonal O.
The d x d projector U U^T is never formed.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, Sequence

import numpy as np

from ..errors import DimensionMismatch, InvalidArgument, NumericalError, RankDeficient
from ..models.frame import Frame, Tangent
from ..observability import log_event
from .linalg_core import RngState, gaussian_matrix, orthonormality_defect, qr_positive

logger = logging.getLogger("grmoe.manifold")

RADICAND_TOL = 1e-12
LOAD_TOL = 1e-6
# below this the stored bits are kept as-is
REORTHO_TOL = 1e-12


def _same_shape(a: Frame, b: Frame) -> None:
    if a.d != b.d or a.k != b.k:
        raise DimensionMismatch(f"frames differ: ({a.d},{a.k}) vs ({b.d},{b.k})")


def _vector(x, d: int) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (d,):
        raise DimensionMismatch(f"expected vector of length {d}, got shape {v.shape}")
    return v


def haar_frame(d: int, k: int, rng: RngState) -> Frame:
    """Haar-distributed frame: sign-fixed QR of a d x k Gaussian matrix."""
    if not 1 <= k <= d:
        raise InvalidArgument(f"haar_frame needs 1 <= k <= d, got d={d}, k={k}")
    try:
        q, _ = qr_positive(gaussian_matrix(d, k, rng))
    except RankDeficient:
        log_event(logger, "haar_frame_retry", level=logging.WARNING, d=d, k=k)
        q, _ = qr_positive(gaussian_matrix(d, k, rng))
    return Frame(q)


def coordinate_frame(d: int, k: int, offset: int = 0) -> Frame:
    """Axis-aligned frame spanning coordinates offset .. offset+k-1."""
    if offset < 0 or offset + k > d:
        raise InvalidArgument(f"block [{offset}, {offset + k}) does not fit in d={d}")
    basis = np.zeros((d, k))
    basis[offset : offset + k, :] = np.eye(k)
    return Frame(basis)


def grassmann_distance(a: Frame, b: Frame) -> float:
    """Projection distance sqrt(k - ||a^T b||_F^2)."""
    _same_shape(a, b)
    cross = a.basis.T @ b.basis
    radicand = a.k - float(np.sum(cross * cross))
    if radicand < -RADICAND_TOL:
        raise NumericalError(f"negative radicand {radicand:.3e} in projection distance")
    # same quantity as the radicand, computed as a squared residual to keep
    # cancellation out of near-identical subspaces
    residual = b.basis - a.basis @ cross
    value = float(np.sqrt(np.sum(residual * residual)))
    if not np.isfinite(value):
        raise NumericalError("projection distance is not finite")
    return value


def affinity(f: Frame, x) -> float:
    """||f^T x||^2 at O(dk) cost."""
    v = _vector(x, f.d)
    if not np.all(np.isfinite(v)):
        raise NumericalError("input vector has non-finite entries")
    p = f.basis.T @ v
    return float(p @ p)


def stack_frames(frames: Sequence[Frame]) -> np.ndarray:
    """N x d x k array of frame bases."""
    if not frames:
        raise InvalidArgument("no frames to stack")
    d, k = frames[0].d, frames[0].k
    for f in frames[1:]:
        if (f.d, f.k) != (d, k):
            raise DimensionMismatch("frames do not share (d, k)")
    return np.stack([f.basis for f in frames])


def affinities(bases: np.ndarray, X: np.ndarray) -> np.ndarray:
    """B x N matrix of ||U_e^T x_b||^2 for stacked bases (N, d, k) and rows X (B, d)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bases.shape[1]:
        raise DimensionMismatch(
            f"batch shape {X.shape} does not match ambient dimension {bases.shape[1]}"
        )
    proj = np.einsum("bd,ndk->bnk", X, bases)
    return np.einsum("bnk,bnk->bn", proj, proj)


def overlap(a: Frame, b: Frame) -> float:
    """||a^T b||_F^2, in [0, min(a.k, b.k)]."""
    if a.d != b.d:
        raise DimensionMismatch(f"ambient dimensions differ: {a.d} vs {b.d}")
    cross = a.basis.T @ b.basis
    return float(np.sum(cross * cross))


def pairwise_overlaps(bases: np.ndarray) -> np.ndarray:
    """N x N matrix of ||U_i^T U_j||_F^2."""
    cross = np.einsum("idk,jdl->ijkl", bases, bases)
    return np.einsum("ijkl,ijkl->ij", cross, cross)


def max_pairwise_overlap(bases: np.ndarray) -> float:
    o = pairwise_overlaps(bases)
    iu = np.triu_indices(o.shape[0], k=1)
    return float(o[iu].max()) if iu[0].size else 0.0


def tangent_project(f: Frame, g) -> Tangent:
    """Euclidean-metric Stiefel projection g - f sym(f^T g)."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != f.basis.shape:
        raise DimensionMismatch(f"gradient shape {g.shape} vs frame {f.basis.shape}")
    a = f.basis.T @ g
    return Tangent(f, g - f.basis @ (0.5 * (a + a.T)))


def project_direction(basis: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Raw-array form of tangent_project used on stacked bases."""
    a = basis.T @ g
    return g - basis @ (0.5 * (a + a.T))


def retract(t: Tangent) -> Frame:
    """QR retraction; the zero step returns the base frame itself."""
    if not np.any(t.direction):
        return t.base
    q, _ = qr_positive(t.base.basis + t.direction)
    return Frame(q)


def orthocomplement(f: Frame) -> Frame:
    """Frame of rank d - k spanning the orthogonal complement of span(f)."""
    if f.k == f.d:
        raise InvalidArgument("full-rank frame has an empty complement")
    q, _ = np.linalg.qr(f.basis, mode="complete")
    comp = q[:, f.k :]
    # remove any residue along f from the completion
    comp = comp - f.basis @ (f.basis.T @ comp)
    comp, _ = qr_positive(comp)
    return Frame(comp)


def frame_to_dict(f: Frame) -> Dict[str, Any]:
    return {"d": f.d, "k": f.k, "basis": f.basis.reshape(-1).tolist()}


def frame_from_dict(payload: Dict[str, Any]) -> Frame:
    """Load a frame; defects <= 1e-6 are re-orthonormalized, larger ones rejected."""
    try:
        d, k = int(payload["d"]), int(payload["k"])
        basis = np.asarray(payload["basis"], dtype=np.float64).reshape(d, k)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidArgument(f"malformed frame payload: {e}") from e
    defect = orthonormality_defect(basis)
    if not np.isfinite(defect) or defect > LOAD_TOL:
        raise InvalidArgument(f"frame defect {defect:.3e} exceeds {LOAD_TOL:g}")
    if defect > REORTHO_TOL:
        basis, _ = qr_positive(basis)
    return Frame(basis)
