from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument, NumericalError

FRAME_TOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Frame:
    """Orthonormal d x k basis representing a point of Gr(k, d)."""

    basis: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.basis, dtype=np.float64)
        if b.ndim != 2:
            raise InvalidArgument(f"frame basis must be 2-D, got shape {b.shape}")
        d, k = b.shape
        if not 1 <= k <= d:
            raise InvalidArgument(f"frame needs 1 <= k <= d, got d={d}, k={k}")
        if not np.all(np.isfinite(b)):
            raise NumericalError("frame basis has non-finite entries")
        defect = float(np.linalg.norm(b.T @ b - np.eye(k), "fro"))
        if defect > FRAME_TOL:
            raise NumericalError(f"frame is not orthonormal (defect {defect:.3e})")
        object.__setattr__(self, "basis", _frozen(b))

    @property
    def d(self) -> int:
        return int(self.basis.shape[0])

    @property
    def k(self) -> int:
        return int(self.basis.shape[1])


@dataclass(frozen=True, eq=False)
class Tangent:
    """Stiefel tangent vector: sym(base^T direction) = 0."""

    base: Frame
    direction: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.direction, dtype=np.float64)
        if g.shape != self.base.basis.shape:
            raise InvalidArgument(
                f"direction shape {g.shape} does not match base {self.base.basis.shape}"
            )
        a = self.base.basis.T @ g
        asym = float(np.linalg.norm(0.5 * (a + a.T), "fro"))
        scale = max(1.0, float(np.linalg.norm(g, "fro")))
        if asym > FRAME_TOL * scale:
            raise NumericalError(f"direction is not tangent (sym part {asym:.3e})")
        object.__setattr__(self, "direction", _frozen(g))
