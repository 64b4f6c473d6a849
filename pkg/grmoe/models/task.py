from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from .frame import Frame


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """Mixture of N Gaussian components concentrated on calibrated rank-k subspaces."""

    N: int
    d: int
    k: int
    rho_star: float
    sigma2: float
    seed: int
    truth: Tuple[Frame, ...]
    blend: float = 0.0
    measured_overlap: float = 0.0
    bases: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        bases = np.stack([f.basis for f in self.truth])
        bases.setflags(write=False)
        object.__setattr__(self, "truth", tuple(self.truth))
        object.__setattr__(self, "bases", bases)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.N, 1.0 / self.N)

    def spec(self) -> Dict[str, Any]:
        return {
            "N": self.N,
            "d": self.d,
            "k": self.k,
            "rho_star": self.rho_star,
            "sigma2": self.sigma2,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class Batch:
    X: np.ndarray
    z: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return int(self.z.shape[0])


@dataclass
class EvalMetrics:
    accuracy: float
    load_cv: float
    mean_entropy: float
    collapsed: bool
    loads: np.ndarray = field(repr=False)
    hard_shares: np.ndarray = field(repr=False)

    def row(self) -> Dict[str, Any]:
        return {
            "acc": self.accuracy,
            "cv": self.load_cv,
            "entropy": self.mean_entropy,
            "collapsed": bool(self.collapsed),
        }
