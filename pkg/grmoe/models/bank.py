from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from ..errors import DimensionMismatch, InvalidArgument
from .frame import Frame

ExpertFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ExpertFFN:
    """Two-layer tanh feed-forward map R^d -> R^d."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.W2 @ np.tanh(self.W1 @ x + self.b1) + self.b2


@dataclass(frozen=True, eq=False)
class ExpertBank:
    """N subspace frames with per-expert concentrations and (optional) expert maps."""

    frames: Tuple[Frame, ...]
    kappas: np.ndarray
    experts: Tuple[ExpertFn, ...] = ()
    bases: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise InvalidArgument(
                f"an expert bank needs N >= 2 experts, got {len(frames)}"
            )
        d, k = frames[0].d, frames[0].k
        if any((f.d, f.k) != (d, k) for f in frames):
            raise DimensionMismatch("all frames must share (d, k)")
        kappas = np.array(self.kappas, dtype=np.float64, copy=True).reshape(-1)
        if kappas.shape != (len(frames),):
            raise DimensionMismatch(
                f"{kappas.size} concentrations for {len(frames)} frames"
            )
        if not np.all(np.isfinite(kappas)) or np.any(kappas <= 0.0):
            raise InvalidArgument("concentrations must be finite and > 0")
        experts = tuple(self.experts)
        if experts and len(experts) != len(frames):
            raise DimensionMismatch(
                f"{len(experts)} expert maps for {len(frames)} frames"
            )
        kappas.setflags(write=False)
        bases = np.stack([f.basis for f in frames])
        bases.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "kappas", kappas)
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "bases", bases)

    @property
    def n_experts(self) -> int:
        return len(self.frames)

    @property
    def d(self) -> int:
        return self.frames[0].d

    @property
    def k(self) -> int:
        return self.frames[0].k


@dataclass(frozen=True, eq=False)
class Amortizer:
    """Two-layer tanh MLP producing per-token concentration multipliers.

    Weights: W1 (H x d), b1 (H), W2 (N x H), b2 (N).
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        h, d = np.shape(self.W1)
        n = np.shape(self.W2)[0]
        shapes = (np.shape(self.b1), np.shape(self.W2), np.shape(self.b2))
        if shapes != ((h,), (n, h), (n,)):
            raise DimensionMismatch("inconsistent amortizer weight shapes")

    @property
    def d(self) -> int:
        return int(np.shape(self.W1)[1])

    @property
    def hidden(self) -> int:
        return int(np.shape(self.W1)[0])

    @property
    def n_experts(self) -> int:
        return int(np.shape(self.W2)[0])

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    @classmethod
    def from_params(cls, params: dict) -> "Amortizer":
        names = ("W1", "b1", "W2", "b2")
        return cls(**{k: np.asarray(params[k], dtype=np.float64) for k in names})


@dataclass(frozen=True)
class RoutingDistribution:
    """Gate logits and their softmax over N experts."""

    logits: np.ndarray
    probs: np.ndarray

    @property
    def n_experts(self) -> int:
        return int(self.probs.shape[0])


def router_params_summary(bank: ExpertBank, amortizer: Optional[Amortizer]) -> dict:
    n_frame = bank.n_experts * bank.d * bank.k
    n_amort = 0
    if amortizer is not None:
        n_amort = sum(int(np.size(v)) for v in amortizer.params().values())
    return {"frames": n_frame, "kappas": bank.n_experts, "amortizer": n_amort}
