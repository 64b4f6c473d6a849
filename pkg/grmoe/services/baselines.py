"""Baseline routers for the synthetic benchmark.

- softmax_dense: g = softmax(W x), W trained by cross-entropy
- softmax_top1: the same gate dispatched hard (one-hot argmax) at evaluation
- vmf_gate: g = softmax(tau * U x) with unit rows u_e and a learned scale tau
- hash: fixed pseudo-random expert per sample index
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Union

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import Diverged, InvalidArgument
from ..models.task import SyntheticTask
from ..observability import log_event
from ..schemas import BASELINE_KINDS, TrainConfig
from .linalg_core import RngState, rng_stream, sphere_uniform_batch
from .synthetic import sample_batch
from .training import adam_update

logger = logging.getLogger("grmoe.baselines")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX = np.uint64(0xBF58476D1CE4E5B9)


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((idx.shape[0], n))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


@dataclass(frozen=True, eq=False)
class LinearGate:
    W: np.ndarray  # N x d
    hard: bool = False
    kind: str = "softmax_dense"

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W.T

    def __call__(self, X: np.ndarray, index: Optional[np.ndarray] = None) -> np.ndarray:
        logits = self.logits(X)
        if self.hard:
            return _one_hot(np.argmax(logits, axis=1), self.W.shape[0])
        return softmax(logits, axis=1)


@dataclass(frozen=True, eq=False)
class VmfGate:
    U: np.ndarray  # N x d, unit rows
    log_tau: float = 0.0
    kind: str = "vmf_gate"

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.tau * (X @ self.U.T)

    def __call__(self, X: np.ndarray, index: Optional[np.ndarray] = None) -> np.ndarray:
        return softmax(self.logits(X), axis=1)


@dataclass(frozen=True)
class HashRouter:
    n_experts: int
    key: int = 0
    kind: str = "hash"

    def assign(self, index: np.ndarray) -> np.ndarray:
        # splitmix-style integer mix; uint64 arithmetic wraps
        h = (np.asarray(index, dtype=np.uint64) + np.uint64(self.key)) * _GOLDEN
        h ^= h >> np.uint64(31)
        h *= _MIX
        h ^= h >> np.uint64(29)
        return (h % np.uint64(self.n_experts)).astype(np.int64)

    def __call__(self, X: np.ndarray, index: np.ndarray) -> np.ndarray:
        return _one_hot(self.assign(index), self.n_experts)


Baseline = Union[LinearGate, VmfGate, HashRouter]


def baseline_router(kind: str, d: int, n_experts: int, rng: RngState) -> Baseline:
    """Untrained router of the given kind."""
    if kind not in BASELINE_KINDS:
        raise InvalidArgument(
            f"unsupported baseline {kind!r}; expected one of {BASELINE_KINDS}"
        )
    if kind in ("softmax_dense", "softmax_top1"):
        W = rng.standard_normal((n_experts, d)) * (0.01 / math.sqrt(d))
        return LinearGate(W=W, hard=kind == "softmax_top1", kind=kind)
    if kind == "vmf_gate":
        return VmfGate(U=sphere_uniform_batch(n_experts, d, rng))
    return HashRouter(n_experts=n_experts, key=int(rng.integers(0, 2**31)))


def _normalize_rows(U: np.ndarray) -> np.ndarray:
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def _ce_grad(logits: np.ndarray, z: np.ndarray) -> np.ndarray:
    n = logits.shape[0]
    G = softmax(logits, axis=1)
    G[np.arange(n), z] -= 1.0
    return G / n


def baseline_step(
    router: Baseline,
    X: np.ndarray,
    z: np.ndarray,
    state: Dict[str, np.ndarray],
    t: int,
    cfg: TrainConfig,
) -> tuple:
    """One cross-entropy Adam step; returns (router, loss)."""
    if isinstance(router, HashRouter):
        return router, float("nan")
    logits = router.logits(X)
    ce = float(-log_softmax(logits, axis=1)[np.arange(X.shape[0]), z].mean())
    G = _ce_grad(logits, z)
    if isinstance(router, LinearGate):
        step, state["m.W"], state["v.W"] = adam_update(
            G.T @ X, state.get("m.W"), state.get("v.W"), t, cfg.lr_baseline, cfg
        )
        return replace(router, W=router.W + step), ce
    raw = X @ router.U.T
    dU = router.tau * (G.T @ X)
    dlog_tau = np.array([router.tau * float(np.sum(G * raw))])
    step_u, state["m.U"], state["v.U"] = adam_update(
        dU, state.get("m.U"), state.get("v.U"), t, cfg.lr_baseline, cfg
    )
    step_t, state["m.tau"], state["v.tau"] = adam_update(
        dlog_tau, state.get("m.tau"), state.get("v.tau"), t, cfg.lr_baseline, cfg
    )
    updated = replace(
        router,
        U=_normalize_rows(router.U + step_u),
        log_tau=router.log_tau + float(step_t[0]),
    )
    return updated, ce


def train_baseline(
    kind: str, task: SyntheticTask, cfg: TrainConfig, seed: Optional[int] = None
) -> Baseline:
    seed = cfg.seed if seed is None else int(seed)
    # top-1 shares the dense gate's streams, so it is the same gate dispatched hard
    family = "softmax" if kind in ("softmax_dense", "softmax_top1") else kind
    router = baseline_router(kind, task.d, task.N, rng_stream(seed, f"init:{family}"))
    if isinstance(router, HashRouter):
        return router
    data_rng = rng_stream(seed, f"data:{family}")
    state: Dict[str, np.ndarray] = {}
    ce = float("nan")
    for t in range(1, cfg.steps + 1):
        batch = sample_batch(task, cfg.batch_size, data_rng)
        router, ce = baseline_step(router, batch.X, batch.z, state, t, cfg)
        if not np.isfinite(ce):
            log_event(
                logger,
                "baseline_diverged",
                level=logging.ERROR,
                kind=kind,
                step=t,
                seed=seed,
            )
            raise Diverged(t)
    log_event(
        logger, "baseline_trained", kind=kind, seed=seed, steps=cfg.steps, final_ce=ce
    )
    return router


def baseline_to_dict(router: Baseline) -> Dict[str, object]:
    if isinstance(router, LinearGate):
        return {"kind": router.kind, "W": router.W.tolist()}
    if isinstance(router, VmfGate):
        return {"kind": router.kind, "U": router.U.tolist(), "log_tau": router.log_tau}
    return {"kind": router.kind, "n_experts": router.n_experts, "key": router.key}


def baseline_from_dict(payload: Dict[str, object]) -> Baseline:
    kind = payload.get("kind")
    try:
        if kind in ("softmax_dense", "softmax_top1"):
            W = np.asarray(payload["W"], dtype=np.float64)
            return LinearGate(W=W, hard=kind == "softmax_top1", kind=kind)
        if kind == "vmf_gate":
            U = np.asarray(payload["U"], dtype=np.float64)
            return VmfGate(U=U, log_tau=float(payload["log_tau"]))
        if kind == "hash":
            n_experts = int(payload["n_experts"])
            return HashRouter(n_experts=n_experts, key=int(payload["key"]))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidArgument(f"malformed baseline payload: {e}") from e
    raise InvalidArgument(f"unsupported baseline {kind!r}")
