"""
Router training: routing cross-entropy + beta * subspace-overlap hinge.

Loss
- task_ce = mean_b -log g_{z_b}(x_b; alpha = 1)
- reg = sum over unordered pairs of max(0, ||U_e^T U_e'||_F^2 - rho0 * k)
- total = task_ce + beta * reg

Optimizer
- kappa: Adam on log kappa (stays positive)
- amortizer: plain Adam
- frames: Adam direction in ambient coordinates, tangent-projected, QR-retracted
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import log_softmax, softmax

from ..errors import Diverged, InvalidArgument, RankDeficient
from ..models.bank import Amortizer, ExpertBank, router_params_summary
from ..models.frame import Frame
from ..models.task import Batch, SyntheticTask
from ..models.training import (
    METRICS_COLUMNS,
    Gradients,
    LossParts,
    MetricsLog,
    MetricsRow,
    OptimState,
    RouterParams,
    TrainResult,
)
from ..observability import log_event
from ..schemas import TrainConfig
from .gating import amortizer_forward, init_amortizer
from .linalg_core import RngState, orthonormality_defect, qr_positive, rng_stream
from .manifold import haar_frame, max_pairwise_overlap, project_direction
from .report import write_csv
from .synthetic import bank_router, evaluate_batch, sample_batch

logger = logging.getLogger("grmoe.training")

PairSample = Tuple[np.ndarray, np.ndarray, float]


# ---------------------------------------------------------------------------
# Subspace regularizer
# ---------------------------------------------------------------------------


def all_pairs(n: int) -> PairSample:
    i, j = np.triu_indices(n, k=1)
    return i, j, 1.0


def sample_pairs(n: int, M: Optional[int], rng: RngState) -> PairSample:
    """M unordered pairs without replacement, weighted by total/M.

    None or M >= total gives every pair.
    """
    i, j, _ = all_pairs(n)
    total = i.size
    if M is None or M >= total:
        return i, j, 1.0
    if M < 1:
        raise InvalidArgument(f"pair count must be >= 1, got {M}")
    pick = np.sort(rng.choice(total, size=M, replace=False))
    return i[pick], j[pick], total / M


def _pair_excess(
    bases: np.ndarray, i: np.ndarray, j: np.ndarray, rho0: float
) -> np.ndarray:
    cross = np.einsum("pdk,pdl->pkl", bases[i], bases[j])
    return np.einsum("pkl,pkl->p", cross, cross) - rho0 * bases.shape[2]


def _reg_value(bases: np.ndarray, pairs: PairSample, rho0: float) -> float:
    i, j, scale = pairs
    if i.size == 0:
        return 0.0
    return float(scale * np.maximum(0.0, _pair_excess(bases, i, j, rho0)).sum())


def _reg_gradient(bases: np.ndarray, pairs: PairSample, rho0: float) -> np.ndarray:
    i, j, scale = pairs
    grad = np.zeros_like(bases)
    if i.size == 0:
        return grad
    excess = _pair_excess(bases, i, j, rho0)
    for p in np.flatnonzero(excess > 0.0):
        e, f = int(i[p]), int(j[p])
        ue, uf = bases[e], bases[f]
        grad[e] += 2.0 * uf @ (uf.T @ ue)
        grad[f] += 2.0 * ue @ (ue.T @ uf)
    return scale * grad


def subspace_reg(bank: ExpertBank, rho0: float) -> float:
    return _reg_value(bank.bases, all_pairs(bank.n_experts), rho0)


def subspace_reg_sampled(bank: ExpertBank, rho0: float, M: int, rng: RngState) -> float:
    if M < 1:
        raise InvalidArgument(f"pair count must be >= 1, got {M}")
    return _reg_value(bank.bases, sample_pairs(bank.n_experts, M, rng), rho0)


# ---------------------------------------------------------------------------
# Loss and gradients on raw arrays
# ---------------------------------------------------------------------------


def _forward(
    bases: np.ndarray,
    kappas: np.ndarray,
    amortizer: Optional[Amortizer],
    X: np.ndarray,
    alpha: float,
) -> Dict[str, object]:
    proj = np.einsum("bd,ndk->bnk", X, bases)
    a = np.einsum("bnk,bnk->bn", proj, proj)
    amort = amortizer_forward(amortizer, X) if amortizer is not None else None
    h = amort["h"] if amort is not None else np.ones_like(a)
    logits = alpha * h * kappas[np.newaxis, :] * a
    return {"proj": proj, "a": a, "amort": amort, "h": h, "logits": logits}


def _check_batch(X: np.ndarray, z: np.ndarray, n_experts: int) -> None:
    if X.shape[0] == 0:
        raise InvalidArgument("empty batch")
    if z.shape != (X.shape[0],):
        raise InvalidArgument(f"{z.shape} labels for {X.shape[0]} tokens")
    if z.min() < 0 or z.max() >= n_experts:
        raise InvalidArgument(f"labels must lie in [0, {n_experts})")


def objective(
    bases: np.ndarray,
    kappas: np.ndarray,
    amortizer: Optional[Amortizer],
    X: np.ndarray,
    z: np.ndarray,
    cfg: TrainConfig,
    pairs: Optional[PairSample] = None,
) -> LossParts:
    """Loss on unconstrained arrays (used directly by finite-difference checks)."""
    X = np.asarray(X, dtype=np.float64)
    z = np.asarray(z)
    _check_batch(X, z, bases.shape[0])
    fwd = _forward(bases, kappas, amortizer, X, cfg.alpha_train)
    logp = log_softmax(fwd["logits"], axis=1)
    task_ce = float(-logp[np.arange(X.shape[0]), z].mean())
    reg = _reg_value(bases, pairs or all_pairs(bases.shape[0]), cfg.rho0)
    return LossParts(total=task_ce + cfg.beta * reg, task_ce=task_ce, reg=reg)


def objective_gradients(
    bases: np.ndarray,
    kappas: np.ndarray,
    amortizer: Optional[Amortizer],
    X: np.ndarray,
    z: np.ndarray,
    cfg: TrainConfig,
    pairs: Optional[PairSample] = None,
) -> Gradients:
    X = np.asarray(X, dtype=np.float64)
    z = np.asarray(z)
    n_tokens, n_experts = X.shape[0], bases.shape[0]
    _check_batch(X, z, n_experts)
    pairs = pairs or all_pairs(n_experts)
    alpha = cfg.alpha_train
    fwd = _forward(bases, kappas, amortizer, X, alpha)
    a, h, logits = fwd["a"], fwd["h"], fwd["logits"]
    rows = np.arange(n_tokens)

    # dL/dlogits
    G = softmax(logits, axis=1)
    G[rows, z] -= 1.0
    G /= n_tokens

    d_kappas = np.sum(G * alpha * h * a, axis=0)
    coef = 2.0 * G * alpha * h * kappas[np.newaxis, :]
    d_frames = np.einsum("bd,bnk->ndk", X, coef[:, :, np.newaxis] * fwd["proj"])

    d_amort = None
    if amortizer is not None:
        amort = fwd["amort"]
        s, t = amort["s"], amort["t"]
        gh = G * alpha * kappas[np.newaxis, :] * a
        dz = n_experts * s * (gh - np.sum(gh * s, axis=1, keepdims=True))
        dpre = (dz @ amortizer.W2) * (1.0 - t * t)
        d_amort = {
            "W1": dpre.T @ X,
            "b1": dpre.sum(axis=0),
            "W2": dz.T @ t,
            "b2": dz.sum(axis=0),
        }

    logp = log_softmax(logits, axis=1)
    task_ce = float(-logp[rows, z].mean())
    reg = _reg_value(bases, pairs, cfg.rho0)
    if cfg.beta > 0.0:
        d_frames = d_frames + cfg.beta * _reg_gradient(bases, pairs, cfg.rho0)
    return Gradients(
        frames=d_frames,
        kappas=d_kappas,
        amortizer=d_amort,
        loss=LossParts(total=task_ce + cfg.beta * reg, task_ce=task_ce, reg=reg),
    )


def loss(
    bank: ExpertBank,
    amortizer: Optional[Amortizer],
    batch: Batch,
    cfg: TrainConfig,
    pairs: Optional[PairSample] = None,
) -> LossParts:
    return objective(bank.bases, bank.kappas, amortizer, batch.X, batch.z, cfg, pairs)


def gradients(
    bank: ExpertBank,
    amortizer: Optional[Amortizer],
    batch: Batch,
    cfg: TrainConfig,
    pairs: Optional[PairSample] = None,
) -> Gradients:
    return objective_gradients(
        bank.bases, bank.kappas, amortizer, batch.X, batch.z, cfg, pairs
    )


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def adam_update(
    g: np.ndarray,
    m: Optional[np.ndarray],
    v: Optional[np.ndarray],
    t: int,
    lr: float,
    cfg: TrainConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; returns (step, m, v)."""
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
    v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return -lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps), m, v


def _retract_all(
    bases: np.ndarray, step: np.ndarray, scale: float
) -> Tuple[Frame, ...]:
    frames = []
    for u, s in zip(bases, step):
        xi = project_direction(u, scale * s)
        if not np.any(xi):
            frames.append(Frame(u))
            continue
        q, _ = qr_positive(u + xi)
        frames.append(Frame(q))
    return tuple(frames)


def adam_step(
    params: RouterParams, grads: Gradients, state: OptimState, cfg: TrainConfig
) -> Tuple[RouterParams, OptimState]:
    bank, amortizer = params.bank, params.amortizer
    t = state.step + 1
    m, v = dict(state.m), dict(state.v)

    frame_step, m["frames"], v["frames"] = adam_update(
        grads.frames,
        state.m.get("frames"),
        state.v.get("frames"),
        t,
        cfg.lr_frames,
        cfg,
    )
    kappa_step, m["log_kappa"], v["log_kappa"] = adam_update(
        grads.kappas * bank.kappas,
        state.m.get("log_kappa"),
        state.v.get("log_kappa"),
        t,
        cfg.lr_kappa,
        cfg,
    )

    try:
        frames = _retract_all(bank.bases, frame_step, 1.0)
    except RankDeficient:
        try:
            frames = _retract_all(bank.bases, frame_step, 0.5)
            log_event(logger, "retraction_halved", level=logging.WARNING, step=t)
        except RankDeficient:
            log_event(logger, "step_skipped", level=logging.WARNING, step=t)
            return params, replace(state, skipped=state.skipped + 1)

    new_amortizer = amortizer
    if amortizer is not None and grads.amortizer is not None:
        updated = {}
        for name, value in amortizer.params().items():
            key = f"amortizer.{name}"
            step, m[key], v[key] = adam_update(
                grads.amortizer[name],
                state.m.get(key),
                state.v.get(key),
                t,
                cfg.lr_amortizer,
                cfg,
            )
            updated[name] = value + step
        new_amortizer = Amortizer.from_params(updated)

    new_bank = replace(bank, frames=frames, kappas=bank.kappas * np.exp(kappa_step))
    new_state = OptimState(m=m, v=v, step=t, skipped=state.skipped)
    return RouterParams(new_bank, new_amortizer), new_state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def init_router(
    n_experts: int,
    d: int,
    rank: int,
    cfg: TrainConfig,
    rng: RngState,
    amortized: bool = False,
) -> RouterParams:
    if not 1 <= rank <= d:
        raise InvalidArgument(f"router rank must lie in [1, {d}], got {rank}")
    frames = tuple(haar_frame(d, rank, rng) for _ in range(n_experts))
    bank = ExpertBank(frames=frames, kappas=np.full(n_experts, cfg.kappa_init))
    amortizer = None
    if amortized:
        amortizer = init_amortizer(d, n_experts, cfg.amortizer_hidden, rng)
    log_event(
        logger,
        "router_initialized",
        N=n_experts,
        d=d,
        k=rank,
        **router_params_summary(bank, amortizer),
    )
    return RouterParams(bank, amortizer)


def _record(step: int, params: RouterParams, eval_batch: Batch) -> MetricsRow:
    bank = params.bank
    router = bank_router(bank, 1.0, params.amortizer)
    metrics = evaluate_batch(router, eval_batch, bank.n_experts)
    return MetricsRow(
        step=step,
        acc=metrics.accuracy,
        cv=metrics.load_cv,
        entropy=metrics.mean_entropy,
        max_overlap=max_pairwise_overlap(bank.bases) / bank.k,
        collapsed=metrics.collapsed,
        kappa_min=float(bank.kappas.min()),
        kappa_max=float(bank.kappas.max()),
        defect=max(orthonormality_defect(f.basis) for f in bank.frames),
    )


def _finite(grads: Gradients) -> bool:
    parts = [grads.frames, grads.kappas]
    if grads.amortizer:
        parts.extend(grads.amortizer.values())
    finite = all(np.all(np.isfinite(p)) for p in parts)
    return bool(np.isfinite(grads.loss.total)) and finite


def train(
    task: SyntheticTask,
    cfg: TrainConfig,
    amortized: bool = False,
    seed: Optional[int] = None,
) -> TrainResult:
    seed = cfg.seed if seed is None else int(seed)
    rank = cfg.rank or task.k
    init_rng = rng_stream(seed, "init")
    data_rng = rng_stream(seed, "data")
    pair_rng = rng_stream(seed, "pairs")
    eval_batch = sample_batch(task, cfg.n_eval, rng_stream(seed, "eval"))

    params = init_router(task.N, task.d, rank, cfg, init_rng, amortized)
    state = OptimState()
    n_pairs = cfg.pair_count(task.N)
    log = MetricsLog()
    log.append(_record(0, params, eval_batch))

    for step in range(1, cfg.steps + 1):
        batch = sample_batch(task, cfg.batch_size, data_rng)
        pairs = sample_pairs(task.N, n_pairs, pair_rng)
        grads = gradients(params.bank, params.amortizer, batch, cfg, pairs)
        if not _finite(grads):
            log_event(
                logger, "train_diverged", level=logging.ERROR, step=step, seed=seed
            )
            raise Diverged(step)
        params, state = adam_step(params, grads, state, cfg)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            log.append(_record(step, params, eval_batch))

    last = log.last
    log_event(
        logger,
        "train_done",
        seed=seed,
        steps=cfg.steps,
        amortized=amortized,
        acc=last.acc,
        cv=last.cv,
        collapsed=last.collapsed,
        skipped=state.skipped,
    )
    return TrainResult(
        params=params,
        metrics=log,
        state=state,
        rng_state=data_rng.bit_generator.state,
    )


def metrics_frame(log: MetricsLog) -> pd.DataFrame:
    return pd.DataFrame(log.records(), columns=list(METRICS_COLUMNS))


def metrics_log_to_csv(log: MetricsLog, path: Union[str, Path]) -> Path:
    """Write the log as CSV under the METRICS_COLUMNS header."""
    return write_csv(metrics_frame(log), path)
