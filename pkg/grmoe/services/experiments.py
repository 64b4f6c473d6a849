"""
Experiment drivers behind the CLI subcommands.

Each driver takes a validated config and returns pandas tables; writing files,
manifests and exit codes is left to the command layer. Seed-level jobs run on a
thread pool and are collected in submission order, so output order never depends
on scheduling.
"""

from __future__ import annotations

import contextvars
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from ..context.run_context import set_run_context
from ..errors import Diverged
from ..models.task import SyntheticTask
from ..models.training import MetricsLog
from ..observability import log_event
from ..schemas import (
    AblateConfig,
    AlphaSweepConfig,
    BenchConfig,
    TaskSpec,
    TrainConfig,
    TrainRunConfig,
    ZValidateConfig,
)
from .baselines import LinearGate, train_baseline
from .checkpoint import Checkpoint
from .gating import (
    effective_experts_rows,
    entropy_rows,
    kappa_profile,
    route_batch,
    temperature_route,
    topk_mass_rows,
)
from .linalg_core import rng_stream
from .manifold import max_pairwise_overlap
from .normalizer import (
    ZQuery,
    z_montecarlo,
    z_saddlepoint,
    z_saddlepoint_dlogz,
    z_series,
    z_series_dlogz,
)
from .report import aggregate_frame
from .synthetic import (
    Router,
    analytic_bank,
    bank_router,
    evaluate,
    kappa_specialization,
    make_task,
    sample_batch,
)
from .training import train

logger = logging.getLogger("grmoe.experiments")

BENCH_COLUMNS = ["method", "seed", "acc", "cv", "entropy", "collapsed", "diverged"]
ALPHA_COLUMNS = ["alpha", "entropy", "eff_experts", "acc", "top1_mass"]
TAU_COLUMNS = ["tau", "entropy", "eff_experts", "acc"]
ZVALIDATE_COLUMNS = [
    "kappa",
    "d",
    "k",
    "z_series",
    "z_saddle",
    "z_mc",
    "mc_stderr",
    "relerr_saddle",
    "relerr_grad",
    "relerr_mc",
    "regime",
    "ok",
]
ABLATE_COLUMNS = [
    "axis",
    "value",
    "seed",
    "acc",
    "cv",
    "entropy",
    "collapsed",
    "max_overlap",
    "diverged",
]

MONOTONE_SLACK = 1e-9
REGIME = (0.4, 4.2)
EXTENDED_MAX = 10.0

T = TypeVar("T")


def map_jobs(
    fn: Callable[..., T], jobs: Sequence[Tuple[Any, ...]], threads: int = 1
) -> List[T]:
    """Run fn(*job) for every job; results keep job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    # workers start from the caller's run context
    contexts = [contextvars.copy_context() for _ in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(
            pool.map(lambda pair: pair[0].run(fn, *pair[1]), zip(contexts, jobs))
        )


def resolve_task(spec: TaskSpec, seed: int) -> SyntheticTask:
    task_seed = spec.seed if spec.seed is not None else seed
    return make_task(spec.N, spec.d, spec.k, spec.rho_star, spec.sigma2, task_seed)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass
class FitOutcome:
    router: Optional[Router]
    metrics: Optional[MetricsLog] = None
    max_overlap: float = float("nan")
    diverged_at: Optional[int] = None


def fit_method(
    method: str, task: SyntheticTask, cfg: TrainConfig, seed: int
) -> FitOutcome:
    try:
        if method in ("grmoe", "grmoe_amortized"):
            result = train(task, cfg, amortized=method == "grmoe_amortized", seed=seed)
            bank = result.params.bank
            return FitOutcome(
                router=bank_router(bank, 1.0, result.params.amortizer),
                metrics=result.metrics,
                max_overlap=max_pairwise_overlap(bank.bases) / bank.k,
            )
        if method == "analytic":
            # ground-truth frames at the likelihood-ratio concentration
            bank = analytic_bank(task)
            return FitOutcome(
                router=bank_router(bank),
                max_overlap=max_pairwise_overlap(bank.bases) / bank.k,
            )
        return FitOutcome(router=train_baseline(method, task, cfg, seed))
    except Diverged as e:
        log_event(
            logger,
            "run_diverged",
            level=logging.WARNING,
            method=method,
            seed=seed,
            step=e.step,
        )
        return FitOutcome(router=None, diverged_at=e.step)


def _eval_row(
    method: str, seed: int, task: SyntheticTask, outcome: FitOutcome, n_eval: int
) -> Dict[str, Any]:
    row: Dict[str, Any] = {"method": method, "seed": seed}
    if outcome.router is None:
        row.update(
            {
                "acc": np.nan,
                "cv": np.nan,
                "entropy": np.nan,
                "collapsed": False,
                "diverged": True,
            }
        )
        return row
    m = evaluate(outcome.router, task, n_eval, rng_stream(seed, "bench-eval"))
    row.update({**m.row(), "diverged": False})
    return row


def _bench_job(method: str, seed: int, cfg: BenchConfig) -> Dict[str, Any]:
    set_run_context(seed=seed)
    task = resolve_task(cfg.task, seed)
    outcome = fit_method(method, task, cfg.train, seed)
    return _eval_row(method, seed, task, outcome, cfg.n_eval)


def run_bench(cfg: BenchConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Per (method, seed) rows and the per-method summary."""
    seeds = sorted(cfg.seeds)
    jobs = [(method, seed, cfg) for method in cfg.methods for seed in seeds]
    rows = map_jobs(_bench_job, jobs, cfg.threads)
    table = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    summary = aggregate_frame(table, by=["method"])
    order = {m: i for i, m in enumerate(cfg.methods)}
    summary = summary.sort_values("method", key=lambda s: s.map(order))
    summary = summary.reset_index(drop=True)
    return table, summary


# ---------------------------------------------------------------------------
# Single training run (checkpoint producer)
# ---------------------------------------------------------------------------


def train_run(cfg: TrainRunConfig) -> Tuple[Checkpoint, MetricsLog]:
    set_run_context(seed=cfg.seed)
    task_seed = cfg.task.seed if cfg.task.seed is not None else cfg.seed
    task_spec = cfg.task.model_copy(update={"seed": task_seed})
    task = resolve_task(task_spec, cfg.seed)
    result = train(
        task, cfg.train, amortized=cfg.method == "grmoe_amortized", seed=cfg.seed
    )
    baseline = None
    if cfg.with_baseline:
        baseline = train_baseline("softmax_dense", task, cfg.train, cfg.seed)
    ckpt = Checkpoint(
        method=cfg.method,
        task=task_spec,
        config=cfg.train,
        params=result.params,
        step=cfg.train.steps,
        rng_state=result.rng_state,
        baseline=baseline,
    )
    return ckpt, result.metrics


# ---------------------------------------------------------------------------
# Alpha sweep
# ---------------------------------------------------------------------------


@dataclass
class AlphaSweepResult:
    table: pd.DataFrame
    temperature: Optional[pd.DataFrame]
    kappa_report: Dict[str, Any]
    monotone: bool


def entropy_is_monotone(
    alphas: Sequence[float], entropies: Sequence[float], slack: float = MONOTONE_SLACK
) -> bool:
    order = np.argsort(np.asarray(alphas, dtype=np.float64), kind="stable")
    h = np.asarray(entropies, dtype=np.float64)[order]
    return bool(np.all(np.diff(h) <= slack))


def run_alpha_sweep(cfg: AlphaSweepConfig, ckpt: Checkpoint) -> AlphaSweepResult:
    task = resolve_task(ckpt.task, ckpt.config.seed)
    batch = sample_batch(task, cfg.n_eval, rng_stream(cfg.eval_seed, "sweep"))
    bank, amortizer = ckpt.params.bank, ckpt.params.amortizer

    rows = []
    for alpha in cfg.alphas:
        P = route_batch(bank, batch.X, alpha, amortizer)
        rows.append(
            {
                "alpha": float(alpha),
                "entropy": float(entropy_rows(P).mean()),
                "eff_experts": float(effective_experts_rows(P).mean()),
                "acc": float(np.mean(np.argmax(P, axis=1) == batch.z)),
                "top1_mass": float(topk_mass_rows(P, 1).mean()),
            }
        )
    table = pd.DataFrame(rows, columns=ALPHA_COLUMNS)
    monotone = entropy_is_monotone(table["alpha"], table["entropy"])

    temperature = None
    if isinstance(ckpt.baseline, LinearGate):
        logits = ckpt.baseline.logits(batch.X)
        trows = []
        for tau in cfg.taus:
            P = temperature_route(logits, tau)
            trows.append(
                {
                    "tau": float(tau),
                    "entropy": float(entropy_rows(P).mean()),
                    "eff_experts": float(effective_experts_rows(P).mean()),
                    "acc": float(np.mean(np.argmax(P, axis=1) == batch.z)),
                }
            )
        temperature = pd.DataFrame(trows, columns=TAU_COLUMNS)

    report = {**kappa_profile(bank), **kappa_specialization(bank, batch)}
    log_event(logger, "alpha_sweep_done", points=len(rows), monotone=monotone)
    return AlphaSweepResult(
        table=table, temperature=temperature, kappa_report=report, monotone=monotone
    )


# ---------------------------------------------------------------------------
# Normalizer validation
# ---------------------------------------------------------------------------


def _regime(kappa: float) -> str:
    if kappa == 0.0:
        return "degenerate"
    if REGIME[0] <= kappa <= REGIME[1]:
        return "training"
    if REGIME[1] < kappa <= EXTENDED_MAX:
        return "extended"
    return "other"


def _relerr(approx: float, exact: float) -> float:
    if exact == 0.0:
        return abs(approx)
    return abs(approx - exact) / abs(exact)


def zvalidate_row(kappa: float, d: int, k: int, cfg: ZValidateConfig) -> Dict[str, Any]:
    q = ZQuery(float(kappa), int(d), int(k))
    zs = z_series(q)
    zsp = z_saddlepoint(q, order=cfg.order)
    grad_series = z_series_dlogz(q)
    grad_saddle = z_saddlepoint_dlogz(q, order=cfg.order)
    if cfg.mc_samples > 0:
        rng = rng_stream(cfg.seed, f"mc:{kappa}:{d}:{k}")
        z_mc, stderr = z_montecarlo(q, cfg.mc_samples, rng)
        relerr_mc = _relerr(z_mc, zs)
    else:
        z_mc, stderr, relerr_mc = math.nan, math.nan, math.nan
    regime = _regime(q.kappa)
    rel = _relerr(zsp, zs)
    if regime == "training":
        ok = rel <= cfg.tol_regime
    elif regime == "extended":
        ok = rel <= cfg.tol_extended
    else:
        ok = regime == "other" or rel <= 1e-10
    return {
        "kappa": q.kappa,
        "d": q.d,
        "k": q.k,
        "z_series": zs,
        "z_saddle": zsp,
        "z_mc": z_mc,
        "mc_stderr": stderr,
        "relerr_saddle": rel,
        "relerr_grad": _relerr(grad_saddle, grad_series),
        "relerr_mc": relerr_mc,
        "regime": regime,
        "ok": bool(ok),
    }


def zvalidate_violations(table: pd.DataFrame) -> int:
    """Failed rows in the training regime or at kappa = 0.

    Extended-regime rows are flagged but not counted.
    """
    gated = table["regime"].isin(["training", "degenerate"])
    return int((gated & ~table["ok"].astype(bool)).sum())


def run_zvalidate(cfg: ZValidateConfig) -> pd.DataFrame:
    rows = [
        zvalidate_row(kappa, d, k, cfg) for d, k in cfg.dims for kappa in cfg.kappas
    ]
    table = pd.DataFrame(rows, columns=ZVALIDATE_COLUMNS)
    log_event(
        logger, "zvalidate_done", rows=len(rows), failures=int((~table["ok"]).sum())
    )
    return table


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


def _ablate_job(value: Any, seed: int, cfg: AblateConfig) -> Dict[str, Any]:
    set_run_context(seed=seed)
    task = resolve_task(cfg.task, seed)
    outcome = fit_method(cfg.method, task, cfg.train_for(value), seed)
    row = _eval_row(cfg.method, seed, task, outcome, cfg.n_eval)
    row.pop("method")
    return {
        "axis": cfg.which,
        "value": str(value),
        "max_overlap": outcome.max_overlap,
        **row,
    }


def run_ablation(cfg: AblateConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    values = cfg.axis_values()
    seeds = sorted(cfg.seeds)
    jobs = [(value, seed, cfg) for value in values for seed in seeds]
    rows = map_jobs(_ablate_job, jobs, cfg.threads)
    table = pd.DataFrame(rows, columns=ABLATE_COLUMNS)
    summary = aggregate_frame(table, by=["value"])
    overlap = table.groupby("value", sort=True)["max_overlap"].mean()
    overlap = overlap.rename("max_overlap_mean")
    summary = summary.merge(overlap, left_on="value", right_index=True, how="left")
    order = {str(v): i for i, v in enumerate(values)}
    summary = summary.sort_values("value", key=lambda s: s.map(order))
    summary = summary.reset_index(drop=True)
    summary.insert(0, "axis", cfg.which)
    return table, summary
