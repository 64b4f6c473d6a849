"""Entropy, top-k and load-balance bounds, and checkers against observed routing.

With tilde_kappa_e = kappa_e * a_e(x):

    log N - alpha * Delta  <=  H  <=  log N - alpha^2 / 2 * Gamma * exp(-alpha * delta)
    G_k  >=  1 - (N - k) * exp(-alpha * delta_k)
    CV   <=  (N - 1) * exp(-alpha * gamma * (kappa_min - rho * kappa_max))

Delta = max - mean, Gamma = population variance, delta = max - min, delta_k the
k-th gap of the descending sort.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Optional, Tuple

import numpy as np

from ..errors import AssumptionViolated, InvalidArgument
from ..models.bank import ExpertBank
from ..models.bounds import (
    BoundReport,
    CollapseHarnessResult,
    CollapseSeedResult,
    ConcentrationStats,
    SweepSummary,
)
from ..observability import log_event
from ..schemas import BoundsConfig, CollapseHarnessConfig
from .gating import entropy, route, route_batch, topk_mass
from .linalg_core import RngState, rng_stream
from .manifold import affinities, haar_frame
from .report import bootstrap_cv_stderr, coefficient_of_variation
from .synthetic import analytic_bank, make_task, sample_bounded_batch

logger = logging.getLogger("grmoe.bounds")

SLACK = 1e-9
MAX_RECORDED_FAILURES = 20
NEAR_TIE_JITTER = 1e-7


def stats_from_tilde(tilde_kappa) -> ConcentrationStats:
    t = np.array(tilde_kappa, dtype=np.float64).reshape(-1)
    if t.size < 1:
        raise InvalidArgument("no concentrations supplied")
    top, bottom = float(t.max()), float(t.min())
    desc = np.sort(t, kind="stable")[::-1]
    return ConcentrationStats(
        tilde_kappa=t,
        delta_kappa=max(0.0, top - float(t.mean())),
        gamma_kappa=float(t.var()),
        delta_range=top - bottom,
        gaps=desc[:-1] - desc[1:],
    )


def concentration_stats(bank: ExpertBank, x) -> ConcentrationStats:
    # the alpha = 1 logits are exactly kappa_e * a_e
    return stats_from_tilde(route(bank, x, 1.0).logits)


def entropy_bounds(
    stats: ConcentrationStats, alpha: float, N: int
) -> Tuple[float, float]:
    if alpha < 0.0:
        raise InvalidArgument(f"alpha must be >= 0, got {alpha}")
    log_n = math.log(N)
    lower = log_n - alpha * stats.delta_kappa
    damping = math.exp(-alpha * stats.delta_range)
    upper = log_n - 0.5 * alpha * alpha * stats.gamma_kappa * damping
    return lower, upper


def topk_mass_bound(
    stats: ConcentrationStats, alpha: float, k: int, N: int
) -> Tuple[float, float]:
    """(clamped, raw) lower bound on the top-k mass."""
    if not 1 <= k < N:
        raise InvalidArgument(f"k must lie in [1, {N - 1}], got {k}")
    raw = 1.0 - (N - k) * math.exp(-alpha * float(stats.gaps[k - 1]))
    return min(1.0, max(0.0, raw)), raw


def cv_bound(
    N: int,
    alpha: float,
    gamma: float,
    rho: float,
    kappa_min: float,
    kappa_max: float,
    gap_scale: float = 1.0,
) -> float:
    """(N - 1) * exp(-alpha * margin).

    `gap_scale` > 1 inflates the margin past validity.
    """
    margin = gamma * (kappa_min - rho * kappa_max)
    if not margin > 0.0:
        raise AssumptionViolated(
            f"gamma * (kappa_min - rho * kappa_max) = {margin:.6g} is not positive"
        )
    return (N - 1) * math.exp(-alpha * gap_scale * margin)


def check_instance(
    bank: ExpertBank,
    x,
    alpha: float,
    kmax: Optional[int] = None,
    gap_scale: float = 1.0,
) -> BoundReport:
    """Observed entropy / top-k masses against their bounds, flagged with 1e-9 slack.

    `gap_scale` multiplies the k-th gaps before the top-k bound is formed; values
    above 1 tighten it past validity and serve as a negative control.
    """
    rd = route(bank, x, alpha)
    n = bank.n_experts
    stats = concentration_stats(bank, x)
    if gap_scale != 1.0:
        stats = replace(stats, gaps=stats.gaps * gap_scale)
    h = entropy(rd)
    lower, upper = entropy_bounds(stats, alpha, n)
    report = BoundReport(
        alpha=float(alpha),
        observed_entropy=h,
        entropy_lower=lower,
        entropy_upper=upper,
        entropy_lower_ok=h >= lower - SLACK,
        entropy_upper_ok=h <= upper + SLACK,
    )
    top = n - 1 if kmax is None else min(kmax, n - 1)
    for k in range(1, top + 1):
        clamped, raw = topk_mass_bound(stats, alpha, k, n)
        observed = topk_mass(rd, k)
        report.observed_topk_mass[k] = observed
        report.topk_lower[k] = clamped
        report.topk_lower_raw[k] = raw
        report.topk_ok[k] = observed >= raw - SLACK
    return report


# ---------------------------------------------------------------------------
# Randomized sweep
# ---------------------------------------------------------------------------


def _random_instance(cfg: BoundsConfig, rng: RngState, near_tie: bool):
    n = int(rng.choice(cfg.n_choices))
    d = int(rng.choice(cfg.d_choices))
    k = int(rng.integers(1, d))
    lo, hi = cfg.kappa_range
    if near_tie:
        shared = haar_frame(d, k, rng)
        frames = [shared] * n
        base = rng.uniform(lo, hi)
        kappas = base + rng.uniform(-NEAR_TIE_JITTER, NEAR_TIE_JITTER, size=n)
        kappas = np.maximum(kappas, lo)
    else:
        frames = [haar_frame(d, k, rng) for _ in range(n)]
        kappas = rng.uniform(lo, hi, size=n)
    x = rng.standard_normal(d)
    alpha = 0.0 if cfg.alpha_zero_only else float(rng.uniform(*cfg.alpha_range))
    return ExpertBank(frames=tuple(frames), kappas=kappas), x, alpha


def run_bound_sweep(cfg: BoundsConfig) -> SweepSummary:
    summary = SweepSummary(
        min_slack={
            "entropy_lower": math.inf,
            "entropy_upper": math.inf,
            "topk": math.inf,
        }
    )
    for i in range(cfg.instances):
        rng = rng_stream(cfg.seed, f"bounds:{i}")
        near_tie = bool(rng.random() < cfg.near_tie_fraction)
        bank, x, alpha = _random_instance(cfg, rng, near_tie)
        report = check_instance(bank, x, alpha, cfg.kmax, gap_scale=cfg.fault_gap_scale)
        summary.instances += 1
        summary.near_tie_instances += int(near_tie)
        for family, slack in report.slacks().items():
            summary.min_slack[family] = min(summary.min_slack[family], slack)
        if not report.satisfied:
            summary.violations += 1
            if len(summary.failures) < MAX_RECORDED_FAILURES:
                summary.failures.append(
                    {
                        "instance": i,
                        "N": bank.n_experts,
                        "d": bank.d,
                        "k": bank.k,
                        "alpha": alpha,
                        **report.slacks(),
                    }
                )
    log_event(
        logger,
        "bound_sweep_done",
        level=logging.WARNING if summary.violations else logging.INFO,
        instances=summary.instances,
        violations=summary.violations,
        **{f"min_slack_{k}": v for k, v in summary.min_slack.items()},
    )
    return summary


# ---------------------------------------------------------------------------
# Load-balance harness on a bounded-overlap mixture
# ---------------------------------------------------------------------------


def _seed_result(cfg: CollapseHarnessConfig, seed: int) -> CollapseSeedResult:
    task = make_task(cfg.N, cfg.d, cfg.k, 0.0, cfg.sigma2, seed)
    bank = analytic_bank(task)
    if cfg.kappa_scales is not None:
        bank = replace(bank, kappas=bank.kappas * np.asarray(cfg.kappa_scales))
    batch = sample_bounded_batch(task, cfg.n_per_expert, rng_stream(seed, "collapse"))
    A = affinities(bank.bases, batch.X)
    rows = np.arange(len(batch))
    own = A[rows, batch.z]
    others = A.copy()
    others[rows, batch.z] = -np.inf
    gamma = float(own.min())
    rho = float(others.max() / gamma)
    kmin, kmax = float(bank.kappas.min()), float(bank.kappas.max())
    try:
        bound: Optional[float] = cv_bound(
            cfg.N, cfg.alpha, gamma, rho, kmin, kmax, gap_scale=cfg.fault_gap_scale
        )
    except AssumptionViolated:
        log_event(
            logger,
            "collapse_assumption_violated",
            level=logging.WARNING,
            seed=seed,
            gamma=gamma,
            rho=rho,
        )
        bound = None
    loads = route_batch(bank, batch.X, cfg.alpha).mean(axis=0)
    return CollapseSeedResult(
        seed=seed,
        gamma=gamma,
        rho=rho,
        kappa_min=kmin,
        kappa_max=kmax,
        bound=bound,
        cv=coefficient_of_variation(loads),
        loads=loads,
    )


def collapse_harness(cfg: CollapseHarnessConfig) -> CollapseHarnessResult:
    per_seed = [_seed_result(cfg, s) for s in sorted(cfg.seeds)]
    loads = np.stack([r.loads for r in per_seed])
    pooled_cv = coefficient_of_variation(loads.mean(axis=0))
    boot_rng = rng_stream(cfg.bootstrap_seed, "bootstrap")
    stderr = bootstrap_cv_stderr(loads, cfg.resamples, boot_rng)
    if any(r.bound is None for r in per_seed):
        return CollapseHarnessResult(
            per_seed, pooled_cv, stderr, None, False, assumption_violated=True
        )
    threshold = max(r.bound for r in per_seed) + 3.0 * stderr
    within = all(r.cv <= r.bound + 3.0 * stderr for r in per_seed)
    passed = pooled_cv <= threshold and within
    log_event(
        logger,
        "collapse_harness_done",
        level=logging.INFO if passed else logging.WARNING,
        pooled_cv=pooled_cv,
        stderr=stderr,
        threshold=threshold,
        passed=passed,
    )
    return CollapseHarnessResult(per_seed, pooled_cv, stderr, threshold, passed)
