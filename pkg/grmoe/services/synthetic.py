"""Controlled routing benchmark.

Ground-truth subspaces start as disjoint coordinate blocks B_e and are blended
toward a shared Haar frame C, U_e = qr(sqrt(1 - t) B_e + sqrt(t) C), with t found
by bisection so that the mean pairwise overlap / k hits rho_star. Tokens are
x = U_z w + sigma (I - U_z U_z^T) v with z uniform, w ~ N(0, I_k), v ~ N(0, I_d).
"""

from __future__ import annotations

import logging
import math
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy.stats import pearsonr

from ..errors import CalibrationFailure, InvalidArgument
from ..models.bank import ExpertBank
from ..models.frame import Frame
from ..models.task import Batch, EvalMetrics, SyntheticTask
from ..observability import log_event
from .gating import entropy_rows, route_batch
from .linalg_core import RngState, qr_positive, rng_stream, sphere_uniform_batch
from .manifold import coordinate_frame, haar_frame, pairwise_overlaps
from .report import coefficient_of_variation

logger = logging.getLogger("grmoe.synthetic")

CALIBRATION_BAND = 0.02
CALIBRATION_TARGET = 0.002
CALIBRATION_STEPS = 60
MONOTONE_TOL = 1e-6
COLLAPSE_SHARE = 0.01

Router = Callable[[np.ndarray, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Task construction
# ---------------------------------------------------------------------------


def _blend(blocks: np.ndarray, shared: np.ndarray, t: float) -> np.ndarray:
    mixed = math.sqrt(1.0 - t) * blocks + math.sqrt(t) * shared[np.newaxis, :, :]
    return np.stack([qr_positive(m)[0] for m in mixed])


def mean_normalized_overlap(bases: np.ndarray) -> float:
    n, _, k = bases.shape
    o = pairwise_overlaps(bases)
    iu = np.triu_indices(n, k=1)
    return float(o[iu].mean() / k)


def make_task(
    N: int, d: int, k: int, rho_star: float, sigma2: float, seed: int
) -> SyntheticTask:
    if N < 2 or k < 1 or N * k > d:
        raise InvalidArgument(
            f"need N >= 2, k >= 1 and N*k <= d, got N={N}, d={d}, k={k}"
        )
    if not 0.0 <= rho_star < 1.0:
        raise InvalidArgument(f"rho_star must lie in [0, 1), got {rho_star}")
    if sigma2 < 0.0:
        raise InvalidArgument(f"sigma2 must be >= 0, got {sigma2}")

    blocks = np.stack([coordinate_frame(d, k, offset=e * k).basis for e in range(N)])
    t, bases, measured = 0.0, blocks, 0.0
    if rho_star > 0.0:
        shared = haar_frame(d, k, rng_stream(seed, "task")).basis
        lo, hi = 0.0, 1.0
        visited = [(0.0, 0.0)]
        best: Optional[Tuple[float, float, np.ndarray]] = None
        for _ in range(CALIBRATION_STEPS):
            mid = 0.5 * (lo + hi)
            cand = _blend(blocks, shared, mid)
            m = mean_normalized_overlap(cand)
            visited.append((mid, m))
            if best is None or abs(m - rho_star) < abs(best[1] - rho_star):
                best = (mid, m, cand)
            if abs(m - rho_star) <= CALIBRATION_TARGET:
                break
            if m < rho_star:
                lo = mid
            else:
                hi = mid
        visited.sort()
        drops = [b[1] - a[1] for a, b in zip(visited, visited[1:])]
        if drops and min(drops) < -MONOTONE_TOL:
            raise CalibrationFailure("overlap is not monotone in the blend parameter")
        assert best is not None
        t, measured, bases = best
        if abs(measured - rho_star) > CALIBRATION_BAND:
            raise CalibrationFailure(
                f"overlap {measured:.4f} not within {CALIBRATION_BAND} of {rho_star} "
                f"after {CALIBRATION_STEPS} bisection steps"
            )

    log_event(
        logger,
        "task_calibrated",
        N=N,
        d=d,
        k=k,
        rho_star=rho_star,
        blend=t,
        measured=measured,
    )
    return SyntheticTask(
        N=N,
        d=d,
        k=k,
        rho_star=float(rho_star),
        sigma2=float(sigma2),
        seed=int(seed),
        truth=tuple(Frame(b) for b in bases),
        blend=float(t),
        measured_overlap=float(measured),
    )


def task_to_dict(task: SyntheticTask) -> Dict[str, Any]:
    return task.spec()


def task_from_dict(payload: Dict[str, Any]) -> SyntheticTask:
    """Regenerate a task from its spec; frames are not stored."""
    try:
        return make_task(
            int(payload["N"]),
            int(payload["d"]),
            int(payload["k"]),
            float(payload["rho_star"]),
            float(payload["sigma2"]),
            int(payload["seed"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidArgument):
            raise
        raise InvalidArgument(f"malformed task spec: {e}") from e


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _complement_part(bases: np.ndarray, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    U = bases[z]  # n x d x k
    return v - np.einsum("ndk,nk->nd", U, np.einsum("ndk,nd->nk", U, v))


def sample_batch(task: SyntheticTask, n: int, rng: RngState) -> Batch:
    if n < 1:
        raise InvalidArgument(f"batch size must be >= 1, got {n}")
    z = rng.integers(0, task.N, size=n)
    w = rng.standard_normal((n, task.k))
    v = rng.standard_normal((n, task.d))
    signal = np.einsum("ndk,nk->nd", task.bases[z], w)
    X = signal + math.sqrt(task.sigma2) * _complement_part(task.bases, z, v)
    return Batch(X=X, z=z, index=np.arange(n))


def sample_bounded_batch(
    task: SyntheticTask, n_per_expert: int, rng: RngState
) -> Batch:
    """Balanced mixture with bounded affinities.

    Signal lies on the radius-sqrt(k) sphere inside U_z; noise has energy exactly
    sigma2 * (d - k) in the complement, so a_z(x) = k for every sample.
    """
    if n_per_expert < 1:
        raise InvalidArgument(f"n_per_expert must be >= 1, got {n_per_expert}")
    n = task.N * n_per_expert
    z = np.repeat(np.arange(task.N), n_per_expert)
    w = math.sqrt(task.k) * sphere_uniform_batch(n, task.k, rng)
    X = np.einsum("ndk,nk->nd", task.bases[z], w)
    if task.d > task.k and task.sigma2 > 0.0:
        noise = _complement_part(task.bases, z, rng.standard_normal((n, task.d)))
        norms = np.linalg.norm(noise, axis=1)
        scale = math.sqrt(task.sigma2 * (task.d - task.k)) / norms
        X = X + noise * scale[:, np.newaxis]
    return Batch(X=X, z=z, index=np.arange(n))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_batch(router: Router, batch: Batch, n_experts: int) -> EvalMetrics:
    P = np.asarray(router(batch.X, batch.index), dtype=np.float64)
    if P.shape != (len(batch), n_experts):
        expected = (len(batch), n_experts)
        raise InvalidArgument(f"router returned shape {P.shape}, expected {expected}")
    hard = np.argmax(P, axis=1)
    loads = P.mean(axis=0)
    shares = np.bincount(hard, minlength=n_experts) / len(batch)
    return EvalMetrics(
        accuracy=float(np.mean(hard == batch.z)),
        load_cv=coefficient_of_variation(loads),
        mean_entropy=float(entropy_rows(P).mean()),
        collapsed=bool(shares.min() < COLLAPSE_SHARE),
        loads=loads,
        hard_shares=shares,
    )


def evaluate(
    router: Router, task: SyntheticTask, n_eval: int, rng: RngState
) -> EvalMetrics:
    if n_eval < 100 * task.N:
        raise InvalidArgument(
            f"n_eval must be >= 100*N = {100 * task.N}, got {n_eval}"
        )
    return evaluate_batch(router, sample_batch(task, n_eval, rng), task.N)


def bank_router(bank: ExpertBank, alpha: float = 1.0, amortizer=None) -> Router:
    def _route(X: np.ndarray, index: np.ndarray) -> np.ndarray:
        return route_batch(bank, X, alpha, amortizer)

    return _route


# ---------------------------------------------------------------------------
# Reference routers and reports
# ---------------------------------------------------------------------------


def analytic_kappa(sigma2: float) -> float:
    """Likelihood-ratio concentration (1/sigma2 - 1) / 2 of the mixture."""
    if not 0.0 < sigma2 < 1.0:
        raise InvalidArgument(
            f"analytic concentration needs 0 < sigma2 < 1, got {sigma2}"
        )
    return 0.5 * (1.0 / sigma2 - 1.0)


def analytic_bank(task: SyntheticTask) -> ExpertBank:
    """Fixed-frame router on the ground truth; Bayes-optimal at alpha = 1."""
    kappa = analytic_kappa(task.sigma2)
    return ExpertBank(frames=task.truth, kappas=np.full(task.N, kappa))


def kappa_specialization(
    bank: ExpertBank, batch: Batch, alpha: float = 1.0
) -> Dict[str, float]:
    """Pearson r between kappa_e and the label entropy of tokens hard-routed to e."""
    hard = np.argmax(route_batch(bank, batch.X, alpha), axis=1)
    kappas, entropies = [], []
    for e in range(bank.n_experts):
        labels = batch.z[hard == e]
        if labels.size == 0:
            continue
        p = np.bincount(labels, minlength=bank.n_experts) / labels.size
        p = p[p > 0]
        kappas.append(float(bank.kappas[e]))
        entropies.append(float(-(p * np.log(p)).sum()))
    out = {
        "experts_used": float(len(kappas)),
        "pearson_r": float("nan"),
        "p_value": float("nan"),
    }
    if len(kappas) >= 2 and np.ptp(kappas) > 0.0 and np.ptp(entropies) > 0.0:
        r, p_value = pearsonr(kappas, entropies)
        out.update({"pearson_r": float(r), "p_value": float(p_value)})
    return out
