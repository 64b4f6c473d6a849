"""Bingham normalizing constant for a scalar concentration on a rank-k subspace.

Z(kappa; d, k) = E_{x ~ Unif(S^{d-1})}[exp(kappa ||U^T x||^2)], so Z(0) = 1 and
Z = e^kappa when k = d. Three evaluators:

- z_series: confluent hypergeometric series 1F1(k/2; d/2; kappa), the exact reference
- z_saddlepoint: Kume-Wood saddle-point approximation for the spectrum
  {-kappa x k, 0 x (d - k)}, normalized by the same construction at kappa = 0
- z_montecarlo: sphere-uniform sample mean with its standard error
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq, newton
from scipy.special import logsumexp, softmax

from ..config import settings
from ..errors import ConvergenceFailure, InvalidArgument, OutOfDomain
from ..models.bank import ExpertBank, RoutingDistribution
from ..models.frame import Frame
from ..observability import log_event
from .linalg_core import RngState, sphere_uniform_batch
from .manifold import affinities, coordinate_frame

logger = logging.getLogger("grmoe.normalizer")

SERIES_MAX_KAPPA = 200.0
SERIES_RTOL = 1e-15
SERIES_MAX_TERMS = 100_000
SADDLE_MAX_ITER = 200
SADDLE_RESIDUAL_TOL = 1e-12
MC_MIN_SAMPLES = 1_000


@dataclass(frozen=True)
class ZQuery:
    kappa: float
    d: int
    k: int

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.d:
            raise InvalidArgument(
                f"ZQuery needs 1 <= k <= d, got d={self.d}, k={self.k}"
            )
        if not math.isfinite(self.kappa) or self.kappa < 0.0:
            raise InvalidArgument(f"kappa must be finite and >= 0, got {self.kappa}")


def _check_regime(q: ZQuery) -> None:
    if q.kappa > SERIES_MAX_KAPPA:
        raise OutOfDomain(
            f"kappa={q.kappa} exceeds the supported regime (<= {SERIES_MAX_KAPPA:g})"
        )


# ---------------------------------------------------------------------------
# Series reference
# ---------------------------------------------------------------------------


def _hyp1f1_series(a: float, b: float, x: float) -> float:
    term = 1.0
    total = 1.0
    for m in range(SERIES_MAX_TERMS):
        term *= (a + m) / (b + m) * x / (m + 1)
        total += term
        if term < SERIES_RTOL * total:
            return total
    raise ConvergenceFailure(f"1F1({a}; {b}; {x}) series did not converge")


def z_series(q: ZQuery) -> float:
    _check_regime(q)
    if q.kappa == 0.0:
        return 1.0
    return _hyp1f1_series(q.k / 2.0, q.d / 2.0, q.kappa)


def z_series_dlogz(q: ZQuery) -> float:
    """d log Z / d kappa: the mean affinity under the tilted measure."""
    _check_regime(q)
    a, b = q.k / 2.0, q.d / 2.0
    if q.kappa == 0.0:
        return a / b
    ratio = _hyp1f1_series(a + 1.0, b + 1.0, q.kappa) / _hyp1f1_series(a, b, q.kappa)
    return (a / b) * ratio


# ---------------------------------------------------------------------------
# Saddle-point approximation
# ---------------------------------------------------------------------------


def _cumulant_derivative(
    t: float, lam: np.ndarray, mult: np.ndarray, order: int
) -> float:
    """K^(order)(t) = sum_i m_i (order-1)!/2 (lam_i - t)^-order."""
    return float(math.factorial(order - 1) / 2.0 * np.sum(mult * (lam - t) ** (-order)))


def solve_saddle(lam: np.ndarray, mult: np.ndarray) -> float:
    """Root of K'(t) = 1 below min(lam): bracketing solve, then Newton polish."""
    p = float(np.sum(mult))
    # K'(lo) < 1 < K'(hi) for any spectrum with total multiplicity p
    lo = float(lam.min()) - p / 2.0 - 1.0
    hi = float(lam.min()) - 0.5

    def residual(t: float) -> float:
        return _cumulant_derivative(t, lam, mult, 1) - 1.0

    def slope(t: float) -> float:
        return _cumulant_derivative(t, lam, mult, 2)

    try:
        t0 = brentq(
            residual,
            lo,
            hi,
            xtol=1e-14,
            rtol=4 * np.finfo(float).eps,
            maxiter=SADDLE_MAX_ITER,
        )
    except (RuntimeError, ValueError) as e:
        raise ConvergenceFailure(f"saddle-point equation did not converge: {e}") from e
    try:
        root = newton(
            residual, t0, fprime=slope, tol=1e-14, rtol=1e-14, maxiter=SADDLE_MAX_ITER
        )
        t = float(root)
    except RuntimeError:
        t = t0
    if not t < lam.min() or abs(residual(t)) > abs(residual(t0)):
        # the bracketed root is kept when the polish does not improve it
        t = t0
    if abs(residual(t)) > SADDLE_RESIDUAL_TOL:
        raise ConvergenceFailure(
            f"saddle-point residual {residual(t):.3e} above tolerance"
        )
    return float(t)


def _log_saddle(lam: np.ndarray, mult: np.ndarray, order: int) -> float:
    """log of the Kume-Wood approximation up to the spectrum-independent constant."""
    t = solve_saddle(lam, mult)
    k2 = _cumulant_derivative(t, lam, mult, 2)
    value = -0.5 * math.log(k2) - 0.5 * float(np.sum(mult * np.log(lam - t))) - t
    if order >= 2:
        k3 = _cumulant_derivative(t, lam, mult, 3)
        k4 = _cumulant_derivative(t, lam, mult, 4)
        rho3 = k3 / k2**1.5
        rho4 = k4 / k2**2
        value += rho4 / 8.0 - 5.0 * rho3**2 / 24.0
    return value


def _spectrum(kappa: float, d: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    # exp(kappa sum_{i<=k} x_i^2) = exp(-sum lam_i x_i^2) with lam shifted by +kappa;
    # the shift multiplies C by e^{-kappa}, restored by the caller
    if k == d:
        return np.array([0.0]), np.array([float(d)])
    return np.array([0.0, kappa]), np.array([float(k), float(d - k)])


def log_z_saddlepoint(q: ZQuery, order: int = 1) -> float:
    _check_regime(q)
    if order not in (1, 2):
        raise InvalidArgument(f"saddle-point order must be 1 or 2, got {order}")
    if q.kappa == 0.0:
        return 0.0
    lam, mult = _spectrum(q.kappa, q.d, q.k)
    base_lam, base_mult = np.array([0.0]), np.array([float(q.d)])
    base = _log_saddle(base_lam, base_mult, order)
    return q.kappa + _log_saddle(lam, mult, order) - base


def z_saddlepoint(q: ZQuery, order: int = 1) -> float:
    return math.exp(log_z_saddlepoint(q, order))


def z_saddlepoint_dlogz(q: ZQuery, order: int = 1, eps: float = 1e-5) -> float:
    """Central difference of log Z_saddle in kappa (one-sided at kappa = 0)."""
    if q.kappa < eps:
        hi = ZQuery(q.kappa + eps, q.d, q.k)
        return (log_z_saddlepoint(hi, order) - log_z_saddlepoint(q, order)) / eps
    hi = ZQuery(q.kappa + eps, q.d, q.k)
    lo = ZQuery(q.kappa - eps, q.d, q.k)
    return (log_z_saddlepoint(hi, order) - log_z_saddlepoint(lo, order)) / (2.0 * eps)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def z_montecarlo(
    q: ZQuery,
    samples: int,
    rng: RngState,
    frame: Optional[Frame] = None,
) -> Tuple[float, float]:
    """(estimate, standard error) of E[exp(kappa ||F^T x||^2)] over sphere-uniform x."""
    if samples < MC_MIN_SAMPLES:
        raise InvalidArgument(
            f"Monte Carlo needs >= {MC_MIN_SAMPLES} samples, got {samples}"
        )
    if q.kappa == 0.0:
        return 1.0, 0.0
    frame = frame or coordinate_frame(q.d, q.k)
    if (frame.d, frame.k) != (q.d, q.k):
        raise InvalidArgument("frame shape does not match the query")
    bases = frame.basis[np.newaxis, :, :]
    chunk = max(1, settings.mc_chunk_floats // q.d)
    values = np.empty(samples)
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        X = sphere_uniform_batch(n, q.d, rng)
        values[done : done + n] = np.exp(q.kappa * affinities(bases, X)[:, 0])
        done += n
    estimate = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(samples))
    log_event(
        logger,
        "z_montecarlo",
        kappa=q.kappa,
        d=q.d,
        k=q.k,
        samples=samples,
        estimate=estimate,
        stderr=stderr,
    )
    return estimate, stderr


# ---------------------------------------------------------------------------
# Bayesian reading of the gate
# ---------------------------------------------------------------------------


def capacity_prior_posterior(bank: ExpertBank, x) -> RoutingDistribution:
    """Posterior over experts with Bingham likelihoods and the prior p(e) ~ Z(kappa_e).

    The normalizers cancel, so the result equals the alpha = 1 gate.
    """
    x = np.asarray(x, dtype=np.float64)
    a = affinities(bank.bases, x[np.newaxis, :])[0]
    log_z = np.array(
        [math.log(z_series(ZQuery(float(kp), bank.d, bank.k))) for kp in bank.kappas]
    )
    log_lik = bank.kappas * a - log_z
    log_prior = log_z - logsumexp(log_z)
    logits = log_lik + log_prior
    return RoutingDistribution(logits=logits, probs=softmax(logits))
