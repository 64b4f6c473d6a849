"""Bingham concentration gating.

Logits are l_e = alpha * h_e * kappa_e * a_e(x) with a_e(x) = ||U_e^T x||^2 and
h = 1 unless an amortizer supplies token-specific multipliers (sum h = N).
alpha = 0 gives uniform routing, alpha -> inf hard top-1.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
from scipy.special import entr, softmax

from ..errors import DimensionMismatch, InvalidArgument, NumericalError
from ..models.bank import Amortizer, ExpertBank, ExpertFFN, RoutingDistribution
from .linalg_core import RngState
from .manifold import affinities

# softmax entries that underflow are lifted to the smallest positive float
PROB_FLOOR = np.finfo(np.float64).tiny


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0.0:
        raise InvalidArgument(f"alpha must be finite and >= 0, got {alpha}")
    return alpha


def _batch(bank: ExpertBank, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.d:
        raise DimensionMismatch(
            f"expected tokens of dimension {bank.d}, got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise NumericalError("token batch has non-finite entries")
    return X


def _token(bank: ExpertBank, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (bank.d,):
        raise DimensionMismatch(
            f"expected a token of dimension {bank.d}, got shape {x.shape}"
        )
    return _batch(bank, x[np.newaxis, :])


# ---------------------------------------------------------------------------
# Amortizer / expert construction
# ---------------------------------------------------------------------------


def init_amortizer(
    d: int, n_experts: int, hidden: int, rng: RngState, scale: float = 0.1
) -> Amortizer:
    """Small random first layer, zero output head (h = 1 at start)."""
    return Amortizer(
        W1=rng.standard_normal((hidden, d)) * (scale / np.sqrt(d)),
        b1=np.zeros(hidden),
        W2=np.zeros((n_experts, hidden)),
        b2=np.zeros(n_experts),
    )


def init_expert(d: int, rng: RngState, hidden: Optional[int] = None) -> ExpertFFN:
    hidden = hidden or 4 * d
    return ExpertFFN(
        W1=rng.standard_normal((hidden, d)) / np.sqrt(d),
        b1=np.zeros(hidden),
        W2=rng.standard_normal((d, hidden)) / np.sqrt(hidden),
        b2=np.zeros(d),
    )


def amortizer_forward(amortizer: Amortizer, X: np.ndarray) -> Dict[str, np.ndarray]:
    """Hidden activations, output softmax and scales h = N * softmax(z) for a batch."""
    if X.shape[1] != amortizer.d:
        raise DimensionMismatch(
            f"amortizer expects dimension {amortizer.d}, got {X.shape[1]}"
        )
    t = np.tanh(X @ amortizer.W1.T + amortizer.b1)
    z = t @ amortizer.W2.T + amortizer.b2
    s = softmax(z, axis=1)
    return {"t": t, "s": s, "h": amortizer.n_experts * s}


def amortizer_scales(amortizer: Amortizer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return amortizer_forward(amortizer, x)["h"][0]


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------


def gate_logits(
    bank: ExpertBank, X: np.ndarray, alpha: float, scales: Optional[np.ndarray] = None
) -> np.ndarray:
    """B x N logits; `scales` (B x N) are amortizer multipliers, None means h = 1."""
    a = affinities(bank.bases, X)
    conc = bank.kappas[np.newaxis, :]
    if scales is not None:
        conc = scales * conc
    return alpha * conc * a


def route_batch(
    bank: ExpertBank, X, alpha: float, amortizer: Optional[Amortizer] = None
) -> np.ndarray:
    """B x N routing probabilities; row b equals route(bank, X[b], alpha)."""
    alpha = _check_alpha(alpha)
    X = _batch(bank, X)
    scales = None
    if amortizer is not None:
        if amortizer.n_experts != bank.n_experts:
            raise DimensionMismatch("amortizer output size does not match the bank")
        scales = amortizer_forward(amortizer, X)["h"]
    probs = softmax(gate_logits(bank, X, alpha, scales), axis=1)
    return np.maximum(probs, PROB_FLOOR)


def _distribution(logits: np.ndarray) -> RoutingDistribution:
    probs = np.maximum(softmax(logits), PROB_FLOOR)
    return RoutingDistribution(logits=logits, probs=probs)


def route(bank: ExpertBank, x, alpha: float) -> RoutingDistribution:
    alpha = _check_alpha(alpha)
    X = _token(bank, x)
    return _distribution(gate_logits(bank, X, alpha)[0])


def route_amortized(
    bank: ExpertBank, amortizer: Amortizer, x, alpha: float
) -> RoutingDistribution:
    alpha = _check_alpha(alpha)
    X = _token(bank, x)
    if amortizer.n_experts != bank.n_experts:
        raise DimensionMismatch("amortizer output size does not match the bank")
    h = amortizer_forward(amortizer, X)["h"]
    return _distribution(gate_logits(bank, X, alpha, h)[0])


def temperature_route(logits, tau: float) -> np.ndarray:
    """softmax(logits / tau) along the last axis."""
    if tau <= 0.0:
        raise InvalidArgument(f"temperature must be > 0, got {tau}")
    return softmax(np.asarray(logits, dtype=np.float64) / tau, axis=-1)


# ---------------------------------------------------------------------------
# Distribution metrics
# ---------------------------------------------------------------------------


def _probs(rd) -> np.ndarray:
    if isinstance(rd, RoutingDistribution):
        return rd.probs
    return np.asarray(rd, dtype=np.float64)


def entropy(rd) -> float:
    """Natural-log entropy with 0 log 0 = 0."""
    return float(np.sum(entr(_probs(rd))))


def entropy_rows(P: np.ndarray) -> np.ndarray:
    return np.sum(entr(P), axis=1)


def topk_mass(rd, k: int) -> float:
    """Sum of the k largest probabilities (ties by lower index)."""
    p = _probs(rd)
    n = p.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgument(f"k must lie in [1, {n}], got {k}")
    order = np.lexsort((np.arange(n), -p))
    return float(np.sum(p[order[:k]]))


def topk_mass_rows(P: np.ndarray, k: int) -> np.ndarray:
    if not 1 <= k <= P.shape[1]:
        raise InvalidArgument(f"k must lie in [1, {P.shape[1]}], got {k}")
    return np.sum(-np.sort(-P, axis=1)[:, :k], axis=1)


def effective_experts(rd) -> float:
    """Participation ratio 1 / sum p^2."""
    p = _probs(rd)
    return float(1.0 / np.sum(p * p))


def effective_experts_rows(P: np.ndarray) -> np.ndarray:
    return 1.0 / np.sum(P * P, axis=1)


def kappa_profile(bank: ExpertBank) -> Dict[str, float]:
    k = bank.kappas
    return {
        "kappa_min": float(k.min()),
        "kappa_max": float(k.max()),
        "kappa_mean": float(k.mean()),
        "kappa_std": float(k.std()),
    }


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def moe_forward(
    bank: ExpertBank, x, alpha: float, amortizer: Optional[Amortizer] = None
) -> np.ndarray:
    """Affinities -> concentrations -> logits -> softmax -> weighted expert sum."""
    if not bank.experts:
        raise InvalidArgument("the bank carries no expert maps")
    if amortizer is None:
        rd = route(bank, x, alpha)
    else:
        rd = route_amortized(bank, amortizer, x, alpha)
    x = np.asarray(x, dtype=np.float64)
    y = np.zeros_like(x)
    for g, f in zip(rd.probs, bank.experts):
        y = y + g * np.asarray(f(x), dtype=np.float64)
    return y
