"""Tests for Bingham concentration gating and routing metrics"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grmoe.errors import DimensionMismatch, InvalidArgument, NumericalError
from grmoe.models.bank import Amortizer, ExpertBank
from grmoe.models.frame import Frame
from grmoe.services.gating import (
    amortizer_scales,
    effective_experts,
    effective_experts_rows,
    entropy,
    entropy_rows,
    init_amortizer,
    init_expert,
    kappa_profile,
    moe_forward,
    route,
    route_amortized,
    route_batch,
    temperature_route,
    topk_mass,
    topk_mass_rows,
)
from grmoe.services.linalg_core import qr_positive, rng_stream
from grmoe.services.manifold import coordinate_frame


def test_alpha_zero_routes_uniformly(haar_bank, rng):
    x = rng.standard_normal(10)
    rd = route(haar_bank, x, 0.0)
    assert np.allclose(rd.probs, 0.25)
    assert entropy(rd) == pytest.approx(math.log(4), abs=1e-12)
    assert effective_experts(rd) == pytest.approx(4.0)


def test_logits_are_concentration_times_affinity(scalar_bank):
    bank = scalar_bank([3.0, 1.0])
    rd = route(bank, np.ones(2), 1.0)
    assert np.allclose(rd.logits, [3.0, 1.0])
    assert rd.probs[0] == pytest.approx(1.0 / (1.0 + math.exp(-2.0)))
    assert entropy(rd) == pytest.approx(0.3653, abs=1e-4)


def test_route_batch_agrees_with_single_token_route(haar_bank, rng):
    X = rng.standard_normal((6, 10))
    P = route_batch(haar_bank, X, 1.7)
    assert P.shape == (6, 4)
    assert np.allclose(P.sum(axis=1), 1.0)
    for b in range(6):
        assert np.allclose(P[b], route(haar_bank, X[b], 1.7).probs, atol=1e-15)


def test_large_alpha_approaches_hard_routing(scalar_bank):
    bank = scalar_bank([1.0, 2.0, 3.0])
    rd = route(bank, np.ones(3), 50.0)
    assert topk_mass(rd, 1) > 1.0 - 1e-12
    assert effective_experts(rd) == pytest.approx(1.0, abs=1e-12)


def test_underflowing_probabilities_stay_positive(scalar_bank):
    bank = scalar_bank([1.0, 2.0, 3.0])
    rd = route(bank, np.ones(3), 1e4)
    assert np.all(rd.probs > 0.0)
    assert rd.probs[2] == 1.0
    assert rd.probs[0] == np.finfo(np.float64).tiny
    assert rd.probs.sum() == pytest.approx(1.0, abs=1e-15)
    P = route_batch(bank, np.ones((2, 3)), 1e4)
    assert np.all(P > 0.0)
    assert np.allclose(P.sum(axis=1), 1.0)


def test_rank_one_routing_ignores_sign(rng):
    u = coordinate_frame(5, 1, offset=0)
    bank = ExpertBank(
        frames=(u, coordinate_frame(5, 1, offset=1)), kappas=np.array([1.5, 0.7])
    )
    x = rng.standard_normal(5)
    flipped_frame = ExpertBank(
        frames=(Frame(-u.basis), bank.frames[1]), kappas=bank.kappas
    )
    flipped_x = x.copy()
    flipped_x[0] = -flipped_x[0]
    base = route(bank, x, 1.0).probs
    assert np.allclose(route(flipped_frame, x, 1.0).probs, base, atol=1e-15)
    assert np.allclose(route(bank, flipped_x, 1.0).probs, base, atol=1e-15)
    assert np.allclose(route(bank, -x, 1.0).probs, base, atol=1e-15)


@pytest.mark.parametrize("c", [0.25, 3.0, 40.0])
def test_alpha_and_kappa_enter_the_logits_as_a_product(haar_bank, rng, c):
    x = rng.standard_normal(10)
    rescaled = ExpertBank(frames=haar_bank.frames, kappas=haar_bank.kappas / c)
    a = route(haar_bank, x, 1.0)
    b = route(rescaled, x, c)
    assert np.allclose(a.logits, b.logits, rtol=1e-12)
    assert np.allclose(a.probs, b.probs, rtol=1e-12)


def test_routing_is_invariant_to_in_subspace_rotation(haar_bank, rng):
    rotated = []
    for e, f in enumerate(haar_bank.frames):
        o, _ = qr_positive(rng_stream(e, "rotation").standard_normal((f.k, f.k)))
        rotated.append(Frame(f.basis @ o))
    other = ExpertBank(frames=tuple(rotated), kappas=haar_bank.kappas)
    X = rng.standard_normal((16, 10))
    assert np.allclose(
        route_batch(other, X, 2.0), route_batch(haar_bank, X, 2.0), atol=1e-10
    )


@settings(max_examples=40, deadline=None)
@given(
    kappas=st.lists(st.floats(0.01, 10.0), min_size=2, max_size=8),
    alphas=st.tuples(st.floats(0.0, 5.0), st.floats(0.0, 5.0)),
)
def test_entropy_is_nonincreasing_in_alpha(kappas, alphas):
    n = len(kappas)
    bank = ExpertBank(
        frames=tuple(coordinate_frame(n, 1, offset=e) for e in range(n)),
        kappas=np.array(kappas),
    )
    lo, hi = sorted(alphas)
    x = np.ones(n)
    assert entropy(route(bank, x, hi)) <= entropy(route(bank, x, lo)) + 1e-12


def test_route_validates_inputs(haar_bank):
    with pytest.raises(InvalidArgument):
        route(haar_bank, np.ones(10), -0.1)
    with pytest.raises(InvalidArgument):
        route(haar_bank, np.ones(10), float("nan"))
    with pytest.raises(DimensionMismatch):
        route(haar_bank, np.ones(9), 1.0)
    with pytest.raises(NumericalError):
        route_batch(haar_bank, np.full((2, 10), np.inf), 1.0)


def test_bank_validation():
    frames = (coordinate_frame(4, 2), coordinate_frame(4, 2, offset=2))
    with pytest.raises(InvalidArgument):
        ExpertBank(frames=frames[:1], kappas=np.array([1.0]))
    with pytest.raises(InvalidArgument):
        ExpertBank(frames=frames, kappas=np.array([1.0, 0.0]))
    with pytest.raises(DimensionMismatch):
        ExpertBank(frames=frames, kappas=np.array([1.0, 1.0, 1.0]))
    with pytest.raises(DimensionMismatch):
        mixed = (coordinate_frame(4, 2), coordinate_frame(4, 1))
        ExpertBank(frames=mixed, kappas=np.ones(2))


def test_fresh_amortizer_reduces_to_basic_gating(haar_bank, rng):
    amortizer = init_amortizer(10, 4, hidden=5, rng=rng)
    for _ in range(100):
        x = rng.standard_normal(10)
        alpha = float(rng.uniform(0.0, 5.0))
        assert np.allclose(amortizer_scales(amortizer, x), 1.0)
        basic = route(haar_bank, x, alpha).probs
        amortized = route_amortized(haar_bank, amortizer, x, alpha).probs
        assert np.max(np.abs(amortized - basic)) <= 1e-12


def test_amortizer_scales_sum_to_n(rng):
    amortizer = Amortizer(
        W1=rng.standard_normal((5, 10)),
        b1=rng.standard_normal(5),
        W2=rng.standard_normal((4, 5)),
        b2=rng.standard_normal(4),
    )
    h = amortizer_scales(amortizer, rng.standard_normal(10))
    assert h.sum() == pytest.approx(4.0)
    assert np.all(h > 0.0)


def test_amortizer_shape_checks(haar_bank, rng):
    with pytest.raises(DimensionMismatch):
        Amortizer(
            W1=np.zeros((5, 10)), b1=np.zeros(4), W2=np.zeros((4, 5)), b2=np.zeros(4)
        )
    wrong_n = init_amortizer(10, 3, hidden=5, rng=rng)
    with pytest.raises(DimensionMismatch):
        route_amortized(haar_bank, wrong_n, np.ones(10), 1.0)
    with pytest.raises(DimensionMismatch):
        route_batch(haar_bank, np.ones((2, 10)), 1.0, wrong_n)


def test_topk_mass_ties_and_range():
    p = np.array([0.25, 0.25, 0.4, 0.1])
    assert topk_mass(p, 1) == pytest.approx(0.4)
    assert topk_mass(p, 2) == pytest.approx(0.65)
    assert topk_mass(p, 4) == pytest.approx(1.0)
    assert np.allclose(topk_mass_rows(np.stack([p, p[::-1]]), 2), 0.65)
    with pytest.raises(InvalidArgument):
        topk_mass(p, 0)
    with pytest.raises(InvalidArgument):
        topk_mass_rows(p[np.newaxis, :], 5)


def test_row_metrics_match_scalar_metrics():
    P = np.array([[1.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3], [0.5, 0.5, 0.0]])
    assert np.allclose(entropy_rows(P), [0.0, math.log(3), math.log(2)])
    assert np.allclose(effective_experts_rows(P), [1.0, 3.0, 2.0])
    assert entropy(P[0]) == 0.0


def test_temperature_route(rng):
    logits = rng.standard_normal((3, 4))
    assert np.allclose(temperature_route(logits, 1e6), 0.25, atol=1e-5)
    assert np.allclose(temperature_route(logits, 1.0).sum(axis=1), 1.0)
    with pytest.raises(InvalidArgument):
        temperature_route(logits, 0.0)


def test_kappa_profile(haar_bank):
    profile = kappa_profile(haar_bank)
    assert profile["kappa_min"] == 0.5
    assert profile["kappa_max"] == 3.0
    assert profile["kappa_mean"] == pytest.approx(1.625)
    assert profile["kappa_std"] == pytest.approx(float(np.std([0.5, 1.0, 2.0, 3.0])))


def test_moe_forward_is_gate_weighted_expert_sum(haar_bank):
    rng = rng_stream(5, "experts")
    experts = tuple(init_expert(10, rng, hidden=6) for _ in range(4))
    bank = ExpertBank(frames=haar_bank.frames, kappas=haar_bank.kappas, experts=experts)
    x = rng.standard_normal(10)
    g = route(bank, x, 0.8).probs
    expected = sum(g[e] * experts[e](x) for e in range(4))
    assert np.allclose(moe_forward(bank, x, 0.8), expected)
    with pytest.raises(InvalidArgument):
        moe_forward(haar_bank, x, 0.8)
