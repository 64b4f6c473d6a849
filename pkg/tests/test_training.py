"""Tests for router training: regularizer, gradients, Riemannian Adam and the loop"""

from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from grmoe.errors import Diverged, InvalidArgument, RankDeficient
from grmoe.models.bank import Amortizer, ExpertBank
from grmoe.models.training import (
    METRICS_COLUMNS,
    Gradients,
    LossParts,
    OptimState,
    RouterParams,
)
from grmoe.schemas import TrainConfig
from grmoe.services.linalg_core import orthonormality_defect, qr_positive, rng_stream
from grmoe.services.manifold import coordinate_frame, haar_frame, project_direction
from grmoe.services.training import (
    adam_step,
    adam_update,
    all_pairs,
    init_router,
    metrics_log_to_csv,
    objective,
    objective_gradients,
    sample_pairs,
    subspace_reg,
    subspace_reg_sampled,
    train,
)

D, K, N = 6, 2, 3


@pytest.fixture
def problem():
    """Small unconstrained problem for finite-difference checks"""
    rng = rng_stream(21, "fd")
    bases = np.stack([haar_frame(D, K, rng).basis for _ in range(N)])
    kappas = np.array([0.7, 1.3, 2.1])
    X = rng.standard_normal((5, D))
    z = np.array([0, 1, 2, 1, 0])
    amortizer = Amortizer(
        W1=0.5 * rng.standard_normal((4, D)),
        b1=0.1 * rng.standard_normal(4),
        W2=0.5 * rng.standard_normal((N, 4)),
        b2=0.1 * rng.standard_normal(N),
    )
    # rho0 small so every pair's hinge is active
    cfg = TrainConfig(beta=0.05, rho0=0.01)
    return bases, kappas, X, z, amortizer, cfg


def _fd(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up, down = x.copy(), x.copy()
        up[idx] += eps
        down[idx] -= eps
        grad[idx] = (f(up) - f(down)) / (2 * eps)
    return grad


@pytest.mark.parametrize("amortized", [False, True])
def test_frame_and_kappa_gradients_match_finite_differences(problem, amortized):
    bases, kappas, X, z, amortizer, cfg = problem
    amortizer = amortizer if amortized else None
    grads = objective_gradients(bases, kappas, amortizer, X, z, cfg)

    fd_frames = _fd(lambda b: objective(b, kappas, amortizer, X, z, cfg).total, bases)
    fd_kappas = _fd(lambda k: objective(bases, k, amortizer, X, z, cfg).total, kappas)
    assert np.allclose(grads.frames, fd_frames, rtol=1e-5, atol=1e-7)
    assert np.allclose(grads.kappas, fd_kappas, rtol=1e-5, atol=1e-7)
    total = objective(bases, kappas, amortizer, X, z, cfg).total
    assert grads.loss.total == pytest.approx(total)


def test_amortizer_gradients_match_finite_differences(problem):
    bases, kappas, X, z, amortizer, cfg = problem
    grads = objective_gradients(bases, kappas, amortizer, X, z, cfg)
    params = amortizer.params()
    for name, value in params.items():

        def f(w, name=name):
            perturbed = Amortizer.from_params({**params, name: w})
            return objective(bases, kappas, perturbed, X, z, cfg).total

        fd = _fd(f, np.array(value))
        assert np.allclose(grads.amortizer[name], fd, rtol=1e-5, atol=1e-7), name


def test_regularizer_is_zero_on_disjoint_blocks():
    bank = ExpertBank(
        frames=tuple(coordinate_frame(6, 2, offset=2 * e) for e in range(3)),
        kappas=np.ones(3),
    )
    assert subspace_reg(bank, 0.3) == 0.0


def test_regularizer_counts_each_pair_once():
    f = coordinate_frame(6, 2)
    bank = ExpertBank(frames=(f, f, f), kappas=np.ones(3))
    # three pairs, each with overlap k = 2 against rho0 * k = 0.6
    assert subspace_reg(bank, 0.3) == pytest.approx(3 * (2.0 - 0.6))


def test_sampled_pairs():
    rng = rng_stream(0, "pairs")
    i, j, scale = sample_pairs(6, 4, rng)
    assert len(i) == 4 and scale == pytest.approx(15 / 4)
    assert np.all(i < j)
    assert len(set(zip(i.tolist(), j.tolist()))) == 4
    full = all_pairs(6)
    for M in (None, 15, 40):
        ii, jj, s = sample_pairs(6, M, rng)
        assert np.array_equal(ii, full[0]) and np.array_equal(jj, full[1]) and s == 1.0
    with pytest.raises(InvalidArgument):
        sample_pairs(6, 0, rng)


def test_sampled_regularizer_with_every_pair_equals_full(haar_bank):
    full = subspace_reg(haar_bank, 0.05)
    sampled = subspace_reg_sampled(haar_bank, 0.05, 6, rng_stream(0, "pairs"))
    assert sampled == pytest.approx(full)
    with pytest.raises(InvalidArgument):
        subspace_reg_sampled(haar_bank, 0.05, 0, rng_stream(0, "pairs"))


def test_sampled_regularizer_is_unbiased(haar_bank):
    full = subspace_reg(haar_bank, 0.05)
    rng = rng_stream(4, "pairs")
    mean = np.mean([subspace_reg_sampled(haar_bank, 0.05, 2, rng) for _ in range(4000)])
    assert mean == pytest.approx(full, rel=0.05)


def test_objective_validates_batch(problem):
    bases, kappas, X, z, _, cfg = problem
    with pytest.raises(InvalidArgument):
        objective(bases, kappas, None, X, np.array([0, 1, 2, 3, 0]), cfg)
    with pytest.raises(InvalidArgument):
        objective(bases, kappas, None, X[:0], z[:0], cfg)
    with pytest.raises(InvalidArgument):
        objective(bases, kappas, None, X, z[:3], cfg)


def test_alpha_train_is_fixed():
    with pytest.raises(ValueError):
        TrainConfig(alpha_train=2.0)


def test_adam_first_step_has_learning_rate_magnitude():
    cfg = TrainConfig()
    g = np.array([3.0, -0.2, 0.0])
    step, m, v = adam_update(g, None, None, 1, 0.01, cfg)
    assert np.allclose(step, [-0.01, 0.01, 0.0], atol=1e-8)
    assert np.allclose(m, 0.1 * g)
    assert np.allclose(v, 0.001 * g * g)


def _params(rng, amortized=False):
    cfg = TrainConfig(amortizer_hidden=4)
    return init_router(N, D, K, cfg, rng, amortized)


def test_adam_step_keeps_frames_orthonormal_and_kappas_positive(problem):
    bases, _, X, z, _, cfg = problem
    params = _params(rng_stream(1, "init"))
    state = OptimState()
    for _ in range(25):
        bank = params.bank
        grads = objective_gradients(bank.bases, bank.kappas, None, X, z, cfg)
        params, state = adam_step(params, grads, state, cfg)
    assert state.step == 25 and state.skipped == 0
    assert max(orthonormality_defect(f.basis) for f in params.bank.frames) < 1e-12
    assert np.all(params.bank.kappas > 0.0)


def test_zero_gradient_keeps_parameters():
    params = _params(rng_stream(1, "init"), amortized=True)
    zeros = Gradients(
        frames=np.zeros((N, D, K)),
        kappas=np.zeros(N),
        amortizer={k: np.zeros_like(v) for k, v in params.amortizer.params().items()},
        loss=LossParts(1.0, 1.0, 0.0),
    )
    new, state = adam_step(params, zeros, OptimState(), TrainConfig())
    assert np.array_equal(new.bank.bases, params.bank.bases)
    assert np.array_equal(new.bank.kappas, params.bank.kappas)
    assert np.array_equal(new.amortizer.W2, params.amortizer.W2)
    assert state.step == 1


def test_retraction_failure_skips_the_step():
    params = _params(rng_stream(1, "init"))
    grads = Gradients(
        frames=np.ones((N, D, K)), kappas=np.ones(N), loss=LossParts(1.0, 1.0, 0.0)
    )
    failure = RankDeficient("forced")
    with patch("grmoe.services.training.qr_positive", side_effect=failure):
        new, state = adam_step(params, grads, OptimState(), TrainConfig())
    assert new is params
    assert state.skipped == 1
    assert state.step == 0


def test_retraction_retries_at_half_step():
    params = _params(rng_stream(1, "init"))
    cfg = TrainConfig()
    grads = Gradients(
        frames=np.ones((N, D, K)), kappas=np.ones(N), loss=LossParts(1.0, 1.0, 0.0)
    )
    calls = []

    def fail_once(a):
        calls.append(a)
        if len(calls) == 1:
            raise RankDeficient("forced")
        return qr_positive(a)

    with patch("grmoe.services.training.qr_positive", side_effect=fail_once):
        new, state = adam_step(params, grads, OptimState(), cfg)
    assert len(calls) == 1 + N
    assert (state.step, state.skipped) == (1, 0)
    frame_step, _, _ = adam_update(grads.frames, None, None, 1, cfg.lr_frames, cfg)
    for e, u in enumerate(params.bank.bases):
        expected, _ = qr_positive(u + project_direction(u, 0.5 * frame_step[e]))
        assert np.allclose(new.bank.frames[e].basis, expected, atol=1e-14)
    assert not np.allclose(new.bank.bases, params.bank.bases)
    assert np.all(new.bank.kappas != params.bank.kappas)


def test_init_router_validates_rank(rng):
    with pytest.raises(InvalidArgument):
        init_router(3, 4, 5, TrainConfig(), rng)
    params = init_router(3, 8, 2, TrainConfig(kappa_init=0.5), rng, amortized=True)
    assert np.allclose(params.bank.kappas, 0.5)
    assert params.amortizer.n_experts == 3


def test_train_records_metrics_and_is_deterministic(small_task, tiny_train):
    first = train(small_task, tiny_train)
    second = train(small_task, tiny_train)
    steps = [row.step for row in first.metrics.rows]
    assert steps == [0, 10, 20, 30]
    assert np.array_equal(first.params.bank.bases, second.params.bank.bases)
    assert np.array_equal(first.params.bank.kappas, second.params.bank.kappas)
    assert first.metrics.records() == second.metrics.records()
    assert all(row.defect < 1e-10 for row in first.metrics.rows)
    assert first.state.step == 30


def test_training_improves_accuracy_on_easy_task(small_task):
    cfg = TrainConfig(steps=300, batch_size=128, eval_every=300, n_eval=600, seed=0)
    result = train(small_task, cfg)
    first, last = result.metrics.rows[0], result.metrics.rows[-1]
    assert last.acc > first.acc
    assert last.acc > 0.6


def test_amortized_training_runs(small_task, tiny_train):
    result = train(small_task, tiny_train, amortized=True)
    assert result.params.amortizer is not None
    assert result.metrics.last.step == 30


def test_non_finite_gradients_raise_diverged(small_task, tiny_train):
    bad = Gradients(
        frames=np.zeros((3, 12, 2)),
        kappas=np.zeros(3),
        loss=LossParts(float("nan"), float("nan"), 0.0),
    )
    with patch("grmoe.services.training.gradients", return_value=bad):
        with pytest.raises(Diverged) as exc:
            train(small_task, tiny_train)
    assert exc.value.step == 1


def test_metrics_log_csv(small_task, tiny_train, tmp_path):
    result = train(small_task, tiny_train)
    path = metrics_log_to_csv(result.metrics, tmp_path / "metrics.csv")
    frame = pd.read_csv(path)
    assert tuple(frame.columns) == METRICS_COLUMNS
    assert frame["step"].tolist() == [0, 10, 20, 30]
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(METRICS_COLUMNS)


def test_router_params_are_frozen(problem):
    params = _params(rng_stream(2, "init"))
    assert isinstance(params, RouterParams)
    with pytest.raises(ValueError):
        params.bank.kappas[0] = 5.0


@pytest.mark.slow
def test_frames_stay_orthonormal_over_long_runs(problem):
    _, _, X, z, _, cfg = problem
    params = _params(rng_stream(3, "init"))
    state = OptimState()
    for _ in range(10_000):
        bank = params.bank
        grads = objective_gradients(bank.bases, bank.kappas, None, X, z, cfg)
        params, state = adam_step(params, grads, state, cfg)
    assert max(orthonormality_defect(f.basis) for f in params.bank.frames) <= 1e-8
