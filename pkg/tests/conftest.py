import os
from pathlib import Path

import numpy as np
import pytest
import yaml

# Quiet, plain-text logs for the test session; set before grmoe reads its settings
os.environ.setdefault("GRMOE_LOG_LEVEL", "WARNING")
os.environ.setdefault("GRMOE_LOG_JSON", "false")

from grmoe.models.bank import ExpertBank  # noqa: E402
from grmoe.schemas import TrainConfig  # noqa: E402
from grmoe.services.linalg_core import rng_stream  # noqa: E402
from grmoe.services.manifold import coordinate_frame, haar_frame  # noqa: E402
from grmoe.services.synthetic import make_task  # noqa: E402


@pytest.fixture
def rng():
    """Fresh deterministic stream per test."""
    return rng_stream(1234, "tests")


@pytest.fixture
def small_task():
    """Three experts, rank-2 subspaces in R^12, mild overlap."""
    return make_task(N=3, d=12, k=2, rho_star=0.1, sigma2=0.1, seed=0)


@pytest.fixture
def tiny_train():
    """Training budget small enough for the default suite."""
    return TrainConfig(steps=30, batch_size=64, eval_every=10, n_eval=300, seed=0)


@pytest.fixture
def haar_bank(rng):
    """Four Haar frames of rank 3 in R^10 with distinct concentrations."""
    frames = tuple(haar_frame(10, 3, rng) for _ in range(4))
    return ExpertBank(frames=frames, kappas=np.array([0.5, 1.0, 2.0, 3.0]))


def _scalar_bank(kappas) -> ExpertBank:
    n = len(kappas)
    frames = tuple(coordinate_frame(n, 1, offset=e) for e in range(n))
    return ExpertBank(frames=frames, kappas=np.asarray(kappas, dtype=np.float64))


@pytest.fixture
def scalar_bank():
    """Factory: bank whose logits at x = ones(N) are exactly alpha * kappas."""
    return _scalar_bank


@pytest.fixture
def write_yaml(tmp_path: Path):
    """Write a mapping to a YAML file under tmp_path and return its path."""

    def _write(name: str, payload: dict) -> Path:
        path = tmp_path / name
        path.write_text(yaml.safe_dump(payload, sort_keys=False), encoding="utf-8")
        return path

    return _write


@pytest.fixture(autouse=True)
def _isolate_run_context():
    """Undo run-context values set by in-process CLI invocations between tests."""
    from grmoe.context import run_context as rc

    ctx_vars = (rc.run_id_ctx, rc.subcommand_ctx, rc.seed_ctx)
    saved = [v.get() for v in ctx_vars]
    yield
    for var, value in zip(ctx_vars, saved):
        var.set(value)
