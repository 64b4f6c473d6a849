"""JSON checkpoints of a trained router and its rng state."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from .. import __version__
from ..errors import ConfigError, GrmoeError
from ..models.bank import Amortizer, ExpertBank
from ..models.training import RouterParams
from ..observability import log_event
from ..schemas import TaskSpec, TrainConfig
from .baselines import Baseline, baseline_from_dict, baseline_to_dict
from .manifold import frame_from_dict, frame_to_dict

logger = logging.getLogger("grmoe.checkpoint")

CHECKPOINT_FORMAT = 1


@dataclass(eq=False)
class Checkpoint:
    method: str
    task: TaskSpec
    config: TrainConfig
    params: RouterParams
    step: int
    rng_state: Dict[str, Any]
    baseline: Optional[Baseline] = None


def _jsonable_state(state: Dict[str, Any]) -> Dict[str, Any]:
    # PCG64 state holds plain ints, which json keeps exact
    return json.loads(json.dumps(state))


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bank, amortizer = ckpt.params.bank, ckpt.params.amortizer
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": __version__,
        "method": ckpt.method,
        "task": ckpt.task.model_dump(mode="json"),
        "config": ckpt.config.model_dump(mode="json"),
        "frames": [frame_to_dict(f) for f in bank.frames],
        "kappas": bank.kappas.tolist(),
        "amortizer": None
        if amortizer is None
        else {name: np.asarray(v).tolist() for name, v in amortizer.params().items()},
        "rng_state": _jsonable_state(ckpt.rng_state),
        "step": int(ckpt.step),
        "baseline": None if ckpt.baseline is None else baseline_to_dict(ckpt.baseline),
    }
    path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
    log_event(
        logger, "checkpoint_saved", path=str(path), method=ckpt.method, step=ckpt.step
    )
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Load and re-validate a checkpoint; any defect surfaces as ConfigError."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(
                f"unsupported checkpoint format {payload.get('format')!r}"
            )
        bank = ExpertBank(
            frames=tuple(frame_from_dict(f) for f in payload["frames"]),
            kappas=np.asarray(payload["kappas"], dtype=np.float64),
        )
        amortizer = None
        if payload.get("amortizer") is not None:
            amortizer = Amortizer.from_params(payload["amortizer"])
        baseline = None
        if payload.get("baseline") is not None:
            baseline = baseline_from_dict(payload["baseline"])
        return Checkpoint(
            method=str(payload["method"]),
            task=TaskSpec.model_validate(payload["task"]),
            config=TrainConfig.model_validate(payload["config"]),
            params=RouterParams(bank, amortizer),
            step=int(payload["step"]),
            rng_state=payload.get("rng_state") or {},
            baseline=baseline,
        )
    except ConfigError:
        raise
    except (OSError, ValueError, KeyError, TypeError, ValidationError, GrmoeError) as e:
        raise ConfigError(f"bad checkpoint {path}: {e}") from e
