"""Run manifests: written before any result, finalized with status and wall-clock."""

from __future__ import annotations

import logging
import time
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

from pydantic import BaseModel, ValidationError

from .. import __version__
from ..errors import ConfigError
from ..models.manifest import RunManifest
from ..observability import log_event

logger = logging.getLogger("grmoe.manifest")

MANIFEST_NAME = "manifest.json"


def new_manifest(
    subcommand: str,
    config: BaseModel,
    seeds: Iterable[int] = (),
    artifacts: Optional[Dict[str, str]] = None,
) -> RunManifest:
    return RunManifest(
        run_id=uuid.uuid4().hex,
        subcommand=subcommand,
        config=config.model_dump(mode="json"),
        seeds=[int(s) for s in seeds],
        artifacts=dict(artifacts or {}),
        version=__version__,
        started_at=datetime.now(timezone.utc).isoformat(),
    )


def write_manifest(out_dir: Union[str, Path], manifest: RunManifest) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / MANIFEST_NAME
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path


def finalize_manifest(
    out_dir: Union[str, Path],
    manifest: RunManifest,
    started: float,
    status: str,
    exit_code: int,
    artifacts: Optional[Dict[str, str]] = None,
) -> RunManifest:
    update = {
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "status": status,
        "exit_code": exit_code,
    }
    if artifacts:
        update["artifacts"] = {**manifest.artifacts, **artifacts}
    done = manifest.model_copy(update=update)
    write_manifest(out_dir, done)
    log_event(
        logger,
        "run_finished",
        status=status,
        exit_code=exit_code,
        wall_clock_s=done.wall_clock_s,
    )
    return done


def read_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise ConfigError(f"bad manifest {path}: {e}") from e

