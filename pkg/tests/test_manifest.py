"""Tests for run manifests"""

import time

import pytest

from grmoe import __version__
from grmoe.errors import ConfigError
from grmoe.schemas import BoundsConfig
from grmoe.services.manifest import (
    MANIFEST_NAME,
    finalize_manifest,
    new_manifest,
    read_manifest,
    write_manifest,
)


def test_manifest_lifecycle(tmp_path):
    cfg = BoundsConfig(instances=10)
    manifest = new_manifest("bounds", cfg, seeds=[3])
    assert manifest.status == "running"
    assert manifest.version == __version__
    assert manifest.config["instances"] == 10

    path = write_manifest(tmp_path, manifest)
    assert path.name == MANIFEST_NAME
    assert read_manifest(tmp_path).run_id == manifest.run_id

    done = finalize_manifest(
        tmp_path, manifest, time.perf_counter(), "ok", 0, {"bounds": "bounds.json"}
    )
    again = read_manifest(path)
    assert again.status == "ok" and again.exit_code == 0
    assert again.artifacts == {"bounds": "bounds.json"}
    assert again.wall_clock_s is not None and again.wall_clock_s >= 0.0
    assert done.seeds == [3]
    # the stored config validates back into the same model
    assert BoundsConfig.model_validate(again.config) == cfg


def test_manifest_ids_are_unique():
    cfg = BoundsConfig()
    assert new_manifest("bounds", cfg).run_id != new_manifest("bounds", cfg).run_id


def test_bad_manifest(tmp_path):
    with pytest.raises(ConfigError):
        read_manifest(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text('{"run_id": 1}', encoding="utf-8")
    with pytest.raises(ConfigError):
        read_manifest(tmp_path)
