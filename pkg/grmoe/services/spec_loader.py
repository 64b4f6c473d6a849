from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, ValidationError

from ..errors import ConfigError
from ..observability import log_event
from ..schemas import SUBCOMMAND_CONFIGS

logger = logging.getLogger("grmoe.spec_loader")


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


class SpecLoader:
    """Loads subcommand configs from YAML files or the specs shipped with the package"""

    def __init__(self, specs_dir: Optional[Path] = None):
        self.specs_dir = specs_dir or Path(__file__).parent.parent / "specs"

    def list_specs(self) -> List[str]:
        """Names of the shipped specs (file stems)"""
        return sorted(p.stem for p in self.specs_dir.glob("*.yaml"))

    def resolve(self, ref: Union[str, Path]) -> Path:
        """A path on disk, or the name of a shipped spec such as `bench.easy`"""
        path = Path(ref)
        if path.exists():
            return path
        shipped = self.specs_dir / f"{ref}.yaml"
        if shipped.exists():
            return shipped
        shipped_names = ", ".join(self.list_specs())
        raise ConfigError(f"config not found: {ref} (shipped specs: {shipped_names})")

    def load_raw(self, ref: Union[str, Path]) -> Dict[str, Any]:
        path = self.resolve(ref)
        try:
            with open(path, "r", encoding="utf-8") as file:
                data = yaml.safe_load(file)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(
                f"config {path} must be a mapping, got {type(data).__name__}"
            )
        return data

    def load(
        self,
        subcommand: str,
        ref: Optional[Union[str, Path]] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> BaseModel:
        """Validated config for a subcommand; every field not given keeps its default"""
        model = SUBCOMMAND_CONFIGS.get(subcommand)
        if model is None:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        data = self.load_raw(ref) if ref is not None else {}
        if overrides:
            data = _deep_merge(data, overrides)
        try:
            cfg = model.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid {subcommand} config: {e}") from e
        source = str(ref) if ref else "defaults"
        log_event(logger, "config_loaded", subcommand=subcommand, source=source)
        return cfg
