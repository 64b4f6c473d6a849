from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class RunManifest(BaseModel):
    run_id: str
    subcommand: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: List[int] = Field(default_factory=list)
    artifacts: Dict[str, str] = Field(
        default_factory=dict, description="Artifact name -> file name in the run dir"
    )
    version: str
    started_at: str
    wall_clock_s: Optional[float] = None
    status: str = "running"  # running | ok | violation | failed
    exit_code: Optional[int] = None
