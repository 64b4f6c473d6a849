from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float  # population
    min: float
    max: float


@dataclass
class Aggregate:
    n: int
    metrics: Dict[str, MetricSummary] = field(default_factory=dict)
    collapse_rate: float = 0.0

    def flat(self) -> Dict[str, float]:
        out: Dict[str, float] = {"n": self.n, "collapse_rate": self.collapse_rate}
        for name, s in self.metrics.items():
            out.update(
                {
                    f"{name}_mean": s.mean,
                    f"{name}_std": s.std,
                    f"{name}_min": s.min,
                    f"{name}_max": s.max,
                }
            )
        return out
