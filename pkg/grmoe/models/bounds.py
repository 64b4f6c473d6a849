from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class ConcentrationStats:
    """Spread of the effective logits tilde_kappa_e = kappa_e * a_e(x) for one token."""

    tilde_kappa: np.ndarray
    delta_kappa: float  # max - mean
    gamma_kappa: float  # population variance
    delta_range: float  # max - min
    gaps: np.ndarray  # consecutive differences of the descending sort

    @property
    def n_experts(self) -> int:
        return int(self.tilde_kappa.shape[0])


@dataclass
class BoundReport:
    alpha: float
    observed_entropy: float
    entropy_lower: float
    entropy_upper: float
    observed_topk_mass: Dict[int, float] = field(default_factory=dict)
    topk_lower: Dict[int, float] = field(default_factory=dict)
    topk_lower_raw: Dict[int, float] = field(default_factory=dict)
    entropy_lower_ok: bool = True
    entropy_upper_ok: bool = True
    topk_ok: Dict[int, bool] = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        entropy_ok = self.entropy_lower_ok and self.entropy_upper_ok
        return entropy_ok and all(self.topk_ok.values())

    def slacks(self) -> Dict[str, float]:
        """Signed margins per bound family (negative means violated)."""
        topk = [
            self.observed_topk_mass[k] - self.topk_lower_raw[k]
            for k in self.topk_lower_raw
        ]
        return {
            "entropy_lower": self.observed_entropy - self.entropy_lower,
            "entropy_upper": self.entropy_upper - self.observed_entropy,
            "topk": min(topk) if topk else float("inf"),
        }


@dataclass
class SweepSummary:
    instances: int = 0
    near_tie_instances: int = 0
    violations: int = 0
    min_slack: Dict[str, float] = field(default_factory=dict)
    failures: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "instances": self.instances,
            "near_tie_instances": self.near_tie_instances,
            "violations": self.violations,
            "min_slack": dict(self.min_slack),
            "failures": list(self.failures),
        }


@dataclass
class CollapseSeedResult:
    seed: int
    gamma: float
    rho: float
    kappa_min: float
    kappa_max: float
    bound: Optional[float]
    cv: float
    loads: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass
class CollapseHarnessResult:
    per_seed: List[CollapseSeedResult]
    pooled_cv: float
    stderr: float
    threshold: Optional[float]
    passed: bool
    assumption_violated: bool = False

    def to_dict(self) -> dict:
        return {
            "seeds": [r.seed for r in self.per_seed],
            "pooled_cv": self.pooled_cv,
            "bootstrap_stderr": self.stderr,
            "threshold": self.threshold,
            "passed": self.passed,
            "assumption_violated": self.assumption_violated,
        }
