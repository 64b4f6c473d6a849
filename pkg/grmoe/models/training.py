from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .bank import Amortizer, ExpertBank

METRICS_COLUMNS = (
    "step",
    "acc",
    "cv",
    "entropy",
    "max_overlap",
    "collapsed",
    "kappa_min",
    "kappa_max",
    "defect",
)


@dataclass(frozen=True)
class LossParts:
    total: float
    task_ce: float
    reg: float


@dataclass(eq=False)
class Gradients:
    """Euclidean gradients for frames (N x d x k), kappas and amortizer weights."""

    frames: np.ndarray
    kappas: np.ndarray
    amortizer: Optional[Dict[str, np.ndarray]] = None
    loss: Optional[LossParts] = None


@dataclass(frozen=True, eq=False)
class RouterParams:
    bank: ExpertBank
    amortizer: Optional[Amortizer] = None


@dataclass(eq=False)
class OptimState:
    """Adam moments keyed by parameter name, frame moments in ambient coordinates."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    skipped: int = 0


@dataclass(frozen=True)
class MetricsRow:
    step: int
    acc: float
    cv: float
    entropy: float
    max_overlap: float
    collapsed: bool
    kappa_min: float
    kappa_max: float
    defect: float


@dataclass
class MetricsLog:
    rows: List[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        self.rows.append(row)

    @property
    def last(self) -> Optional[MetricsRow]:
        return self.rows[-1] if self.rows else None

    def records(self) -> List[dict]:
        return [asdict(r) for r in self.rows]


@dataclass(eq=False)
class TrainResult:
    params: RouterParams
    metrics: MetricsLog
    state: OptimState
    rng_state: dict
