"""Seed-level aggregation: population statistics, collapse rates, bootstrap errors."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
import pandas as pd

from ..errors import InvalidArgument
from ..models.report import Aggregate, MetricSummary
from ..models.task import EvalMetrics
from .linalg_core import RngState

AGGREGATED_METRICS = ("acc", "cv", "entropy")


def coefficient_of_variation(loads) -> float:
    """Population std / mean of a load vector."""
    loads = np.asarray(loads, dtype=np.float64)
    mean = float(loads.mean())
    if not mean > 0.0:
        raise InvalidArgument(
            f"coefficient of variation needs a positive mean, got {mean}"
        )
    return float(loads.std() / mean)


def _summary(values: np.ndarray) -> MetricSummary:
    return MetricSummary(
        mean=float(values.mean()),
        std=float(values.std()),
        min=float(values.min()),
        max=float(values.max()),
    )


def aggregate(rows: Sequence[EvalMetrics]) -> Aggregate:
    if not rows:
        raise InvalidArgument("cannot aggregate an empty row list")
    table = {
        "acc": np.array([r.accuracy for r in rows]),
        "cv": np.array([r.load_cv for r in rows]),
        "entropy": np.array([r.mean_entropy for r in rows]),
    }
    collapsed = np.array([bool(r.collapsed) for r in rows])
    return Aggregate(
        n=len(rows),
        metrics={name: _summary(np.sort(v)) for name, v in table.items()},
        collapse_rate=float(collapsed.sum() / len(rows)),
    )


def bootstrap_cv_stderr(loads, resamples: int, rng: RngState) -> float:
    """Std of the pooled-load CV across seed resamples (rows of `loads` are seeds)."""
    loads = np.asarray(loads, dtype=np.float64)
    if loads.ndim != 2 or loads.shape[0] < 2:
        raise InvalidArgument(
            "bootstrap needs a seeds x N matrix with at least 2 seeds"
        )
    if resamples < 200:
        raise InvalidArgument(f"bootstrap needs >= 200 resamples, got {resamples}")
    s = loads.shape[0]
    idx = rng.integers(0, s, size=(resamples, s))
    pooled = loads[idx].mean(axis=1)
    cvs = pooled.std(axis=1) / pooled.mean(axis=1)
    return float(cvs.std(ddof=1))


def aggregate_frame(
    rows: pd.DataFrame, by: Iterable[str] = ("method",)
) -> pd.DataFrame:
    """Per-group summaries (population std) of each metric plus collapse rate."""
    by = list(by)
    if rows.empty:
        raise InvalidArgument("cannot aggregate an empty table")
    out = []
    for key, group in rows.groupby(by, sort=True):
        key = key if isinstance(key, tuple) else (key,)
        record = dict(zip(by, key))
        ok = group[~group["diverged"]] if "diverged" in group else group
        for name in AGGREGATED_METRICS:
            values = ok[name].to_numpy(dtype=np.float64)
            if values.size:
                s = _summary(np.sort(values))
                record.update(
                    {
                        f"{name}_mean": s.mean,
                        f"{name}_std": s.std,
                        f"{name}_min": s.min,
                        f"{name}_max": s.max,
                    }
                )
            else:
                stats = ("mean", "std", "min", "max")
                record.update({f"{name}_{stat}": np.nan for stat in stats})
        record["collapse_rate"] = float(group["collapsed"].astype(bool).mean())
        record["seeds"] = int(len(group))
        if "diverged" in group:
            record["diverged"] = int(group["diverged"].astype(bool).sum())
        out.append(record)
    return pd.DataFrame(out)


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Fixed-format CSV so identical results give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
    return path


def write_json(payload: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, ensure_ascii=False, default=float)
    path.write_text(text + "\n", encoding="utf-8")
    return path
