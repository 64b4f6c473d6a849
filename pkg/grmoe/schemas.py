from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import settings

SUPPORTED_METHODS = (
    "grmoe",
    "grmoe_amortized",
    "softmax_top1",
    "softmax_dense",
    "vmf_gate",
    "hash",
    "analytic",
)
BASELINE_KINDS = ("softmax_top1", "softmax_dense", "vmf_gate", "hash")
ABLATION_AXES = ("beta", "rho0", "rank", "sampled_pairs")

PairCount = Union[int, Literal["full"]]


def _default_seeds() -> List[int]:
    return list(settings.default_seeds)


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------
# Task / training
# ---------------------------


class TaskSpec(_Config):
    N: int = Field(8, ge=2, description="Number of experts / mixture components")
    d: int = Field(128, ge=1, description="Ambient dimension")
    k: int = Field(8, ge=1, description="Rank of each ground-truth subspace")
    rho_star: float = Field(
        0.1, ge=0.0, lt=1.0, description="Target mean pairwise overlap / k"
    )
    sigma2: float = Field(0.1, ge=0.0, description="Off-subspace noise variance")
    seed: Optional[int] = Field(
        None, description="Fixed task seed; None regenerates the task per run seed"
    )

    @model_validator(mode="after")
    def _blocks_fit(self) -> "TaskSpec":
        if self.N * self.k > self.d:
            raise ValueError(f"N*k = {self.N * self.k} exceeds d = {self.d}")
        return self


class TrainConfig(_Config):
    beta: float = Field(0.01, ge=0.0)
    rho0: float = Field(0.3, gt=0.0, lt=1.0)
    alpha_train: float = 1.0
    pairs: Optional[PairCount] = Field(
        None, description="Sampled pairs per step; None means 4N"
    )
    rank: Optional[int] = Field(
        None, ge=1, description="Router frame rank; None uses the task rank"
    )
    lr_frames: float = Field(1e-2, gt=0.0)
    lr_kappa: float = Field(1e-2, gt=0.0)
    lr_amortizer: float = Field(1e-2, gt=0.0)
    lr_baseline: float = Field(1e-2, gt=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    steps: int = Field(2000, ge=0)
    batch_size: int = Field(256, ge=1)
    eval_every: int = Field(200, ge=1)
    n_eval: int = Field(2000, ge=1)
    kappa_init: float = Field(1.0, gt=0.0)
    amortizer_hidden: int = Field(32, ge=1)
    seed: int = 0

    @field_validator("alpha_train")
    @classmethod
    def _alpha_fixed(cls, v: float) -> float:
        if v != 1.0:
            raise ValueError("training runs at alpha = 1")
        return v

    @field_validator("pairs")
    @classmethod
    def _pairs_positive(cls, v: Optional[PairCount]) -> Optional[PairCount]:
        if isinstance(v, int) and v < 1:
            raise ValueError("pairs must be >= 1 or 'full'")
        return v

    def pair_count(self, n_experts: int) -> Optional[int]:
        """Resolved M; None means every pair."""
        if self.pairs == "full":
            return None
        return 4 * n_experts if self.pairs is None else int(self.pairs)


# ---------------------------
# Subcommand configs
# ---------------------------


class BenchConfig(_Config):
    task: TaskSpec = Field(default_factory=TaskSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    methods: List[str] = Field(default_factory=lambda: list(SUPPORTED_METHODS))
    seeds: List[int] = Field(default_factory=_default_seeds)
    n_eval: int = Field(2000, ge=1)
    threads: int = Field(1, ge=1)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("method list is empty")
        unknown = sorted(set(v) - set(SUPPORTED_METHODS))
        if unknown:
            raise ValueError(f"unsupported methods: {unknown}")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("seed list is empty")
        return v

    @model_validator(mode="after")
    def _eval_size(self) -> "BenchConfig":
        if self.n_eval < 100 * self.task.N:
            raise ValueError(f"n_eval must be >= 100*N = {100 * self.task.N}")
        return self

    @model_validator(mode="after")
    def _analytic_needs_noise(self) -> "BenchConfig":
        if "analytic" in self.methods and not 0.0 < self.task.sigma2 < 1.0:
            raise ValueError("the analytic router needs 0 < sigma2 < 1")
        return self


class TrainRunConfig(_Config):
    task: TaskSpec = Field(default_factory=TaskSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    method: Literal["grmoe", "grmoe_amortized"] = "grmoe"
    with_baseline: bool = Field(
        True, description="Also fit a softmax_dense gate for the temperature contrast"
    )
    seed: int = 0


class AlphaSweepConfig(_Config):
    checkpoint: Optional[str] = None
    alphas: List[float] = Field(
        default_factory=lambda: [0.25 * i for i in range(21)] + [10.0, 20.0, 50.0]
    )
    taus: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    n_eval: int = Field(2000, ge=1)
    eval_seed: int = 0

    @field_validator("alphas")
    @classmethod
    def _alphas_valid(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("alpha list is empty")
        if any(a < 0.0 for a in v):
            raise ValueError("alphas must be >= 0")
        return v

    @field_validator("taus")
    @classmethod
    def _taus_positive(cls, v: List[float]) -> List[float]:
        if any(t <= 0.0 for t in v):
            raise ValueError("temperatures must be > 0")
        return v


class BoundsConfig(_Config):
    instances: int = Field(1000, ge=1)
    n_choices: List[int] = Field(default_factory=lambda: [2, 4, 8, 16])
    d_choices: List[int] = Field(default_factory=lambda: [8, 32])
    kappa_range: Tuple[float, float] = (0.1, 5.0)
    alpha_range: Tuple[float, float] = (0.0, 5.0)
    alpha_zero_only: bool = False
    near_tie_fraction: float = Field(0.1, ge=0.0, le=1.0)
    kmax: Optional[int] = Field(
        None, ge=1, description="Largest top-k checked; None means N-1"
    )
    seed: int = 0
    # negative control: scales the k-th gaps fed to the top-k bound
    fault_gap_scale: float = Field(1.0, gt=0.0)

    @field_validator("n_choices")
    @classmethod
    def _n_valid(cls, v: List[int]) -> List[int]:
        if not v or any(n < 2 for n in v):
            raise ValueError("expert counts must be >= 2")
        return v

    @field_validator("d_choices")
    @classmethod
    def _d_valid(cls, v: List[int]) -> List[int]:
        if not v or any(d < 2 for d in v):
            raise ValueError("dimensions must be >= 2")
        return v

    @field_validator("kappa_range", "alpha_range")
    @classmethod
    def _range_valid(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = v
        if lo < 0.0 or hi < lo:
            raise ValueError(f"invalid range {v}")
        return v

    @model_validator(mode="after")
    def _kappa_positive(self) -> "BoundsConfig":
        if self.kappa_range[0] <= 0.0:
            raise ValueError("concentrations must be > 0")
        return self


class ZValidateConfig(_Config):
    kappas: List[float] = Field(
        default_factory=lambda: [0.0, 0.4, 1.0, 2.0, 4.2, 8.0, 10.0]
    )
    dims: List[Tuple[int, int]] = Field(
        default_factory=lambda: [(32, 8), (128, 16), (768, 48)]
    )
    mc_samples: int = Field(
        1_000_000, ge=0, description="0 skips the Monte Carlo column"
    )
    order: Literal[1, 2] = 1
    seed: int = 0
    tol_regime: float = 0.015
    tol_extended: float = 0.05

    @field_validator("kappas")
    @classmethod
    def _grid_valid(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("kappa grid is empty")
        if any(k < 0.0 for k in v):
            raise ValueError("kappas must be >= 0")
        return v

    @field_validator("dims")
    @classmethod
    def _dims_valid(cls, v: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
        if not v:
            raise ValueError("dimension list is empty")
        for d, k in v:
            if not 1 <= k <= d:
                raise ValueError(f"invalid (d, k) = ({d}, {k})")
        return v

    @field_validator("mc_samples")
    @classmethod
    def _mc_size(cls, v: int) -> int:
        if 0 < v < 1000:
            raise ValueError("mc_samples must be 0 or >= 1000")
        return v


class AblateConfig(_Config):
    which: Literal["beta", "rho0", "rank", "sampled_pairs"] = "beta"
    values: Optional[List[Any]] = Field(
        None, description="Axis values; None uses the axis defaults"
    )
    task: TaskSpec = Field(default_factory=TaskSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    method: Literal["grmoe", "grmoe_amortized"] = "grmoe"
    seeds: List[int] = Field(default_factory=_default_seeds)
    n_eval: int = Field(2000, ge=1)
    threads: int = Field(1, ge=1)

    def axis_values(self) -> List[Any]:
        if self.values is not None:
            return list(self.values)
        n = self.task.N
        defaults: Dict[str, List[Any]] = {
            "beta": [0.0, 0.005, 0.01, 0.02],
            "rho0": [0.1, 0.2, 0.3, 0.5],
            "rank": [2, 4, 8, 16],
            "sampled_pairs": [n, 2 * n, 4 * n, "full"],
        }
        return defaults[self.which]

    @model_validator(mode="after")
    def _values_valid(self) -> "AblateConfig":
        if self.values is not None and not self.values:
            raise ValueError("axis value list is empty")
        # each value must yield a valid TrainConfig
        for v in self.axis_values():
            self.train_for(v)
        return self

    def train_for(self, value: Any) -> TrainConfig:
        field_name = {
            "beta": "beta",
            "rho0": "rho0",
            "rank": "rank",
            "sampled_pairs": "pairs",
        }[self.which]
        return TrainConfig.model_validate(
            {**self.train.model_dump(), field_name: value}
        )


class CollapseHarnessConfig(_Config):
    N: int = Field(8, ge=2)
    d: int = Field(128, ge=2)
    k: int = Field(8, ge=1)
    sigma2: float = Field(0.05, gt=0.0, lt=1.0)
    alpha: float = Field(0.1, ge=0.0)
    n_per_expert: int = Field(500, ge=1)
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    resamples: int = Field(1000, ge=200)
    bootstrap_seed: int = 0
    # per-expert multipliers on the analytic concentration; None keeps them equal
    kappa_scales: Optional[List[float]] = None
    # negative control: scales the margin in the exponent of the CV bound
    fault_gap_scale: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _blocks_fit(self) -> "CollapseHarnessConfig":
        if self.N * self.k > self.d:
            raise ValueError(f"N*k = {self.N * self.k} exceeds d = {self.d}")
        if len(self.seeds) < 2:
            raise ValueError("the bootstrap needs at least 2 seeds")
        if self.kappa_scales is not None:
            if len(self.kappa_scales) != self.N:
                raise ValueError(
                    f"kappa_scales needs {self.N} entries, "
                    f"got {len(self.kappa_scales)}"
                )
            if any(not s > 0.0 for s in self.kappa_scales):
                raise ValueError("kappa_scales must be positive")
        return self


SUBCOMMAND_CONFIGS = {
    "bench": BenchConfig,
    "train": TrainRunConfig,
    "alpha-sweep": AlphaSweepConfig,
    "bounds": BoundsConfig,
    "z-validate": ZValidateConfig,
    "ablate": AblateConfig,
    "collapse": CollapseHarnessConfig,
}
