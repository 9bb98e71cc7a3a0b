"""
Result records

Training trials, aggregated statistics, result table rows and the cost,
throughput and calibration reports.
"""
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..config.constants import EARLY_STOP_MIN_DELTA

FlopConvention = Literal["mac", "2mac"]


class FrameMetrics(BaseModel):
    """Dice and MSD of one evaluated frame. msd is None when undefined."""

    dice: float
    msd: Optional[float] = None

    @property
    def msd_defined(self) -> bool:
        return self.msd is not None


class SplitEvaluation(BaseModel):
    """Metrics over a set of frames; MSD is averaged over defined frames only."""

    frames: int
    dice_mean: float
    msd_mean: Optional[float] = None
    undefined_msd_count: int = 0

    @classmethod
    def from_frames(cls, frames: Sequence[FrameMetrics]) -> "SplitEvaluation":
        if not frames:
            raise ValueError("cannot summarize zero frames")
        defined = [f.msd for f in frames if f.msd is not None]
        return cls(
            frames=len(frames),
            dice_mean=float(np.mean([f.dice for f in frames])),
            msd_mean=float(np.mean(defined)) if defined else None,
            undefined_msd_count=len(frames) - len(defined),
        )


class TrialResult(BaseModel):
    """Outcome of one training run."""

    seed: int
    train_losses: List[float]
    val_losses: List[float]
    best_epoch: int
    epochs_run: int
    test_dice: Optional[float] = None
    test_msd: Optional[float] = None
    undefined_msd_count: int = 0
    wall_seconds: float = 0.0

    @model_validator(mode="after")
    def _best_is_minimum(self) -> "TrialResult":
        if self.val_losses:
            if not 0 <= self.best_epoch < len(self.val_losses):
                raise ValueError(f"best_epoch {self.best_epoch} outside the val-loss series")
            # improvements smaller than the early-stopping delta do not move best_epoch
            if self.val_losses[self.best_epoch] > min(self.val_losses) + EARLY_STOP_MIN_DELTA:
                raise ValueError("best_epoch does not hold the minimum validation loss")
        return self

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock time."""
        return self.model_dump(exclude={"wall_seconds"})


class TrialSummary(BaseModel):
    """mean +/- sample std across trials, plus the best trial value."""

    mean: Optional[float]
    std: Optional[float]
    best: Optional[float]
    n: int

    @classmethod
    def from_values(cls, values: Sequence[Optional[float]], higher_is_better: bool = True) -> "TrialSummary":
        vals = [float(v) for v in values if v is not None]
        if not vals:
            return cls(mean=None, std=None, best=None, n=0)
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        best = max(vals) if higher_is_better else min(vals)
        return cls(mean=float(np.mean(vals)), std=std, best=best, n=len(vals))


CSV_FIELDS = [
    "experiment_id",
    "model",
    "augmentation",
    "hist_match",
    "train_profile",
    "test_profile",
    "trial_seed",
    "dice",
    "msd",
    "undefined_msd_count",
    "epochs_run",
]
"""Results CSV columns. Wall-clock seconds stay out so identical seeds give identical files."""


class ResultsRow(BaseModel):
    """One row per (trial, test profile)."""

    experiment_id: str
    model: str
    augmentation: str = "default"
    hist_match: bool = False
    train_profile: str
    test_profile: str
    trial_seed: int
    dice: float
    msd: Optional[float] = None
    undefined_msd_count: int = 0
    epochs_run: int
    wall_seconds: float = 0.0

    def to_csv_dict(self) -> Dict[str, str]:
        return {
            "experiment_id": self.experiment_id,
            "model": self.model,
            "augmentation": self.augmentation,
            "hist_match": "on" if self.hist_match else "off",
            "train_profile": self.train_profile,
            "test_profile": self.test_profile,
            "trial_seed": str(self.trial_seed),
            "dice": f"{self.dice:.6f}",
            "msd": "" if self.msd is None else f"{self.msd:.6f}",
            "undefined_msd_count": str(self.undefined_msd_count),
            "epochs_run": str(self.epochs_run),
        }


class LayerCost(BaseModel):
    name: str
    kind: str
    params: int
    macs: int
    additive: int
    output_shape: Tuple[int, int, int, int]

    def flops(self, convention: FlopConvention) -> int:
        return (2 * self.macs if convention == "2mac" else self.macs) + self.additive


class CostReport(BaseModel):
    """Per-layer parameter and operation counts; totals are sums of the rows."""

    model: str
    input_shape: Tuple[int, int, int, int]
    convention: FlopConvention = "mac"
    layers: List[LayerCost] = Field(default_factory=list)

    @property
    def params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def additive(self) -> int:
        return sum(l.additive for l in self.layers)

    def flops_for(self, convention: FlopConvention) -> int:
        return sum(l.flops(convention) for l in self.layers)

    @property
    def flops(self) -> int:
        return self.flops_for(self.convention)

    def gflops(self, convention: Optional[FlopConvention] = None) -> float:
        return self.flops_for(convention or self.convention) / 1e9

    def totals(self) -> dict:
        return {
            "params": self.params,
            "macs": self.macs,
            "additive": self.additive,
            "flops_mac": self.flops_for("mac"),
            "flops_2mac": self.flops_for("2mac"),
        }


class FpsReport(BaseModel):
    model: str
    frames: int
    elapsed_seconds: float
    fps: float
    warmup_frames: int
    latency_mean_ms: float
    latency_p50_ms: float
    latency_p95_ms: float
    threads: int = 1


class CalibrationRow(BaseModel):
    """One candidate UltraUNet layout against the published accounting."""

    encoder_convs: int
    decoder_convs: int
    params: int
    params_error: float
    gflops_mac: float
    gflops_2mac: float
    flops_error_mac: float
    flops_error_2mac: float
    default: bool = False


class TrialsReport(BaseModel):
    """Per-trial results plus their aggregate."""

    trials: List[TrialResult]
    dice: TrialSummary
    msd: TrialSummary

    @classmethod
    def aggregate(cls, trials: Sequence[TrialResult]) -> "TrialsReport":
        """Mean, sample std and best over trials; MSD ignores trials where it was undefined."""
        return cls(
            trials=list(trials),
            dice=TrialSummary.from_values([t.test_dice for t in trials], higher_is_better=True),
            msd=TrialSummary.from_values([t.test_msd for t in trials], higher_is_better=False),
        )
