"""
Training configuration models

Loss, optimizer/schedule and denoiser-training settings with validation.
"""
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config.constants import (
    BATCH_SIZE,
    DENOISER_EPOCHS,
    DENOISER_VAL_FRACTION,
    DICE_EPS,
    DICE_WEIGHT,
    FOCAL_ALPHA,
    FOCAL_GAMMA,
    FOCAL_WEIGHT,
    LEARNING_RATE,
    MAX_EPOCHS,
    PATIENCE,
    POLY_POWER,
    TRIALS,
)


class LossConfig(BaseModel):
    """Weights and constants of the combined Dice-Focal loss."""

    model_config = ConfigDict(extra="forbid")

    w_d: float = Field(default=DICE_WEIGHT, ge=0.0, le=1.0)
    w_f: float = Field(default=FOCAL_WEIGHT, ge=0.0, le=1.0)
    alpha: float = Field(default=FOCAL_ALPHA, gt=0.0, lt=1.0)
    gamma: float = Field(default=FOCAL_GAMMA, ge=0.0)
    eps: float = Field(default=DICE_EPS, gt=0.0)
    per_class_alpha: bool = False

    @model_validator(mode="after")
    def _weights_sum_to_one(self) -> "LossConfig":
        if abs(self.w_d + self.w_f - 1.0) > 1e-9:
            raise ValueError(f"w_d + w_f must equal 1, got {self.w_d} + {self.w_f}")
        return self


class TrainConfig(BaseModel):
    """Segmentation training protocol."""

    model_config = ConfigDict(extra="forbid")

    lr0: float = Field(default=LEARNING_RATE, gt=0.0)
    batch: int = Field(default=BATCH_SIZE, ge=1)
    epochs_max: int = Field(default=MAX_EPOCHS, ge=1)
    patience: int = Field(default=PATIENCE, ge=1)
    poly_power: float = Field(default=POLY_POWER, gt=0.0)
    trials: int = Field(default=TRIALS, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _patience_within_epochs(self) -> "TrainConfig":
        if self.patience > self.epochs_max:
            raise ValueError(
                f"patience ({self.patience}) must not exceed epochs_max ({self.epochs_max})"
            )
        return self


class DenoiserTrainConfig(BaseModel):
    """Settings for training the augmentation denoiser."""

    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=LEARNING_RATE, gt=0.0)
    epochs: int = Field(default=DENOISER_EPOCHS, ge=1)
    batch: int = Field(default=4, ge=1)
    val_fraction: float = Field(default=DENOISER_VAL_FRACTION, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
