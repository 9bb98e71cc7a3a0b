"""
Run configuration

A RunConfig is one JSON document selecting the architecture, training,
loss, augmentation and data settings of a run. Unknown keys are rejected
at every level so typos fail loudly.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..models.architectures import DenoiserConfig, RefUNetConfig, UltraUNetConfig
from ..models.augmentation import AugPolicy
from ..models.domain import DomainProfile
from ..models.training import DenoiserTrainConfig, LossConfig, TrainConfig
from .constants import IMAGE_SIZE, MIN_DATASET_SIZE

logger = logging.getLogger(__name__)

ModelName = Literal["ultraunet", "ref_unet"]
HistMatchMode = Literal["on", "off", "both"]


class ConfigError(ValueError):
    """Raised when a run configuration cannot be loaded or validated"""
    pass


class DataConfig(BaseModel):
    """Which synthetic profiles to generate and how."""

    model_config = ConfigDict(extra="forbid")

    train_profile: str = "bright-wide"
    # empty means every other known profile
    test_profiles: List[str] = Field(default_factory=list)
    count: int = Field(default=100, ge=MIN_DATASET_SIZE)
    image_size: int = Field(default=IMAGE_SIZE, ge=16)
    hist_match: HistMatchMode = "off"
    seed: int = Field(default=0, ge=0)


class RunConfig(BaseModel):
    """Complete description of one experiment run."""

    model_config = ConfigDict(extra="forbid")

    models: List[ModelName] = Field(default_factory=lambda: ["ultraunet"], min_length=1)
    ultraunet: UltraUNetConfig = Field(default_factory=UltraUNetConfig)
    ref_unet: RefUNetConfig = Field(default_factory=RefUNetConfig)
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    augmentation: AugPolicy = Field(default_factory=AugPolicy)
    denoiser_training: DenoiserTrainConfig = Field(default_factory=DenoiserTrainConfig)
    denoiser_weights: Optional[str] = None
    data: DataConfig = Field(default_factory=DataConfig)
    profiles: Dict[str, DomainProfile] = Field(default_factory=dict)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _image_size_fits_models(self) -> "RunConfig":
        factors = {
            "ultraunet": 2 ** (self.ultraunet.depth - 1),
            "ref_unet": 2 ** (len(self.ref_unet.channels) - 1),
        }
        for name in self.models:
            if self.data.image_size % factors[name]:
                raise ValueError(
                    f"data.image_size {self.data.image_size} is not divisible by {factors[name]} "
                    f"as {name} requires"
                )
        for key, profile in self.profiles.items():
            if key != profile.name:
                raise ValueError(f"profile key '{key}' does not match its name '{profile.name}'")
        return self


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a RunConfig JSON file

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On invalid JSON or schema violations
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
    try:
        config = RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")
    logger.info(f"Loaded run config from {path}")
    return config
