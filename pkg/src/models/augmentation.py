"""
Augmentation policy models

AugPolicy holds the sampling probabilities; AugPlan is one sampled,
ordered plan. Denoising never appears together with PSF blur or speckle.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config.constants import (
    DEGRADE_PROBABILITY,
    DENOISE_PROBABILITY,
    FLIP_PROBABILITY,
    SPECKLE_SIGMA_RANGE,
)


class AugPolicy(BaseModel):
    """
    Probabilistic augmentation sampler settings.

    A plan flips with p_flip, then takes exactly one branch: degradation
    (PSF and/or speckle) with p_degrade, denoising with p_denoise, or none.
    Disabled augmentations move their branch mass to "none".
    """

    model_config = ConfigDict(extra="forbid")

    p_flip: float = Field(default=FLIP_PROBABILITY, ge=0.0, le=1.0)
    p_degrade: float = Field(default=DEGRADE_PROBABILITY, ge=0.0, le=1.0)
    p_denoise: float = Field(default=DENOISE_PROBABILITY, ge=0.0, le=1.0)
    enable_flip: bool = True
    enable_psf: bool = True
    enable_speckle: bool = True
    enable_denoise: bool = True
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _branches_fit(self) -> "AugPolicy":
        if self.p_degrade + self.p_denoise > 1.0 + 1e-12:
            raise ValueError(
                f"p_degrade + p_denoise must not exceed 1, got {self.p_degrade + self.p_denoise}"
            )
        return self

    @property
    def effective_flip(self) -> float:
        return self.p_flip if self.enable_flip else 0.0

    @property
    def effective_degrade(self) -> float:
        return self.p_degrade if (self.enable_psf or self.enable_speckle) else 0.0

    @property
    def effective_denoise(self) -> float:
        return self.p_denoise if self.enable_denoise else 0.0

    @property
    def label(self) -> str:
        """Short name of the enabled intensity augmentations, e.g. 'psf+speckle'."""
        parts = [
            name
            for name, on in (("psf", self.enable_psf), ("speckle", self.enable_speckle), ("denoise", self.enable_denoise))
            if on
        ]
        return "+".join(parts) if parts else "none"


@dataclass(frozen=True)
class AugPlan:
    flip: bool = False
    psf: bool = False
    speckle: bool = False
    denoise: bool = False

    @property
    def steps(self) -> Tuple[str, ...]:
        """Fixed application order: flip, then PSF then speckle, or denoise."""
        order = (("flip", self.flip), ("psf", self.psf), ("speckle", self.speckle), ("denoise", self.denoise))
        return tuple(name for name, on in order if on)

    @property
    def branch(self) -> str:
        if self.denoise:
            return "denoise"
        if self.psf or self.speckle:
            return "degrade"
        return "none"


class SpeckleParams(BaseModel):
    """Multiplicative speckle scale."""

    sigma: float = Field(ge=0.0)

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "SpeckleParams":
        lo, hi = SPECKLE_SIGMA_RANGE
        return cls(sigma=float(rng.uniform(lo, hi)))
