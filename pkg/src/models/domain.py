"""
Synthetic acquisition profile model
"""
from pydantic import BaseModel, ConfigDict, Field, model_validator


class DomainProfile(BaseModel):
    """
    Parameters of one synthetic acquisition setup.

    Geometry values are fractions of the image side; the probe apex sits
    above the top edge and the fan opens downward.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field(min_length=1)
    apex_offset: float = Field(default=0.15, ge=0.05, le=0.3)
    fan_half_angle_deg: float = Field(default=40.0, ge=25.0, le=50.0)
    fan_inner_radius: float = Field(default=0.3, ge=0.2, le=0.4)
    fan_outer_radius: float = Field(default=1.1, ge=0.9, le=1.3)
    speckle_sigma: float = Field(default=0.25, ge=0.0, le=0.6)
    tissue_layers: int = Field(default=3, ge=0, le=6)
    tissue_brightness: float = Field(default=0.12, ge=0.0, le=0.5)
    background_level: float = Field(default=0.15, ge=0.02, le=0.4)
    contour_gain: float = Field(default=0.9, ge=0.3, le=1.0)
    gamma: float = Field(default=1.0, ge=0.5, le=2.0)
    blur_sigma: float = Field(default=1.0, ge=0.0, le=3.0)
    band_half_thickness: float = Field(default=3.0, ge=2.0, le=4.0)
    depth_min: float = Field(default=0.45, ge=0.35, le=0.7)
    depth_max: float = Field(default=0.6, ge=0.35, le=0.7)
    curvature_min: float = Field(default=0.15, ge=0.05, le=0.5)
    curvature_max: float = Field(default=0.35, ge=0.05, le=0.5)

    @model_validator(mode="after")
    def _ordered_ranges(self) -> "DomainProfile":
        if self.depth_min > self.depth_max:
            raise ValueError("depth_min must not exceed depth_max")
        if self.curvature_min > self.curvature_max:
            raise ValueError("curvature_min must not exceed curvature_max")
        if self.fan_inner_radius >= self.fan_outer_radius:
            raise ValueError("fan_inner_radius must be below fan_outer_radius")
        return self
