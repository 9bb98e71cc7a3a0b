"""
Architecture configs and graph builders

UltraUNet, the classical reference UNet and the denoising UNet share one
encoder-decoder layer generator. Decoder stages are numbered from the
bottleneck: decoder stage j runs at the resolution of encoder stage
depth - j and merges that stage's output.
"""
from typing import List, Optional, Sequence, Set

from pydantic import BaseModel, ConfigDict, Field

from ..config.constants import (
    DENOISER_CHANNELS,
    GN_GROUPS,
    IMAGE_SIZE,
    REF_UNET_CHANNELS,
    SE_REDUCTION,
    ULTRAUNET_BASE_CHANNELS,
    ULTRAUNET_DEPTH,
)
from .model_graph import GraphValidationError, LayerKind, LayerSpec, ModelGraph


class UltraUNetConfig(BaseModel):
    """Layout of the lightweight UltraUNet."""

    model_config = ConfigDict(extra="forbid")

    in_channels: int = Field(default=1, ge=1)
    base_channels: int = Field(default=ULTRAUNET_BASE_CHANNELS, ge=1)
    depth: int = Field(default=ULTRAUNET_DEPTH, ge=2)
    se_encoder_stages: List[int] = Field(default_factory=lambda: [4, 5])
    se_decoder_stages: List[int] = Field(default_factory=lambda: [1, 2])
    gn_encoder_stages: List[int] = Field(default_factory=lambda: [4, 5])
    se_reduction: int = Field(default=SE_REDUCTION, ge=1)
    gn_groups: int = Field(default=GN_GROUPS, ge=1)
    out_channels: int = Field(default=1, ge=1)
    encoder_convs: int = Field(default=2, ge=1)
    decoder_convs: int = Field(default=3, ge=1)

    @property
    def channel_plan(self) -> List[int]:
        return [self.base_channels * 2**i for i in range(self.depth)]

    def check_layout(self) -> None:
        """
        Validate stage indices and divisibility.

        Raises:
            GraphValidationError: On out-of-range stages or indivisible channels
        """
        plan = self.channel_plan
        for label, stages, upper in (
            ("se_encoder_stages", self.se_encoder_stages, self.depth),
            ("gn_encoder_stages", self.gn_encoder_stages, self.depth),
            ("se_decoder_stages", self.se_decoder_stages, self.depth - 1),
        ):
            bad = [s for s in stages if not 1 <= s <= upper]
            if bad:
                raise GraphValidationError(f"{label} {bad} outside 1..{upper}")
        for s in self.se_encoder_stages:
            if plan[s - 1] % self.se_reduction:
                raise GraphValidationError(
                    f"encoder stage {s}: {plan[s - 1]} channels not divisible by SE reduction {self.se_reduction}"
                )
        for j in self.se_decoder_stages:
            c = plan[self.depth - j - 1]
            if c % self.se_reduction:
                raise GraphValidationError(
                    f"decoder stage {j}: {c} channels not divisible by SE reduction {self.se_reduction}"
                )
        for s in self.gn_encoder_stages:
            if plan[s - 1] % self.gn_groups:
                raise GraphValidationError(
                    f"encoder stage {s}: {plan[s - 1]} channels not divisible by {self.gn_groups} GN groups"
                )


class RefUNetConfig(BaseModel):
    """Classical UNet with concatenation skips."""

    model_config = ConfigDict(extra="forbid")

    in_channels: int = Field(default=1, ge=1)
    channels: List[int] = Field(default_factory=lambda: list(REF_UNET_CHANNELS), min_length=2)
    convs_per_block: int = Field(default=2, ge=1)
    out_channels: int = Field(default=1, ge=1)


class DenoiserConfig(BaseModel):
    """Reduced UNet mapping a noisy image to a clean one."""

    model_config = ConfigDict(extra="forbid")

    channels: List[int] = Field(default_factory=lambda: list(DENOISER_CHANNELS), min_length=2)
    convs_per_block: int = Field(default=2, ge=1)
    residual: bool = True


def _unet_layers(
    channels: Sequence[int],
    in_channels: int,
    out_channels: int,
    encoder_convs: int,
    decoder_convs: int,
    merge: LayerKind,
    se_encoder: Set[int] = frozenset(),
    se_decoder: Set[int] = frozenset(),
    gn_encoder: Set[int] = frozenset(),
    se_reduction: int = SE_REDUCTION,
    gn_groups: int = GN_GROUPS,
) -> List[LayerSpec]:
    depth = len(channels)
    layers: List[LayerSpec] = []
    c_prev = in_channels
    for s in range(1, depth + 1):
        c = channels[s - 1]
        for k in range(1, encoder_convs + 1):
            layers.append(LayerSpec(f"enc{s}.conv{k}", LayerKind.CONV, c_prev, c, kernel=3, padding=1, stage=s))
            if s in gn_encoder:
                layers.append(LayerSpec(f"enc{s}.gn{k}", LayerKind.GROUP_NORM, c, c, stage=s, groups=gn_groups))
            layers.append(LayerSpec(f"enc{s}.relu{k}", LayerKind.RELU, c, c, stage=s))
            c_prev = c
        if s in se_encoder:
            layers.append(LayerSpec(f"enc{s}.se", LayerKind.SE, c, c, stage=s, reduction=se_reduction))
        if s < depth:
            layers.append(LayerSpec(f"enc{s}.skip", LayerKind.SAVE_SKIP, c, c, stage=s, skip=f"enc{s}"))
            layers.append(LayerSpec(f"enc{s}.pool", LayerKind.MAXPOOL, c, c, stage=s))

    for j in range(1, depth):
        t = depth - j
        c = channels[t - 1]
        layers.append(LayerSpec(f"dec{j}.up", LayerKind.UPCONV, c_prev, c, kernel=2, stride=2, stage=j))
        layers.append(LayerSpec(f"dec{j}.merge", merge, c, c, stage=j, skip=f"enc{t}"))
        c_in = 2 * c if merge == LayerKind.MERGE_CONCAT else c
        for k in range(1, decoder_convs + 1):
            layers.append(LayerSpec(f"dec{j}.conv{k}", LayerKind.CONV, c_in, c, kernel=3, padding=1, stage=j))
            layers.append(LayerSpec(f"dec{j}.relu{k}", LayerKind.RELU, c, c, stage=j))
            c_in = c
        if j in se_decoder:
            layers.append(LayerSpec(f"dec{j}.se", LayerKind.SE, c, c, stage=j, reduction=se_reduction))
        c_prev = c

    layers.append(LayerSpec("head", LayerKind.CONV, c_prev, out_channels, kernel=1))
    return layers


def build_ultraunet(
    cfg: Optional[UltraUNetConfig] = None,
    seed: int = 0,
    initialize: bool = True,
    image_size: int = IMAGE_SIZE,
) -> ModelGraph:
    """
    Build UltraUNet: summation skips, SE gates and Group Normalization only
    where the config places them, no normalization in the decoder.

    Args:
        cfg: Layout, defaults to the calibrated configuration
        seed: Weight initialization seed
        initialize: False builds a shape-only skeleton for accounting
        image_size: Side length used to validate the shape flow

    Raises:
        GraphValidationError: On invalid stage indices or shape flow
    """
    cfg = cfg or UltraUNetConfig()
    cfg.check_layout()
    layers = _unet_layers(
        cfg.channel_plan,
        cfg.in_channels,
        cfg.out_channels,
        cfg.encoder_convs,
        cfg.decoder_convs,
        LayerKind.MERGE_SUM,
        se_encoder=set(cfg.se_encoder_stages),
        se_decoder=set(cfg.se_decoder_stages),
        gn_encoder=set(cfg.gn_encoder_stages),
        se_reduction=cfg.se_reduction,
        gn_groups=cfg.gn_groups,
    )
    graph = ModelGraph(
        "ultraunet",
        layers,
        cfg.in_channels,
        downsample_factor=2 ** (cfg.depth - 1),
        seed=seed,
        initialize=initialize,
    )
    graph.validate_io(image_size, cfg.out_channels)
    return graph


def build_ref_unet(
    cfg: Optional[RefUNetConfig] = None,
    seed: int = 0,
    initialize: bool = True,
    image_size: int = IMAGE_SIZE,
) -> ModelGraph:
    """Build the classical reference UNet (concatenation skips)."""
    cfg = cfg or RefUNetConfig()
    layers = _unet_layers(
        cfg.channels,
        cfg.in_channels,
        cfg.out_channels,
        cfg.convs_per_block,
        cfg.convs_per_block,
        LayerKind.MERGE_CONCAT,
    )
    graph = ModelGraph(
        "ref_unet",
        layers,
        cfg.in_channels,
        downsample_factor=2 ** (len(cfg.channels) - 1),
        seed=seed,
        initialize=initialize,
    )
    graph.validate_io(image_size, cfg.out_channels)
    return graph


def build_denoiser(cfg: Optional[DenoiserConfig] = None, seed: int = 0, image_size: int = 64) -> ModelGraph:
    """
    Build the denoising UNet with a linear output head.

    In residual mode the head predicts a correction added to the input and
    starts at zero, so the untrained denoiser is the identity.
    """
    cfg = cfg or DenoiserConfig()
    layers = _unet_layers(
        cfg.channels,
        1,
        1,
        cfg.convs_per_block,
        cfg.convs_per_block,
        LayerKind.MERGE_CONCAT,
    )
    if cfg.residual:
        layers = (
            [LayerSpec("input.skip", LayerKind.SAVE_SKIP, 1, 1, skip="input")]
            + layers
            + [LayerSpec("output.residual", LayerKind.MERGE_SUM, 1, 1, skip="input")]
        )
    graph = ModelGraph(
        "denoiser",
        layers,
        1,
        downsample_factor=2 ** (len(cfg.channels) - 1),
        seed=seed,
    )
    if cfg.residual:
        graph.params["head.weight"].value[...] = 0
    graph.validate_io(image_size, 1)
    return graph
