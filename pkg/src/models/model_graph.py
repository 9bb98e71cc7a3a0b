"""
Declarative model graphs

A ModelGraph is an ordered list of LayerSpecs plus a parameter table. The
same description drives forward execution, shape validation, parameter
counting and FLOP counting.
"""
import logging
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import ops
from ..autodiff.tape import Tape, Var
from ..autodiff.tensor import Param, as_tensor4, get_dtype
from ..config.constants import GN_EPS

logger = logging.getLogger(__name__)


class GraphValidationError(ValueError):
    """Raised when a graph or architecture config is inconsistent"""
    pass


class LayerKind(str, Enum):
    CONV = "conv"
    UPCONV = "upconv"
    GROUP_NORM = "group_norm"
    RELU = "relu"
    SE = "se"
    MAXPOOL = "maxpool"
    SAVE_SKIP = "save_skip"
    MERGE_SUM = "merge_sum"
    MERGE_CONCAT = "merge_concat"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a ModelGraph."""

    name: str
    kind: LayerKind
    in_channels: int
    out_channels: int
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    stage: int = 0
    groups: int = 0
    reduction: int = 0
    skip: Optional[str] = None

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Shapes of the parameters this layer owns, keyed by full name."""
        if self.kind == LayerKind.CONV:
            return {
                f"{self.name}.weight": (self.out_channels, self.in_channels, self.kernel, self.kernel),
                f"{self.name}.bias": (self.out_channels,),
            }
        if self.kind == LayerKind.UPCONV:
            return {
                f"{self.name}.weight": (self.in_channels, self.out_channels, 2, 2),
                f"{self.name}.bias": (self.out_channels,),
            }
        if self.kind == LayerKind.GROUP_NORM:
            return {
                f"{self.name}.gamma": (self.in_channels,),
                f"{self.name}.beta": (self.in_channels,),
            }
        if self.kind == LayerKind.SE:
            c, r = self.in_channels, self.in_channels // self.reduction
            return {
                f"{self.name}.fc1.weight": (r, c),
                f"{self.name}.fc1.bias": (r,),
                f"{self.name}.fc2.weight": (c, r),
                f"{self.name}.fc2.bias": (c,),
            }
        return {}

    def fan_in(self) -> int:
        if self.kind == LayerKind.CONV:
            return self.in_channels * self.kernel * self.kernel
        # each upconv output pixel sees one tap per input channel
        return self.in_channels


def _param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def init_param(layer: LayerSpec, name: str, shape: Tuple[int, ...], seed: int) -> np.ndarray:
    """
    Deterministic initial value for one parameter.

    Kaiming fan-in normal for conv, upconv and FC weights, zeros for biases
    and GN beta, ones for GN gamma. The generator is keyed by (seed, name),
    so graphs that share layer names share initial values.
    """
    dtype = get_dtype()
    if name.endswith(".bias") or name.endswith(".beta"):
        return np.zeros(shape, dtype=dtype)
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=dtype)
    if layer.kind == LayerKind.SE:
        fan_in = shape[1]
    else:
        fan_in = layer.fan_in()
    std = np.sqrt(2.0 / fan_in)
    return (_param_rng(seed, name).standard_normal(shape) * std).astype(dtype)


class ModelGraph:
    """
    Executable architecture description.

    Attributes:
        name: Model name used in reports
        layers: Ordered LayerSpecs
        params: Parameter table, empty for a shape-only skeleton
        in_channels: Expected input channels
        downsample_factor: Input H and W must be divisible by this
    """

    def __init__(
        self,
        name: str,
        layers: Sequence[LayerSpec],
        in_channels: int,
        downsample_factor: int = 1,
        seed: int = 0,
        initialize: bool = True,
    ):
        self.name = name
        self.layers: List[LayerSpec] = list(layers)
        self.in_channels = in_channels
        self.downsample_factor = downsample_factor
        self.seed = seed

        shapes: Dict[str, Tuple[int, ...]] = {}
        layer_names = set()
        for layer in self.layers:
            if layer.name in layer_names:
                raise GraphValidationError(f"duplicate layer name '{layer.name}'")
            layer_names.add(layer.name)
            for pname, shape in layer.param_shapes().items():
                if pname in shapes:
                    raise GraphValidationError(f"duplicate parameter name '{pname}'")
                shapes[pname] = shape
        self._param_shapes = shapes

        self.params: Dict[str, Param] = {}
        if initialize:
            for layer in self.layers:
                for pname, shape in layer.param_shapes().items():
                    self.params[pname] = Param(pname, init_param(layer, pname, shape, seed))

    @property
    def initialized(self) -> bool:
        return bool(self.params) or not self._param_shapes

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return dict(self._param_shapes)

    def parameters(self) -> Iterator[Param]:
        return iter(self.params.values())

    def infer_shapes(self, input_shape: Tuple[int, int, int, int]) -> List[Tuple[int, int, int, int]]:
        """
        Propagate an input shape through every layer.

        Returns:
            Output shape of each layer, in layer order

        Raises:
            GraphValidationError: On any channel, spatial or skip mismatch
        """
        if len(input_shape) != 4 or min(input_shape) < 1:
            raise GraphValidationError(f"input shape must be positive (N, C, H, W), got {input_shape}")
        n, c, h, w = input_shape
        if c != self.in_channels:
            raise GraphValidationError(
                f"{self.name} expects {self.in_channels} input channels, got {input_shape}"
            )
        f = self.downsample_factor
        if h % f or w % f:
            raise GraphValidationError(
                f"{self.name}: spatial size {h}x{w} is not divisible by {f}"
            )

        skips: Dict[str, Tuple[int, int, int]] = {}
        out: List[Tuple[int, int, int, int]] = []
        for layer in self.layers:
            kind = layer.kind
            if kind in (LayerKind.CONV, LayerKind.UPCONV, LayerKind.GROUP_NORM, LayerKind.SE):
                if c != layer.in_channels:
                    raise GraphValidationError(
                        f"layer '{layer.name}' expects {layer.in_channels} channels, receives {c}"
                    )
            if kind == LayerKind.CONV:
                h = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                w = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if h < 1 or w < 1:
                    raise GraphValidationError(f"layer '{layer.name}' collapses the spatial size")
                c = layer.out_channels
            elif kind == LayerKind.UPCONV:
                h, w, c = 2 * h, 2 * w, layer.out_channels
            elif kind == LayerKind.GROUP_NORM:
                if c % layer.groups:
                    raise GraphValidationError(
                        f"layer '{layer.name}': {c} channels not divisible by {layer.groups} groups"
                    )
            elif kind == LayerKind.SE:
                if layer.reduction < 1 or c % layer.reduction:
                    raise GraphValidationError(
                        f"layer '{layer.name}': {c} channels not divisible by reduction {layer.reduction}"
                    )
            elif kind == LayerKind.MAXPOOL:
                if h % 2 or w % 2:
                    raise GraphValidationError(
                        f"layer '{layer.name}' pools odd spatial size {h}x{w}"
                    )
                h, w = h // 2, w // 2
            elif kind == LayerKind.SAVE_SKIP:
                skips[layer.skip] = (c, h, w)
            elif kind in (LayerKind.MERGE_SUM, LayerKind.MERGE_CONCAT):
                if layer.skip not in skips:
                    raise GraphValidationError(f"layer '{layer.name}' merges unknown skip '{layer.skip}'")
                sc, sh, sw = skips.pop(layer.skip)
                if (sh, sw) != (h, w):
                    raise GraphValidationError(
                        f"layer '{layer.name}': skip {(sc, sh, sw)} and decoder {(c, h, w)} differ spatially"
                    )
                if kind == LayerKind.MERGE_SUM:
                    if sc != c:
                        raise GraphValidationError(
                            f"layer '{layer.name}': summation skip {(sc, sh, sw)} "
                            f"does not match decoder tensor {(c, h, w)}"
                        )
                else:
                    c = sc + c
            out.append((n, c, h, w))
        if skips:
            raise GraphValidationError(f"{self.name}: skips never merged: {sorted(skips)}")
        return out

    def validate_io(self, size: int, out_channels: int) -> None:
        """Check that a 1 x C x size x size input maps to 1 x out_channels x size x size."""
        shapes = self.infer_shapes((1, self.in_channels, size, size))
        expected = (1, out_channels, size, size)
        if not shapes or shapes[-1] != expected:
            got = shapes[-1] if shapes else None
            raise GraphValidationError(f"{self.name}: output shape {got}, expected {expected}")

    def _p(self, name: str, tape: Optional[Tape]) -> Var:
        param = self.params[name]
        return tape.watch(param) if tape is not None else Var(param.value)

    def forward(self, inputs, tape: Optional[Tape] = None, neutral_se: bool = False) -> Var:
        """
        Run the graph.

        Args:
            inputs: (N, C, H, W) array or Var
            tape: Record onto this tape; None takes the inference path
            neutral_se: Replace every SE scale vector with ones

        Returns:
            Output Var (logits for segmentation models)
        """
        if not self.params and self._param_shapes:
            raise GraphValidationError(f"{self.name} was built without parameters")
        x = inputs if isinstance(inputs, Var) else Var(as_tensor4(inputs))
        _, _, h, w = x.value.shape
        f = self.downsample_factor
        if h % f or w % f:
            raise GraphValidationError(f"{self.name}: spatial size {h}x{w} is not divisible by {f}")
        if x.value.shape[1] != self.in_channels:
            raise GraphValidationError(
                f"{self.name} expects {self.in_channels} input channels, got {x.value.shape}"
            )

        skips: Dict[str, Var] = {}
        for layer in self.layers:
            kind = layer.kind
            if kind == LayerKind.CONV:
                x = ops.conv2d(
                    x,
                    self._p(f"{layer.name}.weight", tape),
                    self._p(f"{layer.name}.bias", tape),
                    stride=layer.stride,
                    padding=layer.padding,
                )
            elif kind == LayerKind.UPCONV:
                x = ops.transposed_conv2d(
                    x, self._p(f"{layer.name}.weight", tape), self._p(f"{layer.name}.bias", tape)
                )
            elif kind == LayerKind.GROUP_NORM:
                x = ops.group_norm(
                    x,
                    self._p(f"{layer.name}.gamma", tape),
                    self._p(f"{layer.name}.beta", tape),
                    groups=layer.groups,
                    eps=GN_EPS,
                )
            elif kind == LayerKind.RELU:
                x = ops.relu(x)
            elif kind == LayerKind.SE:
                x = ops.se_gate(
                    x,
                    self._p(f"{layer.name}.fc1.weight", tape),
                    self._p(f"{layer.name}.fc1.bias", tape),
                    self._p(f"{layer.name}.fc2.weight", tape),
                    self._p(f"{layer.name}.fc2.bias", tape),
                    neutral=neutral_se,
                )
            elif kind == LayerKind.MAXPOOL:
                x = ops.maxpool2x2(x)
            elif kind == LayerKind.SAVE_SKIP:
                skips[layer.skip] = x
            elif kind == LayerKind.MERGE_SUM:
                x = ops.add(x, skips.pop(layer.skip))
            elif kind == LayerKind.MERGE_CONCAT:
                x = ops.concat(skips.pop(layer.skip), x)
        return x

    def predict(self, inputs) -> np.ndarray:
        """Inference-path forward returning the raw output array."""
        return self.forward(inputs).value

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """
        Replace parameter values in place.

        Raises:
            GraphValidationError: On missing, unexpected or mis-shaped tensors
        """
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise GraphValidationError(
                f"{self.name}: state mismatch, missing={sorted(missing)[:5]} "
                f"unexpected={sorted(unexpected)[:5]}"
            )
        for name, value in state.items():
            param = self.params[name]
            if value.shape != param.value.shape:
                raise GraphValidationError(
                    f"tensor '{name}' has shape {value.shape}, {self.name} expects {param.value.shape}"
                )
            param.value[...] = value

    def __repr__(self) -> str:
        return f"ModelGraph(name={self.name!r}, layers={len(self.layers)}, params={len(self._param_shapes)})"


def forward(graph: ModelGraph, inputs, record_tape: bool = False, neutral_se: bool = False) -> Var:
    """
    Run a graph, optionally recording a fresh tape.

    With record_tape off no tape is allocated. With it on the returned Var
    carries its tape in ``.tape``.
    """
    tape = Tape() if record_tape else None
    return graph.forward(inputs, tape=tape, neutral_se=neutral_se)
