"""
Analytic parameter and FLOP accounting

Per-layer counts derived from the layer list and the propagated shapes;
no forward pass is run, so shape-only skeleton graphs can be counted.

Additive (non-MAC) terms per layer:
- conv / upconv bias: 1 per output element
- ReLU: 1 per element
- Group Normalization: 8 per element
- 2x2 max-pool: 3 comparisons per output element
- summation skip: 1 per element; concatenation: 0
- SE: pooling and scaling 1 per element each, FC bias adds, ReLU and
  sigmoid (4 per element) on the squeezed vector; FC products are MACs
"""
import logging
from math import prod
from typing import Tuple

from ..models.model_graph import LayerKind, LayerSpec, ModelGraph
from ..models.results import CostReport, FlopConvention, LayerCost

logger = logging.getLogger(__name__)

GN_OPS_PER_ELEMENT = 8
"""mean, variance, normalize and affine, counted as 8 ops per element"""

SIGMOID_OPS_PER_ELEMENT = 4
"""exp, add, divide and negate"""

MAXPOOL_OPS_PER_OUTPUT = 3
"""three comparisons pick the max of a 2x2 window"""


def count_params(graph: ModelGraph) -> int:
    """
    Total element count of every parameter tensor, including biases and GN affine terms.

    Example:
        single 3x3 conv 1 -> 24 with bias: 9 * 1 * 24 + 24 = 240
    """
    return sum(prod(shape) for shape in graph.param_shapes().values())


def _layer_cost(
    layer: LayerSpec,
    in_shape: Tuple[int, int, int, int],
    out_shape: Tuple[int, int, int, int],
) -> Tuple[int, int]:
    """(macs, additive) for one layer."""
    n, c_in, h_in, w_in = in_shape
    _, c_out, h_out, w_out = out_shape
    out_elems = prod(out_shape)
    kind = layer.kind

    if kind == LayerKind.CONV:
        macs = layer.kernel**2 * c_in * c_out * h_out * w_out * n
        return macs, out_elems
    if kind == LayerKind.UPCONV:
        # every output pixel receives exactly one kernel tap per input channel
        return c_in * c_out * h_out * w_out * n, out_elems
    if kind == LayerKind.RELU:
        return 0, out_elems
    if kind == LayerKind.GROUP_NORM:
        return 0, GN_OPS_PER_ELEMENT * out_elems
    if kind == LayerKind.MAXPOOL:
        return 0, MAXPOOL_OPS_PER_OUTPUT * out_elems
    if kind == LayerKind.MERGE_SUM:
        return 0, out_elems
    if kind == LayerKind.SE:
        hidden = c_in // layer.reduction
        macs = n * (c_in * hidden + hidden * c_in)
        additive = (
            prod(in_shape)  # global average pool
            + n * (hidden + c_in)  # FC biases
            + n * hidden  # ReLU
            + n * SIGMOID_OPS_PER_ELEMENT * c_in
            + out_elems  # channel scaling
        )
        return macs, additive
    return 0, 0


def count_flops(
    graph: ModelGraph,
    input_shape: Tuple[int, int, int, int],
    convention: FlopConvention = "mac",
) -> CostReport:
    """
    Per-layer cost report.

    Args:
        graph: Model graph (may be a shape-only skeleton)
        input_shape: (N, C, H, W)
        convention: "mac" counts one FLOP per MAC, "2mac" counts two

    Returns:
        CostReport whose totals are the sums of its rows

    Raises:
        GraphValidationError: If the shapes do not flow through the graph
    """
    out_shapes = graph.infer_shapes(tuple(input_shape))
    rows = []
    current = tuple(input_shape)
    for layer, out_shape in zip(graph.layers, out_shapes):
        macs, additive = _layer_cost(layer, current, out_shape)
        params = sum(prod(s) for s in layer.param_shapes().values())
        rows.append(
            LayerCost(
                name=layer.name,
                kind=layer.kind.value,
                params=params,
                macs=macs,
                additive=additive,
                output_shape=out_shape,
            )
        )
        current = out_shape

    report = CostReport(model=graph.name, input_shape=tuple(input_shape), convention=convention, layers=rows)
    logger.debug(
        f"{graph.name}: {report.params:,} params, {report.macs / 1e9:.3f} GMACs at {tuple(input_shape)}"
    )
    return report
