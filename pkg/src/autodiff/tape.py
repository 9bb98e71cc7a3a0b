"""
Gradient tape

Operators in ``ops`` record one TapeNode per application while a tape is
attached to any of their inputs. Node ids are assigned in creation order, so
the reverse of creation order is a reverse topological order of the DAG.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Param, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Var:
    """A value flowing through the graph, optionally tracked by a tape."""

    value: np.ndarray
    tape: Optional["Tape"] = None
    node_id: Optional[int] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None and self.node_id is not None


@dataclass(eq=False)
class TapeNode:
    op: str
    input_ids: Tuple[Optional[int], ...]
    backward_fn: Optional[BackwardFn]
    output_shape: Tuple[int, ...]
    param: Optional[Param] = None


@dataclass(eq=False)
class Tape:
    """Records operator applications for one forward pass."""

    nodes: List[TapeNode] = field(default_factory=list)
    _param_nodes: Dict[str, int] = field(default_factory=dict)

    def watch(self, param: Param) -> Var:
        """
        Return a tracked leaf for a parameter.

        Watching the same parameter twice yields the same node, so a weight
        used in several places accumulates one gradient.
        """
        node_id = self._param_nodes.get(param.name)
        if node_id is None:
            node_id = len(self.nodes)
            self.nodes.append(
                TapeNode("param", (), None, param.value.shape, param=param)
            )
            self._param_nodes[param.name] = node_id
        return Var(param.value, self, node_id)

    def record(
        self,
        op: str,
        inputs: Sequence[Var],
        value: np.ndarray,
        backward_fn: BackwardFn,
    ) -> Var:
        input_ids = tuple(
            v.node_id if v.tape is self else None for v in inputs
        )
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(op, input_ids, backward_fn, value.shape))
        return Var(value, self, node_id)

    def __len__(self) -> int:
        return len(self.nodes)


def record(
    op: str,
    inputs: Sequence[Var],
    value: np.ndarray,
    backward_fn: BackwardFn,
) -> Var:
    """Record on the first attached tape among inputs, or return an untracked Var."""
    tape = next((v.tape for v in inputs if v.tracked), None)
    if tape is None:
        return Var(value)
    return tape.record(op, inputs, value, backward_fn)


def backward(tape: Tape, loss: Var) -> None:
    """
    Propagate d(loss)/d(node) back through the tape into Param.grad.

    Gradients accumulate, so calling backward twice without zeroing doubles
    every parameter gradient.

    Args:
        tape: Tape the loss was recorded on
        loss: Scalar root (any shape with exactly one element)

    Raises:
        ShapeError: If the root holds more than one element
        ValueError: If the root was not recorded on this tape
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {loss.value.shape}")
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("loss was not recorded on this tape")

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.value)}
    for node_id in range(loss.node_id, -1, -1):
        grad = grads.pop(node_id, None)
        if grad is None:
            continue
        node = tape.nodes[node_id]
        if node.param is not None:
            node.param.accumulate(grad)
            continue
        input_grads = node.backward_fn(grad)
        for input_id, input_grad in zip(node.input_ids, input_grads):
            if input_id is None or input_grad is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + input_grad
            else:
                grads[input_id] = input_grad
