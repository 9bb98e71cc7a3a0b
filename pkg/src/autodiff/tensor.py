"""
Tensor storage helpers

Tensors are plain NumPy arrays. Activations are rank 4 (N, C, H, W); biases,
normalization affine terms and fully connected weights keep their natural
rank. Production code runs in float32; gradient verification switches the
whole code path to float64 through the ``default_dtype`` context.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, Tuple

import numpy as np


class ShapeError(ValueError):
    """Raised when a tensor shape violates an operator contract"""
    pass


_DTYPE: ContextVar[type] = ContextVar("ultraseg_dtype", default=np.float32)


def get_dtype() -> type:
    """Return the floating dtype new tensors are created with."""
    return _DTYPE.get()


@contextmanager
def default_dtype(dtype: type) -> Iterator[None]:
    """
    Temporarily change the dtype used for new tensors.

    Example:
        with default_dtype(np.float64):
            graph = build_ultraunet(cfg, seed=0)  # float64 weights
    """
    token = _DTYPE.set(dtype)
    try:
        yield
    finally:
        _DTYPE.reset(token)


def as_tensor4(array, name: str = "input") -> np.ndarray:
    """
    Validate and convert an array-like into a rank-4 tensor.

    Args:
        array: Anything np.asarray accepts
        name: Used in the error message

    Returns:
        Array of rank 4 in the current default dtype

    Raises:
        ShapeError: If the rank is not 4 or any dimension is zero
    """
    arr = np.asarray(array, dtype=get_dtype())
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (N, C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {arr.shape}")
    return arr


@dataclass(eq=False)
class Param:
    """A learnable tensor with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    has_grad: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.value.shape:
            raise ShapeError(
                f"gradient for '{self.name}' has shape {grad.shape}, "
                f"parameter has {self.value.shape}"
            )
        self.grad += grad.astype(self.grad.dtype, copy=False)
        self.has_grad = True

    def zero_grad(self) -> None:
        self.grad.fill(0)
        self.has_grad = False
