"""
Finite-difference gradient verification

Run inside ``default_dtype(np.float64)`` so the analytic path and the central
differences share the 64-bit verification build.
"""
from typing import Callable, Dict, Iterable, List, Sequence

import numpy as np

from .tape import Tape, Var, backward
from .tensor import Param


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Norm-based relative error ||a - n|| / max(||a|| + ||n||, tiny).

    Returns 0.0 when both gradients vanish.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_gradient(
    scalar_fn: Callable[[], float],
    array: np.ndarray,
    eps: float = 1e-6,
) -> np.ndarray:
    """
    Central differences of scalar_fn with respect to every element of array.

    The array is perturbed in place and restored after each element.
    """
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = scalar_fn()
        flat[i] = original - eps
        minus = scalar_fn()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def check_param_gradients(
    loss_fn: Callable[[Tape], Var],
    params: Iterable[Param],
    eps: float = 1e-6,
) -> Dict[str, float]:
    """
    Compare analytic and numeric gradients for each parameter.

    Args:
        loss_fn: Builds the scalar loss on the given tape (watch params on it)
        params: Parameters to verify; their grads are reset first
        eps: Central-difference step

    Returns:
        Mapping param name -> relative error
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    tape = Tape()
    backward(tape, loss_fn(tape))
    analytic = {p.name: p.grad.copy() for p in params}

    def scalar() -> float:
        return float(loss_fn(Tape()).value)

    errors = {}
    for p in params:
        numeric = numeric_gradient(scalar, p.value, eps)
        errors[p.name] = relative_error(analytic[p.name], numeric)
        p.zero_grad()
    return errors


def gradcheck(
    fn: Callable[..., Var],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-6,
) -> List[float]:
    """
    Check fn's gradient with respect to each input array.

    Example:
        errs = gradcheck(lambda x, w, b: reduce_sum(conv2d(x, w, b, padding=1)),
                         [x, w, b])
        assert max(errs) < 1e-3
    """
    params = [Param(f"input{i}", np.array(a, copy=True)) for i, a in enumerate(inputs)]

    def loss_fn(tape: Tape) -> Var:
        return fn(*(tape.watch(p) for p in params))

    errors = check_param_gradients(loss_fn, params, eps)
    return [errors[p.name] for p in params]
