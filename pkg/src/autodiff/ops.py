"""
Differentiable operators

Each operator takes Vars, computes its forward value with NumPy and, when any
input is tracked, records a backward closure on that input's tape. Untracked
inputs take the inference path and allocate no tape.

Convolution uses im2col (sliding_window_view) followed by a single matmul;
the backward pass scatters column gradients back with col2im.
"""
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..config.constants import SIGMOID_CLAMP
from .tape import Var, record
from .tensor import ShapeError


def constant(array) -> Var:
    """Wrap an array as an untracked Var."""
    return Var(np.asarray(array))


def _require_rank4(v: Var, op: str) -> None:
    if v.value.ndim != 4:
        raise ShapeError(f"{op} expects a rank-4 input, got shape {v.value.shape}")


def _im2col(x_padded: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N*h_out*w_out, C*k*k), column order (c, i, j)."""
    n, c = x_padded.shape[:2]
    windows = sliding_window_view(x_padded, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * k * k)


def _col2im(
    d_cols: np.ndarray,
    padded_shape: tuple,
    k: int,
    stride: int,
    h_out: int,
    w_out: int,
) -> np.ndarray:
    n, c = padded_shape[:2]
    d = d_cols.reshape(n, h_out, w_out, c, k, k)
    d_x = np.zeros(padded_shape, dtype=d_cols.dtype)
    for i in range(k):
        for j in range(k):
            d_x[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += (
                d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return d_x


def conv2d(
    x: Var,
    weight: Var,
    bias: Optional[Var] = None,
    stride: int = 1,
    padding: int = 0,
) -> Var:
    """
    2-D cross-correlation with zero padding.

    Args:
        x: Input (N, C_in, H, W)
        weight: Kernel (C_out, C_in, k, k) with k in {1, 2, 3}
        bias: Optional (C_out,) vector
        stride: Step between output positions
        padding: Zero padding on every spatial border

    Returns:
        Output (N, C_out, floor((H + 2p - k)/s) + 1, floor((W + 2p - k)/s) + 1)

    Raises:
        ShapeError: On any shape disagreement (the message names both shapes)
    """
    _require_rank4(x, "conv2d")
    xv, wv = x.value, weight.value
    if wv.ndim != 4 or wv.shape[2] != wv.shape[3] or wv.shape[2] not in (1, 2, 3):
        raise ShapeError(f"conv2d weight must be (C_out, C_in, k, k), k in 1..3, got {wv.shape}")
    c_out, c_in, k, _ = wv.shape
    if xv.shape[1] != c_in:
        raise ShapeError(f"conv2d input {xv.shape} does not match weight {wv.shape}")
    if bias is not None and bias.value.shape != (c_out,):
        raise ShapeError(f"conv2d bias {bias.value.shape} does not match weight {wv.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")

    n, _, h, w = xv.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d input {xv.shape} is smaller than kernel {wv.shape}")

    if padding:
        xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xv
    cols = _im2col(xp, k, stride, h_out, w_out)
    w_mat = wv.reshape(c_out, -1)
    out = cols @ w_mat.T
    if bias is not None:
        out += bias.value
    out = np.ascontiguousarray(out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2))

    def backward_fn(g: np.ndarray):
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        d_w = (g_mat.T @ cols).reshape(wv.shape)
        d_x = _col2im(g_mat @ w_mat, xp.shape, k, stride, h_out, w_out)
        if padding:
            d_x = d_x[:, :, padding:-padding, padding:-padding]
        if bias is None:
            return d_x, d_w
        return d_x, d_w, g.sum(axis=(0, 2, 3))

    inputs = [x, weight] if bias is None else [x, weight, bias]
    return record("conv2d", inputs, out, backward_fn)


def transposed_conv2d(x: Var, weight: Var, bias: Optional[Var] = None) -> Var:
    """
    Kernel-2, stride-2 transposed convolution that doubles H and W.

    Args:
        x: Input (N, C_in, H, W)
        weight: Kernel (C_in, C_out, 2, 2)
        bias: Optional (C_out,) vector
    """
    _require_rank4(x, "transposed_conv2d")
    xv, wv = x.value, weight.value
    if wv.ndim != 4 or wv.shape[2:] != (2, 2) or wv.shape[0] != xv.shape[1]:
        raise ShapeError(
            f"transposed_conv2d input {xv.shape} does not match weight {wv.shape} "
            f"(expected (C_in, C_out, 2, 2))"
        )
    n, c_in, h, w = xv.shape
    c_out = wv.shape[1]
    if bias is not None and bias.value.shape != (c_out,):
        raise ShapeError(f"transposed_conv2d bias {bias.value.shape} does not match weight {wv.shape}")

    x_mat = xv.transpose(0, 2, 3, 1).reshape(-1, c_in)
    w_mat = wv.reshape(c_in, c_out * 4)
    out = (x_mat @ w_mat).reshape(n, h, w, c_out, 2, 2)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 4, 2, 5).reshape(n, c_out, 2 * h, 2 * w))
    if bias is not None:
        out += bias.value[None, :, None, None]

    def backward_fn(g: np.ndarray):
        g_mat = g.reshape(n, c_out, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5)
        g_mat = g_mat.reshape(n * h * w, c_out * 4)
        d_w = (x_mat.T @ g_mat).reshape(wv.shape)
        d_x = (g_mat @ w_mat.T).reshape(n, h, w, c_in).transpose(0, 3, 1, 2)
        if bias is None:
            return d_x, d_w
        return d_x, d_w, g.sum(axis=(0, 2, 3))

    inputs = [x, weight] if bias is None else [x, weight, bias]
    return record("transposed_conv2d", inputs, out, backward_fn)


def maxpool2x2(x: Var) -> Var:
    """
    2x2 stride-2 max pooling.

    Ties go to the first element of the window in row-major order, and the
    backward pass routes the gradient to that element only.
    """
    _require_rank4(x, "maxpool2x2")
    xv = x.value
    n, c, h, w = xv.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {xv.shape}")
    windows = xv.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, arg, axis=-1)[..., 0]

    def backward_fn(g: np.ndarray):
        d = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(d, arg, g[..., None], axis=-1)
        d = d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (d.reshape(n, c, h, w),)

    return record("maxpool2x2", [x], out, backward_fn)


def group_norm(x: Var, gamma: Var, beta: Var, groups: int, eps: float) -> Var:
    """
    Group Normalization over (channels in group) x H x W per sample.

    Raises:
        ShapeError: If C is not divisible by groups or the affine terms are not (C,)
    """
    _require_rank4(x, "group_norm")
    xv = x.value
    n, c, h, w = xv.shape
    if groups < 1 or c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeError(
            f"group_norm affine terms {gamma.value.shape}/{beta.value.shape} "
            f"do not match input {xv.shape}"
        )
    if eps <= 0:
        raise ValueError(f"group_norm eps must be positive, got {eps}")

    m = (c // groups) * h * w
    xg = xv.reshape(n, groups, m)
    mean = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = ((xg - mean) * inv_std).reshape(n, c, h, w)
    out = x_hat * gamma.value[None, :, None, None] + beta.value[None, :, None, None]

    def backward_fn(g: np.ndarray):
        d_gamma = (g * x_hat).sum(axis=(0, 2, 3))
        d_beta = g.sum(axis=(0, 2, 3))
        d_xhat = (g * gamma.value[None, :, None, None]).reshape(n, groups, m)
        xh = x_hat.reshape(n, groups, m)
        d_x = inv_std / m * (
            m * d_xhat
            - d_xhat.sum(axis=-1, keepdims=True)
            - xh * (d_xhat * xh).sum(axis=-1, keepdims=True)
        )
        return d_x.reshape(n, c, h, w), d_gamma, d_beta

    return record("group_norm", [x, gamma, beta], out, backward_fn)


def relu(x: Var) -> Var:
    """max(x, 0); NaN passes through so non-finite inputs reach the loss."""
    mask = x.value > 0
    out = np.maximum(x.value, x.value.dtype.type(0))
    return record("relu", [x], out, lambda g: (g * mask,))


def sigmoid(x: Var) -> Var:
    """Logistic sigmoid with logits clamped to +/- SIGMOID_CLAMP."""
    inside = np.abs(x.value) <= SIGMOID_CLAMP
    z = np.clip(x.value, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    s = 1.0 / (1.0 + np.exp(-z))
    return record("sigmoid", [x], s, lambda g: (g * s * (1.0 - s) * inside,))


def add(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: shapes {a.value.shape} and {b.value.shape} differ")
    return record("add", [a, b], a.value + b.value, lambda g: (g, g))


def multiply(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"multiply: shapes {a.value.shape} and {b.value.shape} differ")
    av, bv = a.value, b.value
    return record("multiply", [a, b], av * bv, lambda g: (g * bv, g * av))


def scale(x: Var, factor: float) -> Var:
    return record("scale", [x], x.value * factor, lambda g: (g * factor,))


def scale_channels(x: Var, s: Var) -> Var:
    """Multiply every (n, c) plane of x by s[n, c]."""
    _require_rank4(x, "scale_channels")
    xv, sv = x.value, s.value
    if sv.shape != xv.shape[:2]:
        raise ShapeError(f"scale_channels: scale {sv.shape} does not match input {xv.shape}")
    out = xv * sv[:, :, None, None]

    def backward_fn(g: np.ndarray):
        return g * sv[:, :, None, None], (g * xv).sum(axis=(2, 3))

    return record("scale_channels", [x, s], out, backward_fn)


def concat(a: Var, b: Var) -> Var:
    """Concatenate along the channel axis."""
    _require_rank4(a, "concat")
    _require_rank4(b, "concat")
    av, bv = a.value, b.value
    if av.shape[0] != bv.shape[0] or av.shape[2:] != bv.shape[2:]:
        raise ShapeError(f"concat: shapes {av.shape} and {bv.shape} disagree outside channels")
    split = av.shape[1]
    out = np.concatenate([av, bv], axis=1)
    return record("concat", [a, b], out, lambda g: (g[:, :split], g[:, split:]))


def reduce_sum(x: Var) -> Var:
    shape = x.value.shape
    out = np.asarray(x.value.sum())
    return record("reduce_sum", [x], out, lambda g: (np.full(shape, g, dtype=x.value.dtype),))


def reduce_mean(x: Var) -> Var:
    shape = x.value.shape
    count = x.value.size
    out = np.asarray(x.value.mean())
    return record(
        "reduce_mean", [x], out, lambda g: (np.full(shape, g / count, dtype=x.value.dtype),)
    )


def global_avg_pool(x: Var) -> Var:
    """(N, C, H, W) -> (N, C) spatial mean."""
    _require_rank4(x, "global_avg_pool")
    n, c, h, w = x.value.shape
    out = x.value.mean(axis=(2, 3))

    def backward_fn(g: np.ndarray):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return record("global_avg_pool", [x], out, backward_fn)


def linear(v: Var, weight: Var, bias: Optional[Var] = None) -> Var:
    """Fully connected layer: (N, C_in) @ (C_out, C_in).T + b."""
    vv, wv = v.value, weight.value
    if vv.ndim != 2 or wv.ndim != 2 or vv.shape[1] != wv.shape[1]:
        raise ShapeError(f"linear: input {vv.shape} does not match weight {wv.shape}")
    if bias is not None and bias.value.shape != (wv.shape[0],):
        raise ShapeError(f"linear: bias {bias.value.shape} does not match weight {wv.shape}")
    out = vv @ wv.T
    if bias is not None:
        out = out + bias.value

    def backward_fn(g: np.ndarray):
        if bias is None:
            return g @ wv, g.T @ vv
        return g @ wv, g.T @ vv, g.sum(axis=0)

    inputs = [v, weight] if bias is None else [v, weight, bias]
    return record("linear", inputs, out, backward_fn)


def se_gate(
    x: Var,
    fc1_weight: Var,
    fc1_bias: Var,
    fc2_weight: Var,
    fc2_bias: Var,
    neutral: bool = False,
) -> Var:
    """
    Squeeze-and-excitation channel gate.

    s = sigmoid(fc2(relu(fc1(GAP(x))))); output = x scaled per channel by s.
    With ``neutral`` the scale vector is replaced by ones.
    """
    _require_rank4(x, "se_gate")
    n, c = x.value.shape[:2]
    reduced = fc1_weight.value.shape[0]
    if fc1_weight.value.shape != (reduced, c) or fc2_weight.value.shape != (c, reduced):
        raise ShapeError(
            f"se_gate: fc weights {fc1_weight.value.shape}/{fc2_weight.value.shape} "
            f"do not fit input {x.value.shape}"
        )
    if neutral:
        return scale_channels(x, constant(np.ones((n, c), dtype=x.value.dtype)))
    squeezed = global_avg_pool(x)
    hidden = relu(linear(squeezed, fc1_weight, fc1_bias))
    gate = sigmoid(linear(hidden, fc2_weight, fc2_bias))
    return scale_channels(x, gate)
