"""
Loss nodes with analytic gradients

All losses take a tracked probability tensor and a constant binary target and
return a scalar Var. Dice is computed jointly over the whole batch.
"""
import numpy as np

from ..config.constants import DICE_EPS, FOCAL_PT_CLAMP
from .ops import add, scale
from .tape import Var, record
from .tensor import ShapeError


def _check_pair(probs: Var, target: np.ndarray, op: str) -> np.ndarray:
    target = np.asarray(target)
    if probs.value.shape != target.shape:
        raise ShapeError(f"{op}: probs {probs.value.shape} and target {target.shape} differ")
    return (target > 0.5).astype(probs.value.dtype)


def dice_loss(probs: Var, target: np.ndarray, eps: float = DICE_EPS) -> Var:
    """
    Soft Dice loss 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).

    Example:
        probs=[1, 1], target=[1, 0]: 1 - (2 + eps)/(3 + eps) ~= 1/3
    """
    g = _check_pair(probs, target, "dice_loss")
    p = probs.value
    inter = float((p * g).sum(dtype=np.float64))
    denom = float(p.sum(dtype=np.float64) + g.sum(dtype=np.float64)) + eps
    numer = 2.0 * inter + eps
    value = np.asarray(1.0 - numer / denom, dtype=p.dtype)

    def backward_fn(grad: np.ndarray):
        d_p = -2.0 * g / denom + numer / denom**2
        return ((grad * d_p).astype(p.dtype),)

    return record("dice_loss", [probs], value, backward_fn)


def focal_loss(
    probs: Var,
    target: np.ndarray,
    alpha: float,
    gamma: float,
    per_class_alpha: bool = False,
) -> Var:
    """
    Mean focal loss -alpha_t * (1 - p_t)^gamma * log(p_t).

    p_t is p on foreground and 1 - p on background, clamped to
    [1e-7, 1 - 1e-7]. alpha_t is alpha everywhere unless ``per_class_alpha``
    is set, in which case background pixels use 1 - alpha.
    """
    g = _check_pair(probs, target, "focal_loss")
    p = probs.value
    fg = g > 0.5
    raw_pt = np.where(fg, p, 1.0 - p)
    pt = np.clip(raw_pt, FOCAL_PT_CLAMP, 1.0 - FOCAL_PT_CLAMP)
    alpha_t = np.where(fg, alpha, 1.0 - alpha) if per_class_alpha else alpha
    one_minus = 1.0 - pt
    log_pt = np.log(pt)
    per_elem = -alpha_t * one_minus**gamma * log_pt
    count = p.size
    value = np.asarray(per_elem.mean(dtype=np.float64), dtype=p.dtype)

    def backward_fn(grad: np.ndarray):
        d_pt = alpha_t * (gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus**gamma / pt)
        unclamped = (raw_pt >= FOCAL_PT_CLAMP) & (raw_pt <= 1.0 - FOCAL_PT_CLAMP)
        d_p = np.where(fg, d_pt, -d_pt) * unclamped / count
        return ((grad * d_p).astype(p.dtype),)

    return record("focal_loss", [probs], value, backward_fn)


def combined_loss(probs: Var, target: np.ndarray, cfg) -> Var:
    """
    Weighted Dice-Focal loss w_d * L_dice + w_f * L_focal.

    Args:
        probs: Sigmoid probabilities
        target: Binary target of the same shape
        cfg: LossConfig (w_d, w_f, alpha, gamma, eps, per_class_alpha)
    """
    d = dice_loss(probs, target, cfg.eps)
    f = focal_loss(probs, target, cfg.alpha, cfg.gamma, cfg.per_class_alpha)
    return add(scale(d, cfg.w_d), scale(f, cfg.w_f))


def mse_loss(pred: Var, target: np.ndarray) -> Var:
    """Mean squared error against a constant target."""
    target = np.asarray(target, dtype=pred.value.dtype)
    if pred.value.shape != target.shape:
        raise ShapeError(f"mse_loss: pred {pred.value.shape} and target {target.shape} differ")
    diff = pred.value - target
    value = np.asarray(np.mean(diff * diff, dtype=np.float64), dtype=pred.value.dtype)
    return record("mse_loss", [pred], value, lambda g: (g * 2.0 * diff / diff.size,))
