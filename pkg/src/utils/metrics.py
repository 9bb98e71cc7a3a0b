"""
Segmentation metrics

Handles:
- Dice overlap between thresholded prediction and ground-truth masks
- Largest 8-connected component extraction
- Zhang-Suen skeletonization
- Mean Sum Distance between a predicted skeleton and a ground-truth contour

MSD on an empty contour is undefined and raises UndefinedDistanceError;
``evaluate`` turns that into ``msd=None`` so callers count such frames
instead of averaging a fake zero.
"""
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..models.imaging import BinaryMask, Contour
from ..models.results import FrameMetrics

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

# Bit i of a neighbour code is set when P(i+2) is foreground, with P2 north
# and P3..P9 following clockwise.
_NEIGHBOUR_BITS = np.array(
    [
        [128, 1, 2],
        [64, 0, 4],
        [32, 16, 8],
    ],
    dtype=np.int32,
)


def _thinning_tables() -> tuple[np.ndarray, np.ndarray]:
    """Deletable-pixel lookup tables for the two Zhang-Suen subiterations."""
    first = np.zeros(256, dtype=bool)
    second = np.zeros(256, dtype=bool)
    for code in range(256):
        p = [(code >> i) & 1 for i in range(8)]
        p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
        neighbours = sum(p)
        transitions = sum(1 for i in range(8) if p[i] == 0 and p[(i + 1) % 8] == 1)
        if not (2 <= neighbours <= 6 and transitions == 1):
            continue
        first[code] = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
        second[code] = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
    return first, second


_SUBITERATION_TABLES = _thinning_tables()


class UndefinedDistanceError(ValueError):
    """Raised when MSD is requested for an empty contour"""
    pass


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: mask shapes {a.shape} and {b.shape} differ")


def dice_score(pred: BinaryMask, gt: BinaryMask) -> float:
    """
    Dice overlap 2|P n G| / (|P| + |G|).

    Two empty masks score 1.0.

    Raises:
        ValueError: If the masks differ in shape

    Example:
        |P| = 4, |G| = 4, |P n G| = 2 -> 0.5
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_shape(pred, gt, "dice_score")
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / total


def largest_component(mask: BinaryMask) -> BinaryMask:
    """
    Keep only the largest 8-connected component.

    Labels are numbered in raster order of each component's first pixel,
    so among equally large components the one whose top-left pixel comes
    first in scan order wins. An empty mask is returned unchanged.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def skeletonize(mask: BinaryMask) -> BinaryMask:
    """
    Zhang-Suen thinning, iterated until no pixel is removed.

    Pixels outside the frame count as background. Each subiteration marks
    every deletable pixel from the same neighbour codes before removing
    any of them.

    Example:
        9x3 bar at columns 2..10 -> middle row at columns 3..8
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros_like(mask)
    skeleton = mask.copy()
    while True:
        removed = 0
        for table in _SUBITERATION_TABLES:
            codes = ndimage.correlate(
                skeleton.astype(np.int32), _NEIGHBOUR_BITS, mode="constant", cval=0
            )
            deletable = skeleton & table[codes]
            removed += int(deletable.sum())
            skeleton &= ~deletable
        if removed == 0:
            return skeleton


def mask_to_points(mask: BinaryMask) -> Contour:
    """
    Foreground pixel centres in row-major scan order as (x, y) = (col, row).

    Example:
        mask[5, 3] = True -> [[3.0, 5.0]]
    """
    rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
    return np.column_stack([cols, rows]).astype(np.float64)


def msd(u: Contour, v: Contour) -> float:
    """
    Mean Sum Distance between two point sets.

    (sum over v of min_u |v - u| + sum over u of min_v |u - v|) / (|U| + |V|)

    Raises:
        UndefinedDistanceError: If either point set is empty

    Example:
        U = {(0,0), (0,2)}, V = {(0,1)} -> (1 + 1 + 1) / 3 = 1.0
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1, 2)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 2)
    if len(u) == 0 or len(v) == 0:
        raise UndefinedDistanceError(
            f"MSD undefined for empty contour (|U|={len(u)}, |V|={len(v)})"
        )
    d_v, _ = cKDTree(u).query(v)
    d_u, _ = cKDTree(v).query(u)
    return float((d_v.sum() + d_u.sum()) / (len(u) + len(v)))


def predict_mask(logits: np.ndarray) -> BinaryMask:
    """Threshold at probability 0.5, i.e. logit > 0."""
    return np.asarray(logits) > 0


def evaluate(logits: np.ndarray, gt_mask: BinaryMask, gt_contour: Contour) -> FrameMetrics:
    """
    Score one frame.

    Dice uses the full thresholded mask. MSD uses the skeleton of its largest
    component against the ground-truth contour; it is None when the
    prediction is empty.
    """
    logits = np.asarray(logits)
    if logits.ndim > 2:
        logits = logits.reshape(logits.shape[-2:])
    pred = predict_mask(logits)
    dice = dice_score(pred, gt_mask)
    points = mask_to_points(skeletonize(largest_component(pred)))
    try:
        distance = msd(points, gt_contour)
    except UndefinedDistanceError:
        distance = None
    return FrameMetrics(dice=dice, msd=distance)
