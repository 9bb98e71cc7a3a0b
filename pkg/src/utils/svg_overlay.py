"""
SVG overlays of predicted skeletons against ground-truth contours

Written as plain text: the frame as run-length encoded gray rectangles,
the ground-truth contour as a polyline and the predicted skeleton as
one-pixel squares.
"""
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ..models.imaging import Contour, GrayImage

GRAY_LEVELS = 16
"""Intensity quantization of the background frame; keeps files small"""

GT_COLOR = "#00d060"
PRED_COLOR = "#ff3030"


def _frame_rects(img: GrayImage) -> List[str]:
    levels = np.clip(np.round(np.asarray(img) * (GRAY_LEVELS - 1)), 0, GRAY_LEVELS - 1).astype(int)
    rects = []
    for y, row in enumerate(levels):
        x = 0
        w = len(row)
        while x < w:
            level = row[x]
            end = x + 1
            while end < w and row[end] == level:
                end += 1
            if level > 0:
                shade = int(round(255 * level / (GRAY_LEVELS - 1)))
                rects.append(
                    f'<rect x="{x}" y="{y}" width="{end - x}" height="1" fill="rgb({shade},{shade},{shade})"/>'
                )
            x = end
    return rects


def render_overlay(
    img: GrayImage,
    gt_contour: Contour,
    pred_points: Contour,
    title: Optional[str] = None,
) -> str:
    """
    Build the SVG document.

    Args:
        img: Frame in [0, 1]
        gt_contour: Ground-truth polyline as (x, y) points
        pred_points: Predicted skeleton pixels as (x, y) points
        title: Optional caption
    """
    h, w = np.asarray(img).shape
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
        f'shape-rendering="crispEdges">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="black"/>',
    ]
    if title:
        parts.append(f"<title>{title}</title>")
    parts.extend(_frame_rects(img))

    gt = np.asarray(gt_contour, dtype=np.float64).reshape(-1, 2)
    if len(gt):
        # pixel centres sit at +0.5 in SVG user space
        coords = " ".join(f"{x + 0.5:.2f},{y + 0.5:.2f}" for x, y in gt)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{GT_COLOR}" stroke-width="1"/>')

    for x, y in np.asarray(pred_points, dtype=np.float64).reshape(-1, 2):
        parts.append(f'<rect x="{int(x)}" y="{int(y)}" width="1" height="1" fill="{PRED_COLOR}" fill-opacity="0.8"/>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_overlay(
    path: Union[str, Path],
    img: GrayImage,
    gt_contour: Contour,
    pred_points: Contour,
    title: Optional[str] = None,
) -> None:
    Path(path).write_text(render_overlay(img, gt_contour, pred_points, title), encoding="utf-8")
