"""
Synthetic Data Service
Procedural tongue-like ultrasound frames with exact masks and contours,
under named acquisition profiles that differ in geometry and intensity
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from ..config.constants import IMAGE_SIZE, MIN_CONTOUR_POINTS, MIN_DATASET_SIZE, SPLIT_FRACTIONS
from ..config.settings import settings
from ..models.augmentation import SpeckleParams
from ..models.domain import DomainProfile
from ..models.imaging import Contour, SplitIndices, SynthDataset, SynthSample
from ..utils.image_ops import speckle

logger = logging.getLogger(__name__)

PROFILES: Dict[str, DomainProfile] = {
    "bright-wide": DomainProfile(
        name="bright-wide",
        fan_half_angle_deg=40.0,
        speckle_sigma=0.25,
        background_level=0.18,
        tissue_layers=3,
        tissue_brightness=0.12,
        contour_gain=0.95,
        gamma=0.8,
        blur_sigma=0.8,
    ),
    "dim-narrow": DomainProfile(
        name="dim-narrow",
        fan_half_angle_deg=30.0,
        speckle_sigma=0.2,
        background_level=0.1,
        tissue_layers=2,
        tissue_brightness=0.07,
        contour_gain=0.6,
        gamma=1.3,
        blur_sigma=1.2,
    ),
    "noisy-broad": DomainProfile(
        name="noisy-broad",
        fan_half_angle_deg=45.0,
        speckle_sigma=0.45,
        background_level=0.2,
        tissue_layers=4,
        tissue_brightness=0.15,
        contour_gain=0.85,
        gamma=1.0,
        blur_sigma=1.6,
    ),
}
"""Shipped acquisition profiles"""

SPAN_RANGE = (0.4, 0.8)
"""Contour width as a fraction of the fan width at its depth"""

_DENSE_SAMPLES = 2048
_MAX_CONTOUR_ATTEMPTS = 100


def get_profile(name: str) -> DomainProfile:
    """
    Look up a shipped profile

    Raises:
        KeyError: If the name is unknown, listing the available names
    """
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile '{name}', available: {sorted(PROFILES)}")


def _apex(profile: DomainProfile, size: int) -> Tuple[float, float]:
    return size / 2.0, -profile.apex_offset * size


def fan_mask(profile: DomainProfile, size: int = IMAGE_SIZE) -> np.ndarray:
    """Pixels inside the annular sector opening downward from the apex."""
    ax, ay = _apex(profile, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - ax, yy - ay
    r = np.hypot(dx, dy)
    angle = np.degrees(np.arctan2(np.abs(dx), dy))
    return (
        (r >= profile.fan_inner_radius * size)
        & (r <= profile.fan_outer_radius * size)
        & (angle <= profile.fan_half_angle_deg)
    )


def _inside_fan(points: np.ndarray, profile: DomainProfile, size: int, margin: float) -> bool:
    ax, ay = _apex(profile, size)
    x, y = points[:, 0], points[:, 1]
    if x.min() < margin or y.min() < margin or x.max() > size - 1 - margin or y.max() > size - 1 - margin:
        return False
    dx, dy = x - ax, y - ay
    r = np.hypot(dx, dy)
    if r.min() < profile.fan_inner_radius * size + margin or r.max() > profile.fan_outer_radius * size - margin:
        return False
    half = np.radians(profile.fan_half_angle_deg)
    # perpendicular distance to the nearer fan edge
    edge_distance = r * np.sin(half - np.arctan2(np.abs(dx), dy))
    return bool(edge_distance.min() >= margin)


def _bezier(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray, t: np.ndarray) -> np.ndarray:
    t = t[:, None]
    return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * p1 + t**2 * p2


def resample_by_arc_length(points: np.ndarray, count: int) -> np.ndarray:
    """count points equally spaced along the polyline through points."""
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], count)
    return np.column_stack([np.interp(targets, s, points[:, 0]), np.interp(targets, s, points[:, 1])])


def _draw_control_points(profile: DomainProfile, rng: np.random.Generator, size: int):
    ax, ay = _apex(profile, size)
    base_y = rng.uniform(profile.depth_min, profile.depth_max) * size
    half_width = min((base_y - ay) * np.tan(np.radians(profile.fan_half_angle_deg)), size / 2.0)
    span = rng.uniform(*SPAN_RANGE)
    width = 2.0 * span * half_width
    slack = half_width - width / 2.0
    cx = ax + rng.uniform(-0.5, 0.5) * slack
    x0, x2 = cx - width / 2.0, cx + width / 2.0
    jitter = 0.03 * size
    y0 = base_y + rng.uniform(-jitter, jitter)
    y2 = base_y + rng.uniform(-jitter, jitter)
    # x1 strictly between x0 and x2 keeps the curve monotone in x
    x1 = x0 + rng.uniform(0.3, 0.7) * (x2 - x0)
    curvature = rng.uniform(profile.curvature_min, profile.curvature_max)
    y1 = (y0 + y2) / 2.0 - curvature * width
    return np.array([x0, y0]), np.array([x1, y1]), np.array([x2, y2])


def gen_contour(profile: DomainProfile, rng: np.random.Generator, size: int = IMAGE_SIZE) -> Contour:
    """
    Random quadratic Bezier arc, the tongue surface analogue

    The arc spans 40-80% of the fan width at its depth, bulges upward by
    the sampled curvature and is resampled to equal arc-length spacing with
    at least 64 points. Draws that leave the fan are rejected and redrawn.

    Args:
        profile: Geometry bounds
        rng: Generator; the same state gives the same contour
        size: Image side length

    Returns:
        (K, 2) float64 (x, y) points, monotone in x
    """
    margin = profile.band_half_thickness + 2.0
    t = np.linspace(0.0, 1.0, _DENSE_SAMPLES)
    for attempt in range(_MAX_CONTOUR_ATTEMPTS):
        p0, p1, p2 = _draw_control_points(profile, rng, size)
        if attempt >= _MAX_CONTOUR_ATTEMPTS // 2:
            # flatten persistent misses toward the chord
            p1 = (p0 + p2) / 2.0 + 0.25 * (p1 - (p0 + p2) / 2.0)
        dense = _bezier(p0, p1, p2, t)
        if _inside_fan(dense, profile, size, margin):
            length = float(np.hypot(*np.diff(dense, axis=0).T).sum())
            count = max(MIN_CONTOUR_POINTS, int(np.ceil(length)))
            return resample_by_arc_length(dense, count)
    raise RuntimeError(f"profile '{profile.name}' could not place a contour inside a {size}px fan")


def _distance_to_contour(contour: Contour, size: int) -> np.ndarray:
    dense = resample_by_arc_length(contour, max(4 * len(contour), _DENSE_SAMPLES))
    yy, xx = np.mgrid[0:size, 0:size]
    pixels = np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)
    d, _ = cKDTree(dense).query(pixels)
    return d.reshape(size, size)


def _tissue_strata(profile: DomainProfile, rng: np.random.Generator, size: int) -> np.ndarray:
    ax, ay = _apex(profile, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.hypot(xx - ax, yy - ay)
    layers = np.zeros((size, size))
    for _ in range(profile.tissue_layers):
        radius = rng.uniform(profile.fan_inner_radius, profile.fan_outer_radius) * size
        width = rng.uniform(2.0, 5.0)
        layers += profile.tissue_brightness * np.exp(-0.5 * ((r - radius) / width) ** 2)
    return layers


def render_frame(
    contour: Contour,
    profile: DomainProfile,
    rng: np.random.Generator,
    size: int = IMAGE_SIZE,
    seed: int = 0,
) -> SynthSample:
    """
    Render one frame around a contour

    A dark fan with faint curved strata gets a bright band along the contour
    with a Gaussian cross-profile whose half-maximum sits at the band
    half-thickness. The mask is that half-maximum support. Blur, speckle and
    gamma follow, and everything outside the fan is zeroed.
    """
    fan = fan_mask(profile, size)
    d = _distance_to_contour(contour, size)
    h = profile.band_half_thickness
    sigma = h / np.sqrt(2.0 * np.log(2.0))
    band = profile.contour_gain * np.exp(-0.5 * (d / sigma) ** 2)

    img = profile.background_level + _tissue_strata(profile, rng, size)
    img = np.maximum(img, band)
    if profile.blur_sigma > 0:
        img = gaussian_filter(img, profile.blur_sigma, mode="nearest")
    img = speckle(np.clip(img, 0.0, 1.0), SpeckleParams(sigma=profile.speckle_sigma), rng)
    img = np.power(img.astype(np.float64), profile.gamma)
    img = np.where(fan, img, 0.0).astype(np.float32)

    mask = (d <= h) & fan
    return SynthSample(image=img, mask=mask, contour=contour, seed=seed, profile=profile.name)


def generate_sample(profile: DomainProfile, seed: int, index: int, size: int = IMAGE_SIZE) -> SynthSample:
    """Sample ``index`` of a dataset, driven by its own (seed, index) generator."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    contour = gen_contour(profile, rng, size)
    return render_frame(contour, profile, rng, size, seed=index)


def split_indices(count: int, seed: int) -> SplitIndices:
    """Seeded 80/10/10 split of range(count)."""
    order = np.random.default_rng(np.random.SeedSequence([seed, count, 8010])).permutation(count)
    n_train = int(round(SPLIT_FRACTIONS[0] * count))
    n_val = int(round(SPLIT_FRACTIONS[1] * count))
    return SplitIndices(
        train=sorted(int(i) for i in order[:n_train]),
        val=sorted(int(i) for i in order[n_train : n_train + n_val]),
        test=sorted(int(i) for i in order[n_train + n_val :]),
    )


def gen_dataset(
    profile: DomainProfile,
    count: int,
    seed: int,
    size: int = IMAGE_SIZE,
    max_workers: Optional[int] = None,
) -> SynthDataset:
    """
    Generate count samples and their split

    Each sample depends only on (seed, index), so generation can fan out
    to worker threads without changing the result.

    Raises:
        ValueError: If count < 10
    """
    if count < MIN_DATASET_SIZE:
        raise ValueError(f"dataset needs at least {MIN_DATASET_SIZE} samples, got {count}")
    workers = max_workers or settings.ultraseg_threads
    logger.info(f"Generating {count} '{profile.name}' frames at {size}px (seed {seed})")
    if workers <= 1:
        samples: List[SynthSample] = [generate_sample(profile, seed, i, size) for i in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda i: generate_sample(profile, seed, i, size), range(count)))
    return SynthDataset(profile=profile.name, samples=samples, split=split_indices(count, seed))
