"""
Image operations for preprocessing and augmentation

Handles:
- Resize and intensity normalization to [0, 1]
- Horizontal flip of an (image, mask, contour) triple
- Multiplicative speckle noise and anisotropic Gaussian PSF blur
- Reference histograms and CDF-based histogram matching

Every function returns a new float32 image clamped to [0, 1]; masks and
contours are only touched by ``hflip``.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import ndimage
from skimage.transform import resize

from ..config.constants import HISTOGRAM_BINS, IMAGE_SIZE, PSF_SIGMA_RANGE
from ..models.augmentation import SpeckleParams
from ..models.imaging import BinaryMask, Contour, GrayImage

logger = logging.getLogger(__name__)


def _clamp(img: np.ndarray) -> GrayImage:
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def preprocess(raw: np.ndarray, size: int = IMAGE_SIZE) -> GrayImage:
    """
    Normalize to [0, 1] and bilinearly resize to size x size.

    Integer inputs are divided by their dtype's maximum (255 for uint8,
    65535 for uint16); float inputs are taken as already normalized.

    Args:
        raw: 2-D image
        size: Output side length

    Returns:
        float32 image of shape (size, size)

    Raises:
        ValueError: If the input is empty or not 2-D
    """
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError(f"preprocess expects a 2-D image, got shape {raw.shape}")
    if raw.size == 0:
        raise ValueError(f"preprocess got a zero-sized image {raw.shape}")

    if np.issubdtype(raw.dtype, np.integer):
        img = raw.astype(np.float64) / np.iinfo(raw.dtype).max
    else:
        img = raw.astype(np.float64)
    img = np.clip(img, 0.0, 1.0)

    if img.shape != (size, size):
        img = resize(img, (size, size), order=1, mode="edge", anti_aliasing=False, preserve_range=True)
    return _clamp(img)


def hflip(img: GrayImage, mask: BinaryMask, contour: Contour) -> Tuple[GrayImage, BinaryMask, Contour]:
    """
    Mirror image, mask and contour about the vertical axis (x -> w - 1 - x).

    Example:
        width 10, contour point (3, y) -> (6, y)
    """
    w = img.shape[1]
    flipped = np.asarray(contour, dtype=np.float64).reshape(-1, 2).copy()
    flipped[:, 0] = (w - 1) - flipped[:, 0]
    return img[:, ::-1].copy(), mask[:, ::-1].copy(), flipped


def speckle(img: GrayImage, params: SpeckleParams, rng: np.random.Generator) -> GrayImage:
    """Multiplicative Gaussian speckle: clamp(img * (1 + sigma * n), 0, 1)."""
    noise = rng.standard_normal(img.shape)
    return _clamp(img * (1.0 + params.sigma * noise))


@dataclass(frozen=True)
class PSFKernel:
    """
    Normalized blur kernel.

    sigma_axial runs along rows (depth), sigma_lateral along columns.
    """

    weights: np.ndarray
    sigma_axial: float = 0.0
    sigma_lateral: float = 0.0

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def gaussian(cls, sigma_axial: float, sigma_lateral: float, size: Optional[int] = None) -> "PSFKernel":
        """Anisotropic Gaussian; default size covers +/- 3 sigma of the wider axis."""
        if size is None:
            size = 2 * int(np.ceil(3.0 * max(sigma_axial, sigma_lateral))) + 1
        if size % 2 == 0:
            raise ValueError(f"PSF kernel size must be odd, got {size}")
        r = np.arange(size) - size // 2
        ax = np.exp(-0.5 * (r / sigma_axial) ** 2)
        lat = np.exp(-0.5 * (r / sigma_lateral) ** 2)
        weights = np.outer(ax, lat)
        return cls(weights=weights / weights.sum(), sigma_axial=sigma_axial, sigma_lateral=sigma_lateral)

    @classmethod
    def delta(cls) -> "PSFKernel":
        return cls(weights=np.ones((1, 1)))

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "PSFKernel":
        lo, hi = PSF_SIGMA_RANGE
        return cls.gaussian(float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))


def psf_blur(img: GrayImage, kernel: PSFKernel) -> GrayImage:
    """
    Convolve with the PSF using edge-replicate padding.

    Raises:
        ValueError: If the kernel is not square with odd side
    """
    weights = np.asarray(kernel.weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1] or weights.shape[0] % 2 == 0:
        raise ValueError(f"PSF kernel must be square with odd side, got {weights.shape}")
    return _clamp(ndimage.convolve(np.asarray(img, dtype=np.float64), weights, mode="nearest"))


class ReferenceHistogram(BaseModel):
    """256-bin cumulative intensity distribution over [0, 1]."""

    cdf: List[float] = Field(min_length=HISTOGRAM_BINS, max_length=HISTOGRAM_BINS)

    @field_validator("cdf")
    @classmethod
    def _monotone_to_one(cls, v: List[float]) -> List[float]:
        arr = np.asarray(v)
        if np.any(np.diff(arr) < -1e-12) or arr[0] < 0:
            raise ValueError("reference CDF must be non-decreasing and non-negative")
        if abs(arr[-1] - 1.0) > 1e-6:
            raise ValueError(f"reference CDF must end at 1, ends at {arr[-1]}")
        return v

    @classmethod
    def from_images(cls, images: Iterable[np.ndarray]) -> "ReferenceHistogram":
        """Pooled histogram of every pixel in images."""
        counts = np.zeros(HISTOGRAM_BINS, dtype=np.float64)
        for img in images:
            hist, _ = np.histogram(np.clip(img, 0.0, 1.0), bins=HISTOGRAM_BINS, range=(0.0, 1.0))
            counts += hist
        total = counts.sum()
        if total == 0:
            raise ValueError("cannot build a reference histogram from zero pixels")
        cdf = np.cumsum(counts) / total
        cdf[-1] = 1.0
        return cls(cdf=cdf.tolist())

    def inverse(self, q: np.ndarray) -> np.ndarray:
        """
        Map quantiles to intensities.

        Finds the first bin whose CDF reaches q and interpolates linearly
        inside it; empty bins are skipped.
        """
        cdf = np.asarray(self.cdf, dtype=np.float64)
        q = np.clip(np.asarray(q, dtype=np.float64), 0.0, 1.0)
        idx = np.minimum(np.searchsorted(cdf, q, side="left"), HISTOGRAM_BINS - 1)
        lower = np.where(idx > 0, cdf[np.maximum(idx - 1, 0)], 0.0)
        mass = cdf[idx] - lower
        frac = np.divide(q - lower, mass, out=np.zeros_like(q), where=mass > 0)
        return (idx + np.clip(frac, 0.0, 1.0)) / HISTOGRAM_BINS

    def median(self) -> float:
        return float(self.inverse(np.array(0.5)))


def source_cdf(img: GrayImage) -> np.ndarray:
    """Piecewise-linear CDF of img evaluated at each of its pixels."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    hist, edges = np.histogram(img, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    cdf = np.concatenate([[0.0], np.cumsum(hist) / img.size])
    return np.interp(img, edges, cdf)


def histogram_match(img: GrayImage, ref: ReferenceHistogram) -> GrayImage:
    """
    Full CDF matching: out(p) = ref_cdf^-1(src_cdf(img(p))).

    The mapping is monotone in the input intensity. A single-valued image
    has no usable CDF and is mapped to the reference median.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.size and img.max() == img.min():
        logger.warning("Histogram matching a constant image, mapping to the reference median")
        return np.full(img.shape, ref.median(), dtype=np.float32)
    return _clamp(ref.inverse(source_cdf(img)))


def empirical_cdf(img: GrayImage) -> np.ndarray:
    """256-bin CDF of an image, as used to compare against a reference."""
    hist, _ = np.histogram(np.clip(img, 0.0, 1.0), bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    return np.cumsum(hist) / max(int(hist.sum()), 1)
