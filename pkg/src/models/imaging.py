"""
Image, mask and contour containers

GrayImage is a 2-D float32 array in [0, 1], BinaryMask a 2-D bool array and
Contour a (K, 2) float64 array of (x, y) pixel coordinates, x = column.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np

GrayImage = np.ndarray
BinaryMask = np.ndarray
Contour = np.ndarray


def empty_contour() -> Contour:
    return np.zeros((0, 2), dtype=np.float64)


@dataclass
class SynthSample:
    image: GrayImage
    mask: BinaryMask
    contour: Contour
    seed: int
    profile: str


@dataclass
class SplitIndices:
    train: List[int]
    val: List[int]
    test: List[int]

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


@dataclass
class DatasetSplit:
    """Stacked images and masks of one split, plus their contours."""

    images: np.ndarray
    masks: np.ndarray
    contours: List[Contour] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @classmethod
    def from_samples(cls, samples: List[SynthSample]) -> "DatasetSplit":
        if not samples:
            raise ValueError("cannot build a split from zero samples")
        return cls(
            images=np.stack([s.image for s in samples]).astype(np.float32),
            masks=np.stack([s.mask for s in samples]).astype(bool),
            contours=[s.contour for s in samples],
        )


@dataclass
class SynthDataset:
    profile: str
    samples: List[SynthSample]
    split: SplitIndices

    def subset(self, name: str) -> DatasetSplit:
        indices = getattr(self.split, name)
        return DatasetSplit.from_samples([self.samples[i] for i in indices])
