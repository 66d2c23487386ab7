"""
Where training and test images come from, and the in-memory image set.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .constants import DATASET_KINDS

logger = logging.getLogger("DatasetSource")


@dataclass
class ImageSet:
    """
    uint8 images [N, C, H, W] with int64 labels, and the per-channel mean
    and standard deviation (on a [0, 1] scale) used to normalize them.
    """

    pixels: np.ndarray
    labels: np.ndarray
    mean: Tuple[float, ...]
    std: Tuple[float, ...]
    classes: int

    def __post_init__(self):
        if self.pixels.ndim != 4 or self.pixels.dtype != np.uint8:
            raise ValueError(f"ImageSet: expected uint8 [N, C, H, W] pixels, got {self.pixels.dtype} {self.pixels.shape}")
        if len(self.labels) != len(self.pixels):
            raise ValueError(f"ImageSet: {len(self.pixels)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"ImageSet: labels outside [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def normalize(self, pixels: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=np.float32)[:, None, None]
        std = np.asarray(self.std, dtype=np.float32)[:, None, None]
        return (pixels.astype(np.float32) / np.float32(255.0) - mean) / std

    def images(self, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        pixels = self.pixels if indices is None else self.pixels[np.asarray(indices)]
        return self.normalize(pixels)

    def subset(self, count: int) -> "ImageSet":
        return ImageSet(self.pixels[:count], self.labels[:count], self.mean, self.std, self.classes)


def channel_statistics(pixels: np.ndarray) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    scaled = pixels.astype(np.float64) / 255.0
    mean = scaled.mean(axis=(0, 2, 3))
    std = np.maximum(scaled.std(axis=(0, 2, 3)), 1e-3)
    return tuple(float(m) for m in mean), tuple(float(s) for s in std)


@dataclass(frozen=True)
class DatasetSource:
    kind: str = "synthetic-conditional"
    path: Optional[str] = None
    seed: int = 0
    train_size: int = 10000
    test_size: int = 2000
    classes: int = 10

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"DatasetSource: unknown kind '{self.kind}', expected one of {DATASET_KINDS}")
        if self.kind == "cifar10-binary" and not self.path:
            raise ValueError("DatasetSource: cifar10-binary needs a path")
        if self.train_size < 1 or self.test_size < 1:
            raise ValueError(f"DatasetSource: split sizes must be positive, got {self.train_size}/{self.test_size}")
        if self.classes < 2:
            raise ValueError(f"DatasetSource: need at least 2 classes, got {self.classes}")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "DatasetSource":
        return cls(**d)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def load(self) -> Tuple[ImageSet, ImageSet]:
        """
        (train, test) image sets.
        """
        if self.kind == "cifar10-binary":
            from .Cifar10 import load_cifar10

            train, test = load_cifar10(self.path)
            train, test = train.subset(self.train_size), test.subset(self.test_size)
        else:
            from .Synthetic import synthetic_conditional_dataset

            train = synthetic_conditional_dataset(self.seed, self.train_size, self.classes)
            test = synthetic_conditional_dataset(self.seed + 1, self.test_size, self.classes, stats_from=train)
        logger.info(f"load: {self.kind}: {len(train)} training and {len(test)} test images")
        return train, test
