"""
CIFAR-10 binary batch files.

Each record is 3073 bytes: the label byte, then 1024 red, 1024 green and
1024 blue pixel bytes in row-major order.
"""

import logging
from pathlib import Path
from typing import Tuple

import numpy as np

from .constants import (
    CIFAR_CHANNELS,
    CIFAR_CLASSES,
    CIFAR_MEAN,
    CIFAR_RECORD_SIZE,
    CIFAR_SIZE,
    CIFAR_STD,
    CIFAR_TEST_FILE,
    CIFAR_TRAIN_FILES,
)
from .DatasetSource import ImageSet

logger = logging.getLogger("Cifar10")


def parse_records(data: bytes, name: str = "<bytes>") -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns uint8 pixels [n, 3, 32, 32] and int64 labels.
    """
    if len(data) % CIFAR_RECORD_SIZE != 0:
        offset = (len(data) // CIFAR_RECORD_SIZE) * CIFAR_RECORD_SIZE
        raise ValueError(
            f"parse_records: {name}: truncated record at byte offset {offset} "
            f"({len(data) - offset} of {CIFAR_RECORD_SIZE} bytes)"
        )
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_SIZE)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if len(bad):
        raise ValueError(
            f"parse_records: {name}: label {labels[bad[0]]} > {CIFAR_CLASSES - 1} at byte offset {bad[0] * CIFAR_RECORD_SIZE}"
        )
    pixels = records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIZE, CIFAR_SIZE).copy()
    return pixels, labels


def read_batch_file(path: str | Path) -> ImageSet:
    path = Path(path)
    pixels, labels = parse_records(path.read_bytes(), str(path))
    logger.debug(f"read_batch_file: {path}: {len(labels)} records")
    return ImageSet(pixels, labels, CIFAR_MEAN, CIFAR_STD, CIFAR_CLASSES)


def _concatenate(sets) -> ImageSet:
    return ImageSet(
        np.concatenate([s.pixels for s in sets]),
        np.concatenate([s.labels for s in sets]),
        CIFAR_MEAN,
        CIFAR_STD,
        CIFAR_CLASSES,
    )


def load_cifar10(path: str | Path) -> Tuple[ImageSet, ImageSet]:
    """
    (train, test) from a directory holding the standard batch files. The
    test batch must be present: test accuracy is never measured on
    training images.
    """
    path = Path(path)
    if path.is_file():
        raise ValueError(f"load_cifar10: {path} is a single batch file, expected the directory holding {CIFAR_TEST_FILE}")
    if not path.is_dir():
        raise ValueError(f"load_cifar10: {path} does not exist")
    train_files = [path / name for name in CIFAR_TRAIN_FILES if (path / name).exists()]
    if not train_files:
        raise ValueError(f"load_cifar10: no training batch files in {path}")
    test_file = path / CIFAR_TEST_FILE
    if not test_file.exists():
        raise ValueError(f"load_cifar10: no {CIFAR_TEST_FILE} in {path}")
    train = _concatenate([read_batch_file(f) for f in train_files])
    return train, read_batch_file(test_file)
