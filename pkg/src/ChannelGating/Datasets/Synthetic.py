"""
Deterministic class-conditional images.

Classes fall into groups; each group owns one region of the image and
draws an oriented stripe pattern there, the orientation picking the class
within the group. The other regions hold noise only, so a model that gates
filters per group only needs the filters looking at that group's region.
"""

import logging
import math
from typing import Optional

import numpy as np

from .constants import (
    CIFAR_CHANNELS,
    SYNTHETIC_AMPLITUDE,
    SYNTHETIC_BACKGROUND,
    SYNTHETIC_NOISE,
    SYNTHETIC_SIZE,
)
from .DatasetSource import ImageSet, channel_statistics

logger = logging.getLogger("Synthetic")


def group_count(classes: int) -> int:
    return 2 if classes < 4 else 4


def region(group: int, groups: int, size: int):
    """
    (row slice, column slice) of a group: halves for 2 groups, quadrants for 4.
    """
    half = size // 2
    if groups == 2:
        return (slice(0, half), slice(0, size)) if group == 0 else (slice(half, size), slice(0, size))
    rows = slice(0, half) if group < 2 else slice(half, size)
    cols = slice(0, half) if group % 2 == 0 else slice(half, size)
    return rows, cols


def synthetic_conditional_dataset(
    seed: int,
    n: int,
    classes: int,
    size: int = SYNTHETIC_SIZE,
    stats_from: Optional[ImageSet] = None,
) -> ImageSet:
    if classes < 2:
        raise ValueError(f"synthetic_conditional_dataset: need at least 2 classes, got {classes}")
    if n < 1:
        raise ValueError(f"synthetic_conditional_dataset: need at least one image, got {n}")
    rng = np.random.default_rng(seed)
    groups = group_count(classes)
    per_group = math.ceil(classes / groups)

    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    noise = rng.normal(0.0, SYNTHETIC_NOISE, size=(n, CIFAR_CHANNELS, size, size))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
    tints = rng.uniform(0.5, 1.0, size=(n, CIFAR_CHANNELS))
    images = SYNTHETIC_BACKGROUND + noise

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    frequency = 2.0 * np.pi / 6.0
    for c in range(classes):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            continue
        group, variant = c % groups, c // groups
        angle = np.pi * variant / per_group
        rows, cols = region(group, groups, size)
        wave = xx[rows, cols] * np.cos(angle) + yy[rows, cols] * np.sin(angle)
        stripes = np.sin(frequency * wave[None, :, :] + phases[members, None, None])
        pattern = SYNTHETIC_AMPLITUDE * tints[members, :, None, None] * stripes[:, None, :, :]
        images[members, :, rows, cols] += pattern

    pixels = np.clip(np.rint(images), 0, 255).astype(np.uint8)
    if stats_from is not None:
        mean, std = stats_from.mean, stats_from.std
    else:
        mean, std = channel_statistics(pixels)
    logger.debug(f"synthetic_conditional_dataset: seed {seed}, {n} images, {classes} classes in {groups} groups")
    return ImageSet(pixels, labels, mean, std, classes)
