import numpy as np
from PIL import Image, ImageOps

from ..Datasets.constants import AUGMENT_PADDING


def to_image(pixels: np.ndarray) -> Image.Image:
    """
    Converts a uint8 [3, H, W] array to a PIL RGB image.

    :param numpy.ndarray pixels: channel-first image.

    :rtype: PIL.Image
    """
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"to_image: expected [3, H, W] pixels, got {pixels.shape}")
    return Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)), mode="RGB")


def from_image(image: Image.Image) -> np.ndarray:
    return np.asarray(image.convert("RGB"), dtype=np.uint8).transpose(2, 0, 1).copy()


def pad_and_crop(image: Image.Image, padding: int, left: int, top: int) -> Image.Image:
    """
    Pads the image with black borders, then crops a window of the original
    size whose top-left corner is (left, top) in the padded image.

    :param Image image: PIL image.
    :param int padding: border width on every side.
    :param int left: crop offset, in [0, 2·padding].
    :param int top: crop offset, in [0, 2·padding].

    :rtype: PIL.Image
    """
    if not (0 <= left <= 2 * padding and 0 <= top <= 2 * padding):
        raise ValueError(f"pad_and_crop: offset ({left}, {top}) outside [0, {2 * padding}]")
    padded = Image.new("RGB", (image.width + 2 * padding, image.height + 2 * padding), "black")
    padded.paste(image, (padding, padding))
    return padded.crop((left, top, left + image.width, top + image.height))


def mirror(image: Image.Image) -> Image.Image:
    return ImageOps.mirror(image)


def augment(pixels: np.ndarray, rng: np.random.Generator, padding: int = AUGMENT_PADDING) -> np.ndarray:
    """
    Random crop from the padded image, then a horizontal flip with probability 1/2.
    """
    left, top = rng.integers(0, 2 * padding + 1, size=2)
    flip = rng.random() < 0.5
    image = pad_and_crop(to_image(pixels), padding, int(left), int(top))
    if flip:
        image = mirror(image)
    return from_image(image)


def augment_batch(pixels: np.ndarray, rng: np.random.Generator, padding: int = AUGMENT_PADDING) -> np.ndarray:
    return np.stack([augment(p, rng, padding) for p in pixels]) if len(pixels) else pixels.copy()
