"""PNG image helpers.

Images live on disk as 8-bit PNGs in [0, 255] and in memory as float arrays.
Two in-memory conventions are used throughout the package:

* "unit" images: floats in [0, 1], the storage scale; and
* "signed" images: floats in [-1, 1], the scale models and losses operate on.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError


def unit_to_signed(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) * 2.0 - 1.0


def signed_to_unit(img: np.ndarray) -> np.ndarray:
    return (img.astype(np.float32) + 1.0) / 2.0


def save_image(path: str | Path, img: np.ndarray, signed: bool = True) -> None:
    """Write an h x w x c float image as an 8-bit PNG, clipping to range."""
    arr = signed_to_unit(np.asarray(img)) if signed else np.asarray(img, dtype=np.float32)
    arr = np.clip(arr, 0.0, 1.0)
    arr8 = np.round(arr * 255.0).astype(np.uint8)
    if arr8.ndim == 3 and arr8.shape[2] == 1:
        arr8 = arr8[:, :, 0]
    Image.fromarray(arr8).save(path)


def load_image(path: str | Path, signed: bool = True) -> np.ndarray:
    """Read a PNG as an h x w x c float array (c=3 for RGB, c=1 for grayscale)."""
    with Image.open(path) as im:
        arr8 = np.asarray(im)
    if arr8.ndim == 2:
        arr8 = arr8[:, :, None]
    unit = arr8.astype(np.float32) / 255.0
    return unit_to_signed(unit) if signed else unit


def save_mask(path: str | Path, background: np.ndarray) -> None:
    """Write a boolean mask (True = background) as a PNG, 0 = foreground, 255 = background."""
    background = np.asarray(background)
    if background.dtype != np.bool_:
        raise InvalidInputError(f"mask must be boolean, got dtype {background.dtype}")
    Image.fromarray(np.where(background, 255, 0).astype(np.uint8)).save(path)


def load_mask(path: str | Path) -> np.ndarray:
    """Read a mask PNG back to a boolean array (True = background)."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise InvalidInputError(f"mask file {path} is not single-channel")
    return arr >= 128
