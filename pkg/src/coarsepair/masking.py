"""Foreground masks from instance proposals, and the joint background of a pair.

A mask here is a plain (h, w) boolean array with True = background. Paired
reconstruction losses only look at pixels that are background in *both*
images of a coarse pair, so the central operation is the intersection of
backgrounds (equivalently, the complement of the foreground union).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import imgio
from .errors import InvalidInputError

# Movable road users; anything else counts as background context.
DEFAULT_FG_CLASSES = frozenset({"car", "pedestrian", "cyclist", "truck", "bus"})
DEFAULT_CONFIDENCE_THRESHOLD = 0.5


@dataclass(frozen=True)
class Region:
    """One instance proposal: a bitmap (True = inside), a confidence, a class."""

    bitmap: np.ndarray
    confidence: float
    class_label: str

    def __post_init__(self):
        bitmap = np.asarray(self.bitmap, dtype=bool)
        object.__setattr__(self, "bitmap", bitmap)
        if bitmap.ndim != 2:
            raise InvalidInputError(f"region bitmap must be 2-D, got shape {bitmap.shape}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class InstanceProposals:
    """All proposals for one image; bitmaps share one shape."""

    regions: tuple[Region, ...]
    shape: tuple[int, int]

    def __post_init__(self):
        for r in self.regions:
            if r.bitmap.shape != tuple(self.shape):
                raise InvalidInputError(
                    f"region shape {r.bitmap.shape} != proposals shape {self.shape}"
                )


def build_foreground_mask(
    proposals: InstanceProposals,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    fg_classes: Iterable[str] = DEFAULT_FG_CLASSES,
) -> np.ndarray:
    """Union accepted foreground proposals; return background (True) mask.

    A pixel is foreground iff covered by any region whose confidence is at
    least `threshold` and whose class is in `fg_classes`.
    """
    if not 0.0 <= threshold <= 1.0:
        raise InvalidInputError(f"threshold must be in [0, 1], got {threshold}")
    fg_classes = set(fg_classes)
    fg = np.zeros(proposals.shape, dtype=bool)
    for region in proposals.regions:
        if region.confidence >= threshold and region.class_label in fg_classes:
            fg |= region.bitmap
    return ~fg


def joint_background(mask_x: np.ndarray, mask_y: np.ndarray) -> np.ndarray:
    """Pixels background in both masks (True = background in the result)."""
    mask_x = np.asarray(mask_x, dtype=bool)
    mask_y = np.asarray(mask_y, dtype=bool)
    if mask_x.shape != mask_y.shape:
        raise InvalidInputError(f"mask shapes differ: {mask_x.shape} vs {mask_y.shape}")
    return mask_x & mask_y


def downsample_mask(mask: np.ndarray, factor: int, keep_fraction: float = 1.0) -> np.ndarray:
    """Reduce a mask to feature-map resolution by factor x factor blocks.

    An output cell is background iff the fraction of background pixels in its
    block is >= keep_fraction; keep_fraction 1.0 keeps only fully-background
    cells.
    """
    mask = np.asarray(mask, dtype=bool)
    if factor < 1:
        raise InvalidInputError(f"factor must be >= 1, got {factor}")
    h, w = mask.shape
    if h % factor or w % factor:
        raise InvalidInputError(f"mask shape {mask.shape} not divisible by factor {factor}")
    if not 0.0 <= keep_fraction <= 1.0:
        raise InvalidInputError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    if factor == 1:
        return mask.copy()
    blocks = mask.reshape(h // factor, factor, w // factor, factor)
    frac = blocks.mean(axis=(1, 3))
    return frac >= keep_fraction


def background_count(mask: np.ndarray) -> int:
    """Cardinality of the background index set."""
    return int(np.count_nonzero(np.asarray(mask, dtype=bool)))


# ---------------------------------------------------------------------------
# Files: mask PNGs are 0 = foreground / 255 = background; proposals are a
# text sidecar per image, one region per line `region_file,confidence,class`,
# where region_file is a PNG with 255 = inside the region.
# ---------------------------------------------------------------------------

save_mask = imgio.save_mask
load_mask = imgio.load_mask


def write_proposals(sidecar_path: str | Path, proposals: InstanceProposals) -> None:
    """Write proposals as a sidecar plus one region PNG per proposal."""
    sidecar_path = Path(sidecar_path)
    lines = []
    for k, region in enumerate(proposals.regions):
        region_file = f"{sidecar_path.stem}_r{k:02d}.png"
        imgio.save_mask(sidecar_path.parent / region_file, region.bitmap)
        lines.append(f"{region_file},{region.confidence!r},{region.class_label}")
    sidecar_path.write_text("".join(line + "\n" for line in lines))


def read_proposals(sidecar_path: str | Path, shape: tuple[int, int]) -> InstanceProposals:
    sidecar_path = Path(sidecar_path)
    regions = []
    for line in sidecar_path.read_text().splitlines():
        if not line.strip():
            continue
        region_file, conf, label = line.split(",")
        bitmap = imgio.load_mask(sidecar_path.parent / region_file)
        regions.append(Region(bitmap=bitmap, confidence=float(conf), class_label=label))
    return InstanceProposals(regions=tuple(regions), shape=shape)
