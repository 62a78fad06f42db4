"""How often a crop strategy lands on the planted foreground object."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Protocol

import numpy as np

from roma.errors import ContractError, ShapeError
from roma.vision.ares import RegionBox, random_crop_baseline, select_region


@dataclass
class CaptureSample:
    image: np.ndarray
    mask: np.ndarray
    label: int = 0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.image.shape[:2]:
            raise ShapeError(f"mask {self.mask.shape} does not match image {self.image.shape[:2]}")
        if not self.mask.any():
            raise ContractError("capture sample has an empty foreground mask")


class Selector(Protocol):
    def __call__(self, image: np.ndarray, side: int, rng: np.random.Generator) -> Optional[RegionBox]: ...


class AresSelector:
    """Texture-driven region choice restricted to a single box size."""

    name = "ares"

    def __init__(self, patch_size: int = 8, threshold: float = 1.0, descriptor=None):
        self.patch_size = patch_size
        self.threshold = threshold
        self.descriptor = descriptor

    def __call__(self, image, side, rng):
        return select_region(image, self.patch_size, (side,), self.threshold, self.descriptor)


class RandomCropSelector:
    name = "random"

    def __init__(self, patch_size: int = 8):
        self.patch_size = patch_size

    def __call__(self, image, side, rng):
        return random_crop_baseline(image.shape, side, rng, self.patch_size)


class FullImageSelector:
    name = "full"

    def __call__(self, image, side, rng):
        return RegionBox(0, 0, min(image.shape[:2]))


def is_captured(box: Optional[RegionBox], mask: np.ndarray, threshold: float = 0.5) -> bool:
    """True iff ``box`` holds at least ``threshold`` of the mask pixels; no box never captures."""
    if box is None:
        return False
    inside = int(mask[box.slices()].sum())
    return inside >= threshold * int(mask.sum())


def capture_rate(selector: Selector, samples: Iterable[CaptureSample], side: int, threshold: float = 0.5,
                 seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    hits = total = 0
    for s in samples:
        hits += is_captured(selector(s.image, side, rng), s.mask, threshold)
        total += 1
    if total == 0:
        raise ContractError("capture_rate needs at least one sample")
    return hits / total
