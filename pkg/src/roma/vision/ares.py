"""Adaptive rotation encoding: texture-guided region selection and rotation.

The pipeline scores every patch with a texture descriptor, anchors on the
highest-scoring patch, searches patch-aligned square boxes containing it on
a shrinking side ladder, and rotates the first box whose mean score beats
the image-wide mean.  The rotated content is the inscribed square of the
box's inscribed circle, resized back to the box side, so no pixel from
outside the box leaks into the crop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from roma.errors import ContractError, ShapeError
from roma.vision.lbp import LBPDescriptor, ScoreMap


@dataclass(frozen=True)
class RegionBox:
    top: int
    left: int
    side: int

    def contains_pixel_box(self, top: int, left: int, h: int, w: int) -> bool:
        return (self.top <= top and self.left <= left
                and top + h <= self.top + self.side and left + w <= self.left + self.side)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.top + self.side), slice(self.left, self.left + self.side)


@dataclass(frozen=True)
class RotationRecord:
    box: Optional[RegionBox] = None
    theta: Optional[float] = None
    covered_patches: frozenset = field(default_factory=frozenset)
    applied: bool = False

    @classmethod
    def none(cls) -> "RotationRecord":
        return cls()

    def covered_mask(self, n_patches: int) -> np.ndarray:
        mask = np.zeros(n_patches)
        if self.applied:
            mask[sorted(self.covered_patches)] = 1.0
        return mask


def select_top_patch(scores: ScoreMap | Sequence[float]) -> int:
    """Index of the highest score; ``np.argmax`` already prefers the first."""
    arr = scores.scores if isinstance(scores, ScoreMap) else np.asarray(scores, dtype=float)
    if arr.size == 0:
        raise ContractError("select_top_patch: no patches")
    return int(np.argmax(arr))


def _box_mean(grid: np.ndarray, i: int, j: int, m: int) -> float:
    return math.fsum(grid[i:i + m, j:j + m].ravel()) / (m * m)


def candidate_boxes(scores: ScoreMap, top: int, side: int, patch_size: int) -> list[tuple[RegionBox, float]]:
    """All patch-aligned ``side``-boxes inside the image that contain ``top``."""
    if side % patch_size:
        raise ContractError(f"box side {side} is not a multiple of patch size {patch_size}")
    m = side // patch_size
    rows, cols = scores.rows, scores.cols
    if m > rows or m > cols or m < 1:
        raise ContractError(f"box side {side} does not fit a {rows * patch_size}x{cols * patch_size} image")
    r, c = divmod(top, cols)
    grid = scores.grid()
    out = []
    for i in range(max(0, r - m + 1), min(r, rows - m) + 1):
        for j in range(max(0, c - m + 1), min(c, cols - m) + 1):
            out.append((RegionBox(i * patch_size, j * patch_size, side), _box_mean(grid, i, j, m)))
    return out


def best_candidate_box(scores: ScoreMap, top: int, side: int, patch_size: int) -> tuple[RegionBox, float]:
    """Highest-mean candidate box; ties go to the smallest (top, left)."""
    best, best_val = None, -math.inf
    for box, val in candidate_boxes(scores, top, side, patch_size):
        if val > best_val:
            best, best_val = box, val
    return best, best_val


def adaptive_region_select(
    scores: ScoreMap,
    top: int,
    ladder: Sequence[int],
    patch_size: int,
    threshold: float = 1.0,
) -> Optional[RegionBox]:
    """First box on the ladder whose mean score exceeds ``threshold`` x image mean."""
    if list(ladder) != sorted(ladder, reverse=True):
        raise ContractError(f"ladder must be sorted descending, got {list(ladder)}")
    bar = threshold * math.fsum(scores.scores) / scores.scores.size
    for side in ladder:
        box, val = best_candidate_box(scores, top, side, patch_size)
        if val > bar:
            return box
    return None


# -- rotation --------------------------------------------------------------

def inscribed_side(side: int) -> int:
    return int(math.floor(side / math.sqrt(2.0)))


def crop_source_coords(side: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Source (row, col) sample positions inside the box for the rotated crop.

    Output pixel centres of the inscribed square are rotated by ``-theta``
    about the box centre; returned arrays have shape ``(m, m)``.
    """
    m = inscribed_side(side)
    off = np.arange(m) + 0.5 - m / 2.0
    oy, ox = np.meshgrid(off, off, indexing="ij")
    c, s = math.cos(theta), math.sin(theta)
    sx = c * ox + s * oy
    sy = -s * ox + c * oy
    centre = side / 2.0 - 0.5
    return centre + sy, centre + sx


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``img[..., C]`` at fractional indices (clamped)."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(ys).astype(int), h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    top = img[y0, x0] * (1.0 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1.0 - wx) + img[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, yy, xx)


def inscribed_rotate_crop(img: np.ndarray, box: RegionBox, theta: float) -> np.ndarray:
    """Rotate the box content by ``theta`` and keep the inscribed square, resized to the box side."""
    h, w = img.shape[:2]
    if box.top < 0 or box.left < 0 or box.top + box.side > h or box.left + box.side > w:
        raise ContractError(f"box {box} lies outside a {h}x{w} image")
    region = img[box.slices()]
    ys, xs = crop_source_coords(box.side, theta)
    square = bilinear_sample(region, ys, xs)
    return np.clip(resize_bilinear(square, box.side, box.side), 0.0, 1.0)


# -- full augmentation -------------------------------------------------------

def covered_patches(box: RegionBox, patch_size: int, cols: int) -> frozenset:
    r0, c0 = box.top // patch_size, box.left // patch_size
    m = box.side // patch_size
    return frozenset((r0 + i) * cols + (c0 + j) for i in range(m) for j in range(m))


def select_region(img: np.ndarray, patch_size: int, ladder: Sequence[int], threshold: float = 1.0,
                  descriptor=None) -> Optional[RegionBox]:
    descriptor = descriptor or LBPDescriptor()
    scores = descriptor(img, patch_size)
    top = select_top_patch(scores)
    usable = [s for s in ladder if s // patch_size <= min(scores.rows, scores.cols)]
    return adaptive_region_select(scores, top, usable, patch_size, threshold)


def apply_rotation_augment(
    img: np.ndarray,
    rng: np.random.Generator,
    patch_size: int,
    ladder: Sequence[int],
    threshold: float = 1.0,
    descriptor=None,
) -> tuple[np.ndarray, RotationRecord]:
    """Rotate the selected high-texture region in place of the original pixels.

    Returns the input object itself (unchanged) when no region qualifies.
    """
    h, w = img.shape[:2]
    if h % patch_size or w % patch_size:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {patch_size}")
    box = select_region(img, patch_size, ladder, threshold, descriptor)
    if box is None:
        return img, RotationRecord.none()
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    out = img.copy()
    out[box.slices()] = inscribed_rotate_crop(img, box, theta)
    return out, RotationRecord(box, theta, covered_patches(box, patch_size, w // patch_size), True)


def random_crop_baseline(img_shape: tuple, side: int, rng: np.random.Generator | int,
                         patch_size: int = 1) -> RegionBox:
    """Uniformly drawn patch-aligned ``side``-box inside the image."""
    h, w = img_shape[:2]
    if side > min(h, w):
        raise ContractError(f"crop side {side} exceeds image {h}x{w}")
    if side % patch_size:
        raise ContractError(f"crop side {side} is not a multiple of patch size {patch_size}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n_rows = (h - side) // patch_size + 1
    n_cols = (w - side) // patch_size + 1
    k = int(rng.integers(n_rows * n_cols))
    i, j = divmod(k, n_cols)
    return RegionBox(i * patch_size, j * patch_size, side)
