"""Local binary patterns and per-patch texture scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from roma.vision.image import PatchGrid, split_patches

# (dy, dx) clockwise from the top-left neighbour; bit i has weight 2**i
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))

# Grey levels are rounded before comparison so that ties which are exact in
# real arithmetic (e.g. permuted channel values) stay ties in float64.
_GRAY_DECIMALS = 10


def grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return np.round(img, _GRAY_DECIMALS)
    return np.round(img.mean(axis=2), _GRAY_DECIMALS)


def lbp_map(img: np.ndarray) -> np.ndarray:
    """8-bit LBP code per pixel, replicate-padded at the borders."""
    g = grayscale(img)
    h, w = g.shape
    padded = np.pad(g, 1, mode="edge")
    codes = np.zeros((h, w), dtype=np.uint8)
    for bit, (dy, dx) in enumerate(NEIGHBOURS):
        nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        codes |= (nb > g).astype(np.uint8) << bit
    return codes


def entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    prob = counts[counts > 0] / total
    return float(-(prob * np.log2(prob)).sum())


@dataclass(frozen=True)
class ScoreMap:
    """Per-patch texture scores in row-major patch order."""

    scores: np.ndarray  # (N,)
    rows: int
    cols: int

    @property
    def image_mean(self) -> float:
        return float(self.scores.mean())

    def grid(self) -> np.ndarray:
        return self.scores.reshape(self.rows, self.cols)


def patch_scores(grid: PatchGrid, codes: np.ndarray) -> ScoreMap:
    """Shannon entropy (bits) of each patch's 256-bin LBP histogram."""
    p = grid.patch_size
    code_patches = split_patches(codes[:, :, None], p).patches.reshape(grid.n, p * p)
    scores = np.empty(grid.n)
    for k in range(grid.n):
        scores[k] = entropy_bits(np.bincount(code_patches[k], minlength=256))
    return ScoreMap(scores, grid.rows, grid.cols)


class LBPDescriptor:
    """Texture descriptor used by ARES; other descriptors follow the same call."""

    name = "lbp"

    def __call__(self, img: np.ndarray, patch_size: int) -> ScoreMap:
        grid = split_patches(img, patch_size)
        return patch_scores(grid, lbp_map(img))


DESCRIPTORS = {"lbp": LBPDescriptor}
