"""Image buffers, patch grids and PNG/PPM input-output.

Images are ``(H, W, C)`` float64 arrays with values in ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from roma.errors import ContractError, ShapeError


def check_image(img, channels: int | None = 3) -> np.ndarray:
    """Validate and return ``img`` as a contiguous float64 ``(H, W, C)`` array."""
    arr = np.ascontiguousarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) image, got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ContractError("image values must be finite and lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class PatchGrid:
    """Row-major decomposition of an image into ``p x p`` patches."""

    rows: int
    cols: int
    patch_size: int
    patches: np.ndarray  # (N, p, p, C)

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def position(self, k: int) -> tuple[int, int]:
        return divmod(k, self.cols)

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def flat(self) -> np.ndarray:
        """``(N, p*p*C)`` patch vectors."""
        return self.patches.reshape(self.n, -1)


def split_patches(img: np.ndarray, p: int) -> PatchGrid:
    img = np.asarray(img)
    h, w, c = img.shape
    if p <= 0 or h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {p}")
    rows, cols = h // p, w // p
    patches = img.reshape(rows, p, cols, p, c).transpose(0, 2, 1, 3, 4).reshape(rows * cols, p, p, c)
    return PatchGrid(rows, cols, p, patches)


def merge_patches(grid: PatchGrid) -> np.ndarray:
    p = grid.patch_size
    c = grid.patches.shape[-1]
    return grid.patches.reshape(grid.rows, grid.cols, p, p, c).transpose(0, 2, 1, 3, 4).reshape(
        grid.rows * p, grid.cols * p, c
    )


def patchify_batch(images: np.ndarray, p: int) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, N, p*p*C)`` in row-major patch order."""
    b, h, w, c = images.shape
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {p}")
    r, q = h // p, w // p
    return images.reshape(b, r, p, q, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, r * q, p * p * c)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM (P6) as RGB in ``[0, 1]``."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.ndim == 2:
        Image.fromarray(to_uint8(arr), mode="L").save(path, format="PNG")
    else:
        Image.fromarray(to_uint8(arr), mode="RGB").save(path, format="PNG")


def write_ppm(path, img: np.ndarray) -> None:
    arr = to_uint8(img)
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())
