"""Planted-shape synthetic imagery and image-directory ingestion.

Every image holds a few textured objects of one shape (the foreground) on
a smooth or noisy background.  The shape is the class label, so the same
generator serves pretraining, linear probing and, with a single object per
image, capture-rate scoring.  Backgrounds are dark and objects bright within
narrow ranges: free per-image colours would dominate pooled features and
drown the shape signal.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from roma.errors import ConfigError, FormatError
from roma.vision.ares import resize_bilinear
from roma.vision.image import read_image, write_png

SHAPES = ("rectangle", "ellipse", "cross")
BACKGROUNDS = ("flat", "noise", "stripes")
_CROSS_HALF_WIDTH = 1.0 / 3.0
_MIN_ASPECT = 0.5
_MAX_PLACEMENT_TRIES = 20_000


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    ``scale_range`` bounds the diameter (pixels) of the circle circumscribing
    each object; ``rotation_range`` bounds its in-plane angle in radians.
    ``objects`` is the inclusive range of same-class objects per image;
    objects never overlap.  ``background_level`` and ``object_level`` bound
    the per-channel base colours, ``texture`` the per-pixel jitter on objects.
    """

    image_side: int = 96
    backgrounds: tuple = ("flat", "stripes")
    shapes: tuple = SHAPES
    scale_range: tuple = (14.0, 22.0)
    rotation_range: tuple = (0.0, 0.0)
    count: int = 512
    texture: float = 0.05
    objects: tuple = (4, 6)
    background_level: tuple = (0.25, 0.35)
    object_level: tuple = (0.75, 0.95)

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 2.0 <= lo <= hi <= self.image_side:
            raise ConfigError(f"scale_range {self.scale_range} must satisfy 2 <= lo <= hi <= image side")
        unknown = set(self.backgrounds) - set(BACKGROUNDS)
        if unknown or not self.backgrounds:
            raise ConfigError(f"backgrounds must be a nonempty subset of {BACKGROUNDS}, got {self.backgrounds}")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown or not self.shapes:
            raise ConfigError(f"shapes must be a nonempty subset of {SHAPES}, got {self.shapes}")
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if not 1 <= self.objects[0] <= self.objects[1]:
            raise ConfigError(f"objects range {self.objects} must satisfy 1 <= lo <= hi")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise ConfigError(f"rotation_range {self.rotation_range} is reversed")
        for name in ("background_level", "object_level"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{name} {(lo, hi)} must satisfy 0 <= lo <= hi <= 1")
        if not 0.0 <= self.texture <= 0.5:
            raise ConfigError(f"texture must lie in [0, 0.5], got {self.texture}")

    @property
    def n_classes(self) -> int:
        return len(self.shapes)

    def area_bounds(self) -> tuple[float, float]:
        """Limits on the foreground area in pixels, allowing one pixel of rasterisation slack per edge."""
        lo, hi = self.scale_range
        smallest = min(_area_fraction(s) for s in self.shapes) * lo * lo
        one = max(0.0, smallest - 2.0 * math.pi * lo), math.pi / 4.0 * hi * hi + 2.0 * math.pi * hi
        return self.objects[0] * one[0], self.objects[1] * one[1]

    def with_(self, **kw) -> "SyntheticSpec":
        return SyntheticSpec(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _area_fraction(shape: str) -> float:
    if shape == "rectangle":
        phi = math.atan(_MIN_ASPECT)
        return 0.5 * math.sin(2.0 * phi)
    if shape == "ellipse":
        return math.pi / 4.0 * _MIN_ASPECT
    w = _CROSS_HALF_WIDTH
    a2 = 0.25 / (1.0 + w * w)
    return (8.0 * w - 4.0 * w * w) * a2


@dataclass
class SyntheticSample:
    image: np.ndarray      # (H, W, 3) in [0, 1], quantised to 8-bit levels
    mask: np.ndarray       # (H, W) bool foreground
    label: int
    shape: str
    background: str
    meta: dict = field(default_factory=dict)


def shape_mask(shape: str, side: int, center: tuple, diameter: float, aspect: float, angle: float) -> np.ndarray:
    """Pixel-centre rasterisation of a shape that fits in a circle of ``diameter``."""
    ys, xs = np.mgrid[0:side, 0:side] + 0.5
    dy, dx = ys - center[0], xs - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    r = diameter / 2.0
    if shape == "rectangle":
        a = r / math.sqrt(1.0 + aspect * aspect)
        return (np.abs(u) <= a) & (np.abs(v) <= aspect * a)
    if shape == "ellipse":
        return (u / r) ** 2 + (v / (aspect * r)) ** 2 <= 1.0
    if shape == "cross":
        a = r / math.sqrt(1.0 + _CROSS_HALF_WIDTH ** 2)
        w = _CROSS_HALF_WIDTH * a
        return ((np.abs(u) <= a) & (np.abs(v) <= w)) | ((np.abs(u) <= w) & (np.abs(v) <= a))
    raise ConfigError(f"unknown shape {shape!r}")


def _background(kind: str, side: int, rng: np.random.Generator, level: tuple) -> np.ndarray:
    base = rng.uniform(*level, 3)
    if kind == "flat":
        return np.broadcast_to(base, (side, side, 3)).copy()
    if kind == "noise":
        return np.clip(base + rng.uniform(-0.2, 0.2, (side, side, 3)), 0.0, 1.0)
    period = rng.uniform(24.0, 48.0)
    beta = rng.uniform(0.0, math.pi)
    ys, xs = np.mgrid[0:side, 0:side]
    wave = 0.15 * np.sin(2.0 * math.pi * (xs * math.cos(beta) + ys * math.sin(beta)) / period)
    return np.clip(base + wave[..., None], 0.0, 1.0)


def generate_sample(spec: SyntheticSpec, seed: int, index: int) -> SyntheticSample:
    """Sample ``index`` of the set; depends only on ``(spec, seed, index)``."""
    rng = np.random.default_rng([seed, index])
    side = spec.image_side
    label = index % spec.n_classes
    shape = spec.shapes[label]
    background = spec.backgrounds[int(rng.integers(len(spec.backgrounds)))]
    img = _background(background, side, rng, spec.background_level)
    n_objects = int(rng.integers(spec.objects[0], spec.objects[1] + 1))
    mask = np.zeros((side, side), dtype=bool)
    placed, attempts = [], 0
    while len(placed) < n_objects:
        attempts += 1
        if attempts > _MAX_PLACEMENT_TRIES:
            raise ConfigError(f"cannot fit {n_objects} objects of diameter {spec.scale_range} into a "
                              f"{side}px image; lower objects or scale_range")
        if attempts % 200 == 0:
            placed.clear()  # crowded layout: start over
        diameter = rng.uniform(*spec.scale_range)
        r = diameter / 2.0
        center = (rng.uniform(r, side - r), rng.uniform(r, side - r))
        if any(math.dist(center, c) < r + d / 2.0 for c, d, _, _ in placed):
            continue
        aspect = rng.uniform(_MIN_ASPECT, 1.0) if shape != "cross" else 1.0
        angle = rng.uniform(*spec.rotation_range)
        placed.append((center, diameter, aspect, angle))
    fill = np.empty_like(img)
    for center, diameter, aspect, angle in placed:
        obj = shape_mask(shape, side, center, diameter, aspect, angle)
        color = rng.uniform(*spec.object_level, 3)
        fill[obj] = np.clip(color + rng.uniform(-spec.texture, spec.texture, (int(obj.sum()), 3)), 0.0, 1.0)
        mask |= obj
    img[mask] = fill[mask]
    img = np.rint(img * 255.0) / 255.0
    meta = {"objects": [dict(center=c, diameter=d, aspect=a, angle=t) for c, d, a, t in placed]}
    return SyntheticSample(img, mask, label, shape, background, meta)


def iter_samples(spec: SyntheticSpec, seed: int) -> Iterator[SyntheticSample]:
    for i in range(spec.count):
        yield generate_sample(spec, seed, i)


def generate_arrays(spec: SyntheticSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """All images stacked as ``(count, H, W, 3)`` plus the label vector."""
    images = np.empty((spec.count, spec.image_side, spec.image_side, 3))
    labels = np.empty(spec.count, dtype=np.int64)
    for i, s in enumerate(iter_samples(spec, seed)):
        images[i] = s.image
        labels[i] = s.label
    return images, labels


LABEL_FIELDS = ("file", "label", "shape", "background")


def write_dataset(spec: SyntheticSpec, seed: int, out_dir) -> Path:
    """Write ``images/``, ``masks/`` and ``labels.csv`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    with (out / "labels.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_FIELDS)
        for i, s in enumerate(iter_samples(spec, seed)):
            name = f"{i:05d}.png"
            write_png(out / "images" / name, s.image)
            write_png(out / "masks" / name, s.mask.astype(np.float64))
            writer.writerow([name, s.label, s.shape, s.background])
    return out


def load_image_dir(path, image_side: int, limit: Optional[int] = None) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Images (resized to ``image_side``) and labels if a ``labels.csv`` is present.

    Accepts either a dataset root with ``images/`` or a flat folder of
    PNG/PPM files.
    """
    root = Path(path)
    if not root.is_dir():
        raise FormatError(f"image directory {root} does not exist")
    img_dir = root / "images" if (root / "images").is_dir() else root
    labels_file = root / "labels.csv"
    if labels_file.exists():
        with labels_file.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        files = [img_dir / r["file"] for r in rows]
        labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    else:
        files = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in (".png", ".ppm"))
        labels = None
    if limit is not None:
        files = files[:limit]
        labels = None if labels is None else labels[:limit]
    if not files:
        raise FormatError(f"no images found in {img_dir}")
    images = np.empty((len(files), image_side, image_side, 3))
    for i, f in enumerate(files):
        img = read_image(f)
        if img.shape[:2] != (image_side, image_side):
            img = resize_bilinear(img, image_side, image_side)
        images[i] = img
    return images, labels
