"""Run configuration: ``key = value`` files, flag overrides, validation.

Unset model fields fall back to the chosen preset.  An unset ARES ladder
becomes ``6p, 4p, 2p`` for patch size ``p``.  A ``recipe`` supplies a bundle
of defaults that file values and flags still override.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from roma.data import BACKGROUNDS, SHAPES, SyntheticSpec
from roma.errors import ConfigError
from roma.model.config import PRESETS, ModelConfig, preset
from roma.pretrain.trainer import TrainConfig
from roma.vision.lbp import DESCRIPTORS

MODEL_OVERRIDES = ("width", "depth", "decoder_depth", "heads", "patch_size", "image_side", "state_dim",
                   "expand", "mlp_ratio")
LADDER_MULTIPLES = (6, 4, 2)

# 400 epochs over 4M images at batch 256; kept for reference, far beyond a CPU budget
RECIPES = {
    "desk": {},
    "fullscale": dict(preset="base", batch_size=256, lr=1.5e-4, steps=400 * 4_000_000 // 256),
}


@dataclass
class RunConfig:
    preset: str = "desk"
    recipe: str = "desk"
    width: Optional[int] = None
    depth: Optional[int] = None
    decoder_depth: Optional[int] = None
    heads: Optional[int] = None
    patch_size: Optional[int] = None
    image_side: Optional[int] = None
    state_dim: Optional[int] = None
    expand: Optional[int] = None
    mlp_ratio: Optional[int] = None
    lam: float = 0.1
    s_mult: int = 6
    # "synthetic" or a directory of images
    data: str = "synthetic"
    synth_count: int = 512
    synth_backgrounds: tuple = ("flat", "stripes")
    synth_shapes: tuple = SHAPES
    synth_scale: tuple = (14.0, 22.0)
    synth_objects: tuple = (4, 6)
    synth_texture: float = 0.05
    synth_rotation_deg: tuple = (0.0, 0.0)
    seed: int = 0
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    min_lr: Optional[float] = None
    warmup_frac: float = 0.05
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    ares: bool = True
    descriptor: str = "lbp"
    ladder: Optional[tuple] = None
    threshold: float = 1.0
    checkpoint_every: int = 500
    probe_train: int = 300
    probe_test: int = 300
    probe_epochs: int = 500
    probe_lr: float = 0.1
    capture_count: int = 500
    # capture images hold one object so "the foreground" is a single region
    capture_scale: tuple = (20.0, 36.0)
    capture_side: Optional[int] = None
    capture_threshold: float = 0.5
    audit_trials: int = 32
    out_dir: str = "runs/default"

    # -- derived views ---------------------------------------------------------
    def model_config(self) -> ModelConfig:
        overrides = {k: getattr(self, k) for k in MODEL_OVERRIDES if getattr(self, k) is not None}
        return preset(self.preset, lam=self.lam, s_mult=self.s_mult, **overrides)

    def resolved_ladder(self) -> tuple:
        if self.ladder is not None:
            return tuple(self.ladder)
        p = self.model_config().patch_size
        return tuple(m * p for m in LADDER_MULTIPLES)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps, batch_size=self.batch_size, lr=self.lr, min_lr=self.min_lr,
            warmup_frac=self.warmup_frac, weight_decay=self.weight_decay, beta1=self.beta1, beta2=self.beta2,
            seed=self.seed, ares=self.ares, ladder=self.resolved_ladder(), threshold=self.threshold,
        )

    def synthetic_spec(self, count: Optional[int] = None) -> SyntheticSpec:
        lo, hi = (math.radians(a) for a in self.synth_rotation_deg)
        return SyntheticSpec(
            image_side=self.model_config().image_side, backgrounds=tuple(self.synth_backgrounds),
            shapes=tuple(self.synth_shapes), scale_range=tuple(float(s) for s in self.synth_scale),
            rotation_range=(lo, hi), count=self.synth_count if count is None else count,
            objects=tuple(int(n) for n in self.synth_objects), texture=float(self.synth_texture),
        )

    def capture_spec(self) -> SyntheticSpec:
        return self.synthetic_spec(self.capture_count).with_(
            objects=(1, 1), scale_range=tuple(float(s) for s in self.capture_scale))

    @property
    def strategy(self) -> str:
        if self.ares and self.lam > 0:
            return "roma"
        if not self.ares and self.lam == 0:
            return "baseline"
        return ("ares" if self.ares else "no-ares") + f"-lam{self.lam:g}"

    def validate(self) -> "RunConfig":
        """Raise :class:`ConfigError` naming the first violated constraint."""
        if self.recipe not in RECIPES:
            raise ConfigError(f"recipe must be one of {sorted(RECIPES)}, got {self.recipe!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.threshold <= 0:
            raise ConfigError(f"threshold multiplier must be > 0, got {self.threshold}")
        if self.descriptor not in DESCRIPTORS:
            raise ConfigError(f"descriptor must be one of {sorted(DESCRIPTORS)}, got {self.descriptor!r}")
        model = self.model_config()  # checks patch/image/s_mult/head divisibility
        p = model.patch_size
        for side in self.resolved_ladder():
            if side % p or side <= 0:
                raise ConfigError(f"ladder side {side} is not a positive multiple of patch size {p}")
            if side > model.image_side:
                raise ConfigError(f"ladder side {side} exceeds image side {model.image_side}")
        side = self.capture_side if self.capture_side is not None else self.resolved_ladder()[0]
        if side % p or side > model.image_side:
            raise ConfigError(f"capture_side {side} must be a multiple of {p} no larger than the image")
        if not 0.0 < self.capture_threshold <= 1.0:
            raise ConfigError(f"capture_threshold must lie in (0, 1], got {self.capture_threshold}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        for name in ("probe_train", "probe_test", "probe_epochs", "capture_count", "audit_trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if set(self.synth_backgrounds) - set(BACKGROUNDS):
            raise ConfigError(f"synth_backgrounds must be drawn from {BACKGROUNDS}")
        self.train_config()
        if self.data == "synthetic":
            self.synthetic_spec()
        self.capture_spec()
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "ladder" and v is None:
                v = self.resolved_ladder()
            lines.append(f"{f.name} = {format_value(v)}")
        return "\n".join(lines) + "\n"


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def _kind(name: str):
    """Scalar type of a field, read off its annotation."""
    ann = str(_FIELDS[name].type)
    for t, key in ((bool, "bool"), (int, "int"), (float, "float"), (tuple, "tuple"), (str, "str")):
        if key in ann:
            return t
    return str


def _scalar(text: str, kind):
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def coerce(name: str, text: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}; valid keys: {', '.join(_FIELDS)}")
    text = text.strip()
    if text.lower() == "none" and "Optional" in str(_FIELDS[name].type):
        return None
    kind = _kind(name)
    try:
        if kind is tuple:
            default = getattr(_DEFAULTS, name)
            item = type(default[0]) if default else int
            return tuple(_scalar(x.strip(), item) for x in text.split(",") if x.strip())
        return _scalar(text, kind)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None


def read_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        values[key.strip()] = coerce(key.strip(), value)
    return values


def parse_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """File values, then ``overrides`` (already-typed or text), then validation."""
    values = read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        values[key] = coerce(key, value) if isinstance(value, str) else value
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}; valid keys: {', '.join(_FIELDS)}")
    recipe = values.get("recipe", RunConfig.recipe)
    if recipe not in RECIPES:
        raise ConfigError(f"recipe must be one of {sorted(RECIPES)}, got {recipe!r}")
    return dataclasses.replace(RunConfig(), **{**RECIPES[recipe], **values}).validate()
