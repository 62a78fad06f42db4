from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from roma.errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    depth: int = 4
    decoder_depth: int = 2
    heads: int = 4
    patch_size: int = 8
    image_side: int = 96
    channels: int = 3
    state_dim: int = 8
    expand: int = 2
    s_mult: int = 6
    mlp_ratio: int = 2
    lam: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("width", "depth", "decoder_depth", "heads", "patch_size", "image_side",
                     "channels", "state_dim", "expand", "s_mult", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.image_side % self.patch_size:
            raise ConfigError(f"image_side {self.image_side} is not divisible by patch_size {self.patch_size}")
        if self.grid_side % self.s_mult:
            raise ConfigError(f"grid side {self.grid_side} is not divisible by s_mult {self.s_mult}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by heads {self.heads}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")

    @property
    def grid_side(self) -> int:
        return self.image_side // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid_side ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.channels

    @property
    def inner(self) -> int:
        return self.expand * self.width

    @property
    def cluster_side(self) -> int:
        """Pixel side ``s`` of one cluster block."""
        return self.s_mult * self.patch_size

    @property
    def cluster_grid(self) -> int:
        return self.grid_side // self.s_mult

    @property
    def n_clusters(self) -> int:
        return self.cluster_grid ** 2

    @property
    def cluster_dim(self) -> int:
        return self.cluster_side ** 2 * self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


# Full-scale variants use 192px inputs: 196 is not a multiple of 16.
PRESETS = {
    "desk": ModelConfig(),
    "micro": ModelConfig(width=32, depth=2, decoder_depth=1, heads=2),
    "tiny": ModelConfig(width=192, depth=12, patch_size=16, image_side=192, state_dim=16, mlp_ratio=4),
    "small": ModelConfig(width=384, depth=12, patch_size=16, image_side=192, state_dim=16, mlp_ratio=4),
    "base": ModelConfig(width=768, depth=12, patch_size=16, image_side=192, state_dim=16, mlp_ratio=4),
    "large": ModelConfig(width=1024, depth=24, patch_size=16, image_side=192, state_dim=16, mlp_ratio=4),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base
