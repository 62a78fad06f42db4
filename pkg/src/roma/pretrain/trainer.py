"""Pretraining loop: augment, predict, two-scale loss, backward, AdamW."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from roma.errors import ConfigError, NumericError
from roma.model.config import ModelConfig
from roma.model.network import RoMANetwork, cluster_blocks
from roma.numerics import Tape, backward
from roma.pretrain.checkpoint import Checkpoint, check_moments, load_checkpoint, save_checkpoint
from roma.pretrain.loss import LossBreakdown, cluster_loss, cluster_targets, combine, token_loss, token_targets
from roma.pretrain.optim import OptimState, adamw_step, cosine_lr
from roma.vision.ares import RotationRecord, apply_rotation_augment
from roma.vision.image import patchify_batch


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    min_lr: Optional[float] = None
    warmup_frac: float = 0.05
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    ares: bool = True
    ladder: tuple = (48, 32, 16)
    threshold: float = 1.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError(f"warmup_frac must lie in [0, 1], got {self.warmup_frac}")
        if self.threshold <= 0:
            raise ConfigError(f"threshold multiplier must be > 0, got {self.threshold}")

    @property
    def warmup(self) -> int:
        return int(round(self.warmup_frac * self.steps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ladder"] = list(self.ladder)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if "ladder" in kw:
            kw["ladder"] = tuple(kw["ladder"])
        return cls(**kw)


def sample_rng(seed: int, sample_index: int) -> np.random.Generator:
    """Independent stream per (seed, sample) so augmentation order never matters."""
    return np.random.default_rng([seed, sample_index])


METRIC_FIELDS = ("step", "lr", "token_mse", "cluster_mse", "total", "wall_ms")


class Pretrainer:
    def __init__(self, network: RoMANetwork, config: TrainConfig = TrainConfig()):
        self.network = network
        self.config = config
        self.optim = OptimState(base_lr=config.lr, weight_decay=config.weight_decay,
                                betas=(config.beta1, config.beta2), eps=config.eps)
        self.rng = np.random.default_rng(config.seed)
        self.order: list = []
        self.cursor = 0
        self.step = 0

    # -- data ----------------------------------------------------------------
    def next_indices(self, n_images: int) -> list[int]:
        out = []
        while len(out) < self.config.batch_size:
            if self.cursor >= len(self.order):
                self.order = [int(i) for i in self.rng.permutation(n_images)]
                self.cursor = 0
            out.append(self.order[self.cursor])
            self.cursor += 1
        return out

    def augment(self, images: np.ndarray, sample_ids: Sequence[int]) -> tuple[np.ndarray, list]:
        c = self.config
        p = self.network.config.patch_size
        if not c.ares:
            return images, [RotationRecord.none() for _ in range(len(images))]
        out, records = [], []
        for img, sid in zip(images, sample_ids):
            aug, rec = apply_rotation_augment(img, sample_rng(c.seed, sid), p, c.ladder, c.threshold)
            out.append(aug)
            records.append(rec)
        return np.stack(out), records

    # -- objective -------------------------------------------------------------
    def objective(self, images: np.ndarray, records: Optional[Sequence[RotationRecord]] = None):
        """Taped total loss for already-augmented ``images`` plus its breakdown."""
        net = self.network
        cfg = net.config
        out = net.forward(images, records)
        tok = token_loss(out.token_preds, token_targets(patchify_batch(images, cfg.patch_size)))
        clu = None
        if out.cluster_preds is not None:
            clu = cluster_loss(out.cluster_preds, cluster_targets(cluster_blocks(images, cfg)))
        total = combine(tok, clu, cfg.lam)
        clu_val = clu.item() if clu is not None else 0.0
        return total, LossBreakdown(tok.item(), clu_val, cfg.lam, total.item())

    def lr_at(self, step: int) -> float:
        c = self.config
        return cosine_lr(min(step + 1, c.steps), c.warmup, c.steps, c.lr, c.min_lr)

    def train_step(self, images: np.ndarray, sample_ids: Optional[Sequence[int]] = None) -> LossBreakdown:
        images = np.asarray(images, dtype=np.float64)
        if sample_ids is None:
            start = self.step * self.config.batch_size
            sample_ids = range(start, start + len(images))
        aug, records = self.augment(images, sample_ids)
        params = self.network.params
        params.zero_grad()
        with Tape() as tape:
            total, parts = self.objective(aug, records)
        if not np.isfinite(parts.total):
            raise NumericError(f"non-finite loss at step {self.step}")
        backward(total, tape, params)
        adamw_step(params, self.optim, self.lr_at(self.step))
        params.zero_grad()
        self.step += 1
        return parts

    def fit(self, images: np.ndarray, steps: Optional[int] = None,
            callback: Optional[Callable[[int, float, LossBreakdown, float], None]] = None) -> list[LossBreakdown]:
        images = np.asarray(images, dtype=np.float64)
        steps = self.config.steps - self.step if steps is None else steps
        history = []
        for _ in range(steps):
            idx = self.next_indices(len(images))
            start = self.step * self.config.batch_size
            lr = self.lr_at(self.step)
            t0 = time.perf_counter()
            parts = self.train_step(images[idx], range(start, start + len(idx)))
            wall = (time.perf_counter() - t0) * 1000.0
            history.append(parts)
            if callback is not None:
                callback(self.step, lr, parts, wall)
        return history

    # -- state -------------------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        o = self.optim
        moments = {f"m/{k}": v.copy() for k, v in o.m.items()}
        moments.update({f"v/{k}": v.copy() for k, v in o.v.items()})
        return Checkpoint(
            model_config=self.network.config.to_dict(),
            train_config=self.config.to_dict(),
            params=self.network.params.state(),
            optim=o.hyper(),
            moments=moments,
            rng=self.rng_state(),
            step=self.step,
        )

    def save(self, path) -> Path:
        return save_checkpoint(path, self.checkpoint())

    def restore(self, ckpt: Checkpoint) -> None:
        """Apply ``ckpt``; raises before touching anything if it does not fit this trainer."""
        check_moments(ckpt.params, ckpt.moments)
        self.network.params.load_state(ckpt.params)
        hyper = ckpt.optim
        self.optim = OptimState(base_lr=hyper["base_lr"], weight_decay=hyper["weight_decay"],
                                betas=tuple(hyper["betas"]), eps=hyper["eps"], step=int(hyper["step"]))
        for key, arr in ckpt.moments.items():
            kind, _, name = key.partition("/")
            getattr(self.optim, kind)[name] = arr.copy()
        self.set_rng_state(ckpt.rng)
        self.step = int(ckpt.step)

    @classmethod
    def from_checkpoint(cls, ckpt) -> "Pretrainer":
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt)
        net = RoMANetwork(ModelConfig.from_dict(ckpt.model_config))
        trainer = cls(net, TrainConfig.from_dict(ckpt.train_config))
        trainer.restore(ckpt)
        return trainer

    def rng_state(self) -> dict:
        return {"bit_generator": self.rng.bit_generator.state, "order": list(self.order), "cursor": self.cursor}

    def set_rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["bit_generator"]
        self.order = list(state["order"])
        self.cursor = int(state["cursor"])


class MetricsWriter:
    """Appends one CSV row per training step."""

    def __init__(self, path):
        self.path = Path(path)
        new = not self.path.exists()
        self._fh = self.path.open("a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(METRIC_FIELDS)

    def __call__(self, step: int, lr: float, parts: LossBreakdown, wall_ms: float) -> None:
        self._writer.writerow([step, repr(lr), repr(parts.token_mse), repr(parts.cluster_mse), repr(parts.total),
                               f"{wall_ms:.3f}"])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
