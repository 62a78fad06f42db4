from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from roma.errors import ConfigError, ContractError, NumericError
from roma.numerics import ParamRegistry

FULL_SCALE_LR = 1.5e-4


@dataclass
class OptimState:
    base_lr: float = FULL_SCALE_LR
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyper(self) -> dict:
        return {"base_lr": self.base_lr, "weight_decay": self.weight_decay, "betas": list(self.betas),
                "eps": self.eps, "step": self.step}


def adamw_step(params: ParamRegistry, state: OptimState, lr: float) -> None:
    """One AdamW update with decoupled weight decay, in lexicographic parameter order."""
    b1, b2 = state.betas
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adamw_step: parameter {name!r} has no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"adamw_step: non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - lr * state.weight_decay * p.data - lr * update


def cosine_lr(step: int, warmup: int, total: int, base: float = FULL_SCALE_LR,
              min_lr: Optional[float] = None) -> float:
    """Linear warmup from 0 to ``base``, then cosine decay to ``min_lr`` at ``total``."""
    if warmup > total:
        raise ConfigError(f"warmup ({warmup}) exceeds total steps ({total})")
    if not 0 <= step <= total:
        raise ContractError(f"step {step} outside [0, {total}]")
    min_lr = base / 100.0 if min_lr is None else min_lr
    if step < warmup:
        return base * step / warmup
    if total == warmup:
        return base
    progress = (step - warmup) / (total - warmup)
    return min_lr + 0.5 * (base - min_lr) * (1.0 + math.cos(math.pi * progress))
