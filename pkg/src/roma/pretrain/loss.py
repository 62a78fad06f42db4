"""Two-scale reconstruction objective.

``total = token_mse + lam * cluster_mse`` where token_mse averages the
per-element squared error of the pixel predictions for tokens 2..K and
cluster_mse does the same for the cluster blocks 2..N.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from roma.errors import ContractError, ShapeError
from roma.numerics import Tensor, add, mse, scale

Scalar = Union[float, Tensor]


@dataclass(frozen=True)
class LossBreakdown:
    token_mse: float
    cluster_mse: float
    lam: float
    total: float

    def as_row(self) -> dict:
        return {"token_mse": self.token_mse, "cluster_mse": self.cluster_mse, "lambda": self.lam, "total": self.total}


def _check(preds: Tensor, targets, what: str) -> Tensor:
    t = targets if isinstance(targets, Tensor) else Tensor(targets)
    if preds.shape != t.shape:
        raise ShapeError(f"{what}: predictions {preds.shape} vs targets {t.shape}")
    return t


def token_loss(preds: Tensor, targets) -> Tensor:
    """Mean per-element squared error over predicted tokens (positions 2..K)."""
    return mse(preds, _check(preds, targets, "token_loss"))


def cluster_loss(preds: Tensor, targets) -> Tensor:
    """Mean per-element squared error over predicted clusters (2..N)."""
    return mse(preds, _check(preds, targets, "cluster_loss"))


def _value(x: Scalar) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(token: Scalar, cluster: Scalar, lam: float) -> LossBreakdown:
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    t, c = _value(token), _value(cluster)
    return LossBreakdown(t, c, float(lam), t + lam * c)


def combine(token: Tensor, cluster: Optional[Tensor], lam: float) -> Tensor:
    """Taped ``token + lam * cluster``."""
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    if cluster is None:
        return token
    return add(token, scale(cluster, lam))


def token_targets(patches: np.ndarray) -> np.ndarray:
    """Ground truth for the token head: patches 2..K of each image."""
    return patches[:, 1:]


def cluster_targets(blocks: np.ndarray) -> np.ndarray:
    return blocks[:, 1:]
