"""scikit-learn style wrappers around augmentation, pretraining and probing."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from roma.errors import ContractError, ShapeError
from roma.eval.features import extract_features
from roma.eval.probe import LinearProbe
from roma.model.config import preset
from roma.model.network import RoMANetwork
from roma.pretrain.trainer import Pretrainer, TrainConfig, sample_rng
from roma.vision.ares import apply_rotation_augment


def check_image_batch(X, image_side: int | None = None, channels: int = 3) -> np.ndarray:
    """Return ``X`` as a float64 ``(n, H, W, C)`` batch with values in ``[0, 1]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[3] != channels or X.shape[1] != X.shape[2]:
        raise ShapeError(f"expected square images shaped (n, H, H, {channels}), got {X.shape}")
    if image_side is not None and X.shape[1] != image_side:
        raise ShapeError(f"expected {image_side}px images, got {X.shape[1]}px")
    if len(X) == 0:
        raise ContractError("empty image batch")
    if not np.all(np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0:
        raise ContractError("image values must be finite and lie in [0, 1]")
    return X


class ARESAugmenter(TransformerMixin, BaseEstimator):
    """Stateless transformer: rotates each image's most textured region.

    Sample ``i`` of a call draws its angle from the stream ``(seed, i)``,
    so results do not depend on batch composition elsewhere.
    ``records_`` holds the rotation records of the last transform.
    """

    def __init__(self, patch_size: int = 8, ladder=(48, 32, 16), threshold: float = 1.0, seed: int = 0):
        self.patch_size = patch_size
        self.ladder = ladder
        self.threshold = threshold
        self.seed = seed

    def fit(self, X, y=None):
        check_image_batch(X)
        return self

    def transform(self, X):
        X = check_image_batch(X)
        out, records = [], []
        for i, img in enumerate(X):
            aug, rec = apply_rotation_augment(img, sample_rng(self.seed, i), self.patch_size, self.ladder,
                                              self.threshold)
            out.append(aug)
            records.append(rec)
        self.records_ = records
        return np.stack(out)


class RoMAPretrainer(TransformerMixin, BaseEstimator):
    """Autoregressive pretraining as ``fit``; frozen mean-pooled features as ``transform``."""

    def __init__(self, preset: str = "desk", lam: float = 0.1, ares: bool = True, steps: int = 2000,
                 batch_size: int = 8, lr: float = 1e-3, seed: int = 0):
        self.preset = preset
        self.lam = lam
        self.ares = ares
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _model_config(self):
        return preset(self.preset, lam=self.lam)

    def fit(self, X, y=None):
        cfg = self._model_config()
        X = check_image_batch(X, cfg.image_side, cfg.channels)
        train = TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                            ares=self.ares, ladder=(6 * cfg.patch_size, 4 * cfg.patch_size, 2 * cfg.patch_size))
        self.trainer_ = Pretrainer(RoMANetwork(cfg, seed=self.seed), train)
        self.history_ = self.trainer_.fit(X)
        self.network_ = self.trainer_.network
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        X = check_image_batch(X, self.network_.config.image_side)
        return extract_features(self.network_, X)


__all__ = ["ARESAugmenter", "LinearProbe", "RoMAPretrainer", "check_image_batch"]
