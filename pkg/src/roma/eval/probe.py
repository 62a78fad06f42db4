"""Multinomial logistic regression on frozen features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from roma.errors import ContractError, ShapeError


@dataclass
class ProbeDataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ShapeError(f"features {self.features.shape} do not match {len(self.labels)} labels")
        if self.split not in ("train", "test"):
            raise ContractError(f"split must be 'train' or 'test', got {self.split!r}")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Softmax regression fit by full-batch gradient descent on standardised inputs.

    Plain gradient descent from zero weights is deterministic, so repeated
    fits on the same data give identical coefficients.
    """

    def __init__(self, epochs: int = 500, lr: float = 0.1, l2: float = 0.0):
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2

    def fit(self, X, y):
        X, y = validate_data(self, X, y)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ContractError("linear probe needs at least two classes in the training set")
        self.scaler_ = StandardScaler().fit(X)
        Z = self.scaler_.transform(X)
        n, d = Z.shape
        k = len(self.classes_)
        onehot = np.eye(k)[codes]
        W = np.zeros((d, k))
        b = np.zeros(k)
        for _ in range(self.epochs):
            err = (_softmax(Z @ W + b) - onehot) / n
            W -= self.lr * (Z.T @ err + self.l2 * W)
            b -= self.lr * err.sum(axis=0)
        self.coef_, self.intercept_ = W, b
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        return self.scaler_.transform(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def linear_probe(train: ProbeDataset, test: ProbeDataset, epochs: int = 500, lr: float = 0.1) -> float:
    """Overall accuracy on ``test`` of a probe fit on ``train``."""
    probe = LinearProbe(epochs=epochs, lr=lr).fit(train.features, train.labels)
    return float(probe.score(test.features, test.labels))
