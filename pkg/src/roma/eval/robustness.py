from __future__ import annotations

import math

from roma.data import SyntheticSpec, generate_arrays
from roma.eval.features import extract_features
from roma.eval.probe import ProbeDataset, linear_probe

# probe splits draw from streams disjoint from any pretraining seed
_TRAIN_STREAM = 10_000
_TEST_STREAM = 20_000


def rotation_splits(spec: SyntheticSpec, seed: int, n_train: int, n_test: int):
    """Upright training images and a test split rotated uniformly over the full circle."""
    train = generate_arrays(spec.with_(count=n_train, rotation_range=(0.0, 0.0)), _TRAIN_STREAM + seed)
    test = generate_arrays(spec.with_(count=n_test, rotation_range=(0.0, 2.0 * math.pi)), _TEST_STREAM + seed)
    return train, test


def rotation_probe_accuracy(network, spec: SyntheticSpec, seed: int, n_train: int = 300, n_test: int = 300,
                            epochs: int = 500, lr: float = 0.1) -> float:
    (xtr, ytr), (xte, yte) = rotation_splits(spec, seed, n_train, n_test)
    train = ProbeDataset(extract_features(network, xtr), ytr, "train")
    test = ProbeDataset(extract_features(network, xte), yte, "test")
    return linear_probe(train, test, epochs, lr)
