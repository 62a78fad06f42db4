import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from roma.data import SyntheticSpec, generate_arrays
from roma.errors import ContractError, ShapeError
from roma.estimators import ARESAugmenter, LinearProbe, RoMAPretrainer, check_image_batch


def test_params_roundtrip_through_clone():
    est = RoMAPretrainer(preset="micro", lam=0.0, ares=False, steps=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert ARESAugmenter(patch_size=4).set_params(seed=5).seed == 5


def test_batch_validation():
    with pytest.raises(ShapeError):
        check_image_batch(np.zeros((2, 8, 6, 3)))
    with pytest.raises(ShapeError):
        check_image_batch(np.zeros((2, 8, 8, 3)), image_side=16)
    with pytest.raises(ContractError):
        check_image_batch(np.full((1, 8, 8, 3), 1.5))
    with pytest.raises(ContractError):
        check_image_batch(np.zeros((0, 8, 8, 3)))


def test_augmenter_is_deterministic_and_records():
    X = np.random.default_rng(0).random((3, 32, 32, 3))
    aug = ARESAugmenter(patch_size=8, ladder=(16, 8))
    a = aug.fit_transform(X)
    assert np.array_equal(a, aug.transform(X))
    assert len(aug.records_) == 3 and a.shape == X.shape


def test_pretrain_then_probe_pipeline():
    X, y = generate_arrays(SyntheticSpec(count=12), 0)
    pipe = make_pipeline(RoMAPretrainer(preset="micro", steps=2, batch_size=4), LinearProbe(epochs=10))
    pipe.fit(X, y)
    assert pipe.predict(X).shape == (12,)
    feats = pipe[0].transform(X)
    assert feats.shape == (12, 32)
    assert len(pipe[0].history_) == 2
