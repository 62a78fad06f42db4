import math

import numpy as np
import pytest

from roma.data import (
    SyntheticSpec, generate_arrays, generate_sample, load_image_dir, shape_mask, write_dataset,
)
from roma.errors import ConfigError, FormatError
from roma.vision import write_png


def test_same_seed_same_images_different_seed_differs():
    spec = SyntheticSpec(count=6)
    a, la = generate_arrays(spec, 3)
    b, lb = generate_arrays(spec, 3)
    c, _ = generate_arrays(spec, 4)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert not np.array_equal(a, c)


def test_sample_depends_only_on_its_index():
    spec = SyntheticSpec(count=10)
    alone = generate_sample(spec, 1, 7)
    assert np.array_equal(alone.image, generate_arrays(spec, 1)[0][7])


def test_classes_are_balanced():
    _, labels = generate_arrays(SyntheticSpec(count=120, image_side=32, scale_range=(8.0, 14.0), objects=(1, 1)), 0)
    assert np.bincount(labels).tolist() == [40, 40, 40]


def test_images_are_quantised_and_in_range():
    s = generate_sample(SyntheticSpec(), 0, 0)
    assert s.image.min() >= 0.0 and s.image.max() <= 1.0
    np.testing.assert_array_equal(np.rint(s.image * 255.0) / 255.0, s.image)


@pytest.mark.parametrize("objects", [(1, 1), (3, 5)])
def test_foreground_area_stays_in_bounds(objects):
    spec = SyntheticSpec(count=60, objects=objects, scale_range=(20.0, 32.0),
                         rotation_range=(0.0, 2 * math.pi))
    lo, hi = spec.area_bounds()
    for i in range(spec.count):
        s = generate_sample(spec, 2, i)
        assert lo <= s.mask.sum() <= hi
        assert objects[0] <= len(s.meta["objects"]) <= objects[1]


def test_objects_never_overlap():
    spec = SyntheticSpec(count=20, objects=(4, 5), scale_range=(20.0, 28.0))
    for i in range(spec.count):
        objs = generate_sample(spec, 0, i).meta["objects"]
        for a in range(len(objs)):
            for b in range(a + 1, len(objs)):
                gap = math.dist(objs[a]["center"], objs[b]["center"])
                assert gap >= (objs[a]["diameter"] + objs[b]["diameter"]) / 2.0


def test_masks_fit_their_circumscribed_circle():
    for shape in ("rectangle", "ellipse", "cross"):
        for angle in np.linspace(0, math.pi, 7):
            m = shape_mask(shape, 64, (32.0, 32.0), 30.0, 0.6, float(angle))
            ys, xs = np.nonzero(m)
            assert np.all((ys + 0.5 - 32) ** 2 + (xs + 0.5 - 32) ** 2 <= 15.0 ** 2 + 1e-9)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(scale_range=(40.0, 20.0))
    with pytest.raises(ConfigError):
        SyntheticSpec(backgrounds=("plaid",))
    with pytest.raises(ConfigError):
        SyntheticSpec(objects=(0, 2))
    with pytest.raises(ConfigError):
        SyntheticSpec(object_level=(0.9, 0.8))
    with pytest.raises(ConfigError):
        shape_mask("star", 8, (4, 4), 4, 1.0, 0.0)
    spec = SyntheticSpec(objects=(2, 3))
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec


def test_impossible_layout_is_a_config_error():
    with pytest.raises(ConfigError, match="cannot fit"):
        generate_sample(SyntheticSpec(image_side=32, scale_range=(20.0, 30.0), objects=(5, 5)), 0, 0)


def test_written_dataset_is_byte_identical_and_reloads(tmp_path):
    spec = SyntheticSpec(count=6, image_side=32, scale_range=(8.0, 14.0), objects=(1, 2))
    a = write_dataset(spec, 0, tmp_path / "a")
    b = write_dataset(spec, 0, tmp_path / "b")
    for rel in ("labels.csv", "images/00003.png", "masks/00005.png"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    imgs, labels = load_image_dir(a, 32)
    ref, ref_labels = generate_arrays(spec, 0)
    np.testing.assert_array_equal(imgs, ref)
    np.testing.assert_array_equal(labels, ref_labels)
    small, _ = load_image_dir(a, 16, limit=2)
    assert small.shape == (2, 16, 16, 3)


def test_flat_folder_without_labels(tmp_path):
    write_png(tmp_path / "x.png", np.zeros((8, 8, 3)))
    imgs, labels = load_image_dir(tmp_path, 8)
    assert imgs.shape == (1, 8, 8, 3) and labels is None


def test_missing_or_empty_directory(tmp_path):
    with pytest.raises(FormatError):
        load_image_dir(tmp_path / "nope", 8)
    with pytest.raises(FormatError):
        load_image_dir(tmp_path, 8)
