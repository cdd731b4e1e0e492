import numpy as np
import pytest

from masktransfer.data import DataError, load_mask
from masktransfer.synthetic import (
    generate_synthetic,
    glyph_mask,
    read_params,
    render_sample,
    write_dataset,
)


def test_seeded_determinism():
    d1 = generate_synthetic(10, 64, 0)
    d2 = generate_synthetic(10, 64, 0)
    assert np.array_equal(d1.images_a, d2.images_a)
    assert np.array_equal(d1.images_b, d2.images_b)
    assert np.array_equal(d1.masks_b, d2.masks_b)


def test_different_seeds_differ():
    d1 = generate_synthetic(10, 64, 0)
    d2 = generate_synthetic(10, 64, 1)
    assert not np.array_equal(d1.images_a, d2.images_a)


def test_domain_a_masks_empty():
    ds = generate_synthetic(20, 32, 3)
    for s in ds.samples_a:
        assert s.gt_mask.sum() == 0
        assert s.domain == "A"


def test_mean_coverage_in_range():
    ds = generate_synthetic(1000, 64, 0)
    coverage = ds.masks_b.mean(axis=(1, 2))
    assert 0.01 <= coverage.mean() <= 0.40
    assert coverage.min() >= 0.01
    assert coverage.max() <= 0.40


def test_unsupported_resolution():
    with pytest.raises(DataError, match="resolution"):
        generate_synthetic(5, 48, 0)


def test_glyph_is_pure_overlay():
    ds = generate_synthetic(25, 64, 11)
    for s in ds.samples_b:
        plain = render_sample(s.params, 64, with_glyph=False)
        outside = ~s.gt_mask.astype(bool)
        assert np.array_equal(s.image[:, outside], plain[:, outside])
        inside = s.gt_mask.astype(bool)
        assert not np.array_equal(s.image[:, inside], plain[:, inside])


def test_glyph_geometry_follows_shape():
    ds = generate_synthetic(5, 64, 2)
    for s in ds.samples_b:
        assert np.array_equal(glyph_mask(s.params, 64).astype(np.uint8), s.gt_mask)


def test_values_in_range():
    ds = generate_synthetic(10, 32, 9)
    for imgs in (ds.images_a, ds.images_b):
        assert imgs.min() >= -1.0 and imgs.max() <= 1.0
        assert imgs.dtype == np.float32


def test_write_dataset_layout(tmp_path):
    train = generate_synthetic(4, 32, 0)
    test = generate_synthetic(2, 32, 1)
    write_dataset(tmp_path, train, test)
    for sub in ("trainA", "trainB", "testA", "testB", "masksB"):
        assert (tmp_path / sub).is_dir()
    assert len(list((tmp_path / "trainA").glob("*.png"))) == 4
    assert len(list((tmp_path / "testB").glob("*.png"))) == 2
    assert len(list((tmp_path / "masksB").glob("*.png"))) == 6
    # masks are binary 8-bit
    m = load_mask(next(iter(sorted((tmp_path / "masksB").glob("train_*.png")))))
    assert set(np.unique(m)).issubset({0.0, 1.0})
    params = read_params(tmp_path)
    assert params["resolution"] == 32
    assert len(params["train"]["A"]) == 4


def test_png_round_trip_exact(tmp_path):
    from masktransfer.data import load_dataset_root

    train = generate_synthetic(3, 32, 5)
    test = generate_synthetic(2, 32, 6)
    write_dataset(tmp_path, train, test)
    loaded = load_dataset_root(tmp_path, 32, "train")
    assert np.array_equal(loaded.images_a, train.images_a)
    assert np.array_equal(loaded.images_b, train.images_b)
