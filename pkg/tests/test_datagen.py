import logging
import math

import numpy as np
import pytest
from PIL import Image

from unified_latents import _accel, kernels
from unified_latents.datagen import (DatasetSpec, SyntheticDataset, export, from_uint8, generate, ingest_folder,
                                     single_image, to_uint8, train_eval_split)

FAMILIES = ("blobs", "checkerboards", "sprites")


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("channels", [1, 3])
def test_numba_and_numpy_backends_agree(family, channels):
    spec = DatasetSpec(family=family, resolution=16, channels=channels, size=64, seed=11)
    a = SyntheticDataset(spec, use_numba=True)
    b = SyntheticDataset(spec, use_numba=False)
    idx = np.arange(64)
    np.testing.assert_allclose(a.batch(idx), b.batch(idx), rtol=0, atol=1e-6)
    assert np.array_equal(a.labels(idx), b.labels(idx))


def test_uniform_streams_agree_and_in_range():
    idx = np.arange(1000)
    u = kernels.uniforms(5, idx, 6, use_numba=False)
    assert u.min() >= 0 and u.max() < 1
    if _accel.HAVE_NUMBA:
        assert np.array_equal(u, kernels.uniforms(5, idx, 6, use_numba=True))


@pytest.mark.parametrize("family", FAMILIES)
def test_samples_finite_in_range_and_deterministic(family):
    spec = DatasetSpec(family=family, resolution=16, size=200, seed=2)
    x = generate(spec).all()
    assert x.shape == (200, 1, 16, 16) and x.dtype == np.float32
    assert np.isfinite(x).all() and x.min() >= -1 and x.max() <= 1
    assert np.array_equal(x, generate(spec).all())
    assert not np.array_equal(x, generate(DatasetSpec(family=family, resolution=16, size=200, seed=3)).all())
    assert x.std(axis=0).mean() > 0.01


def test_sample_depends_only_on_seed_and_index():
    ds = generate(DatasetSpec(family="sprites", size=50))
    a = ds.batch([7, 3, 40])
    assert np.array_equal(a[1], ds.batch([3])[0])
    assert np.array_equal(ds[40], a[2])
    with pytest.raises(IndexError):
        ds.batch([50])


def test_empty_and_invalid_specs():
    assert len(generate(DatasetSpec(size=0))) == 0
    assert generate(DatasetSpec(size=0)).all().shape == (0, 1, 16, 16)
    with pytest.raises(ValueError):
        DatasetSpec(family="imagenet")
    with pytest.raises(ValueError):
        DatasetSpec(size=-1)


def test_blob_modes_uniform():
    # [DERIVED] each of 8 modes has probability 1/8; counts within 3 SE at n = 1e4
    n = 10_000
    ds = generate(DatasetSpec(family="blobs", resolution=16, size=n, modes=8))
    counts = np.bincount(ds.labels(np.arange(n)), minlength=8)
    se = math.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - n / 8) < 3 * se)


def test_blob_peak_sits_at_mode_centre():
    ds = generate(DatasetSpec(family="blobs", resolution=16, size=64))
    x = ds.all()[:, 0]
    lab = ds.labels(np.arange(64))
    centres = ds.mode_centers()
    w = (x + 1) / 2
    yy, xx = np.mgrid[:16, :16]
    cx = (w * xx).sum((1, 2)) / w.sum((1, 2))
    cy = (w * yy).sum((1, 2)) / w.sum((1, 2))
    d = np.hypot(cx - centres[lab, 0], cy - centres[lab, 1])
    assert d.max() < 1.0


def test_train_eval_split_disjoint_and_stable():
    spec = DatasetSpec(family="sprites", size=100, seed=4)
    tr, ev = train_eval_split(spec, 30)
    assert len(tr) == 100 and len(ev) == 30
    a, b = tr.all().reshape(100, -1), ev.all().reshape(30, -1)
    assert not any((a == row).all(axis=1).any() for row in b)
    tr2, ev2 = train_eval_split(spec, 30)
    assert np.array_equal(ev.all(), ev2.all())


def test_single_image_copies():
    ds = generate(DatasetSpec(size=10))
    one = single_image(ds, 4, copies=3)
    assert len(one) == 3 and np.array_equal(one.all()[2], ds[4])


def test_uint8_round_trip_within_quantisation():
    x = np.random.default_rng(0).uniform(-1, 1, (4, 1, 8, 8))
    assert np.abs(from_uint8(to_uint8(x)) - x).max() <= 1 / 127.5 / 2 + 1e-7


@pytest.mark.parametrize("channels", [1, 3])
def test_export_ingest_round_trip(tmp_path, channels):
    ds = generate(DatasetSpec(family="checkerboards", resolution=16, channels=channels, size=5))
    paths = export(ds, tmp_path)
    assert len(paths) == 5
    back = ingest_folder(tmp_path, 16, channels)
    assert len(back) == 5 and not back.skipped
    assert np.abs(back.all() - ds.all()).max() <= 1 / 127.5 / 2 + 1e-6


def test_ingest_resizes_and_reports_skips(tmp_path, caplog):
    r = np.random.default_rng(0)
    Image.fromarray(r.integers(0, 256, (64, 64), dtype=np.uint8)).save(tmp_path / "a.png")
    (tmp_path / "b.png").write_bytes(b"not an image")
    ds = ingest_folder(tmp_path, 32)
    assert ds.all().shape == (1, 1, 32, 32)
    assert ds.all().min() >= -1 and ds.all().max() <= 1
    assert [s["file"] for s in ds.skipped] == ["b.png"]


def test_ingest_crops_to_centre(tmp_path):
    img = np.zeros((20, 40), np.uint8)
    img[:, 10:30] = 255
    Image.fromarray(img).save(tmp_path / "wide.png")
    ds = ingest_folder(tmp_path, 20)
    assert np.all(ds.all() == 1.0)


def test_ingest_empty_and_missing(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        ds = ingest_folder(tmp_path, 16)
    assert len(ds) == 0 and "no readable images" in caplog.text
    with pytest.raises(FileNotFoundError):
        ingest_folder(tmp_path / "nope", 16)


def test_folder_family_split(tmp_path):
    src = generate(DatasetSpec(size=6))
    export(src, tmp_path)
    tr, ev = train_eval_split(DatasetSpec(family="folder", path=str(tmp_path), resolution=16), 2)
    assert len(tr) == 4 and len(ev) == 2
