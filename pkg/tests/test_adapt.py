import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swarm_mimic.adapt import (
    MANIFEST_COLUMNS,
    BackgroundPool,
    build_adapted_dataset,
    composite,
    read_manifest,
    synthetic_backgrounds,
    write_manifest,
)
from swarm_mimic.datasets import SampleSet, load_samples, save_samples
from swarm_mimic.errors import DimensionMismatch, EmptyPool
from swarm_mimic.imageio import write_pgm


def brute_composite(fg, bg, thr=250):
    out = np.empty_like(fg)
    for r in range(fg.shape[0]):
        for c in range(fg.shape[1]):
            out[r, c] = bg[r, c] if fg[r, c] >= thr else fg[r, c]
    return out


@given(arrays(np.uint8, (12, 20)), arrays(np.uint8, (12, 20)))
def test_composite_matches_per_pixel_rule(fg, bg):
    np.testing.assert_array_equal(composite(fg, bg), brute_composite(fg, bg))


def test_composite_edges():
    fg = np.array([[249, 250, 255, 40]], np.uint8)
    bg = np.array([[1, 2, 3, 4]], np.uint8)
    np.testing.assert_array_equal(composite(fg, bg), [[249, 2, 3, 40]])
    with pytest.raises(DimensionMismatch):
        composite(fg, np.zeros((2, 4), np.uint8))


def test_pool_validation(tmp_path):
    with pytest.raises(EmptyPool):
        BackgroundPool([])
    with pytest.raises(DimensionMismatch):
        BackgroundPool([np.zeros((10, 10), np.uint8)])
    with pytest.raises(EmptyPool):
        BackgroundPool.from_directory(tmp_path)


def test_pool_from_directory(tmp_path):
    write_pgm(tmp_path / "b.pgm", np.full((60, 80), 90, np.uint8))
    np.full((30, 40), 7, np.uint8).tofile(tmp_path / "a.raw")
    (tmp_path / "notes.txt").write_text("skip me")
    pool = BackgroundPool.from_directory(tmp_path, raw_shape=(30, 40))
    assert pool.count == 2
    assert pool.images[0].shape == (128, 768) and (pool.images[0] == 7).all()
    assert (pool.images[1] == 90).all()


class S:
    def __init__(self, image, action, episode, tick, agent):
        self.image, self.action, self.episode, self.tick, self.agent = image, action, episode, tick, agent


def test_adapted_dataset_keeps_labels_and_silhouettes():
    rng = np.random.default_rng(0)
    pool = synthetic_backgrounds(3, rng)
    img = np.full((128, 768), 255, np.uint8)
    img[10:20, 30:40] = 40
    samples = [S(img, np.array([0.1 * k, 0.0, -0.2]), 0, k, 1) for k in range(10)]
    out = build_adapted_dataset(samples, pool, np.random.default_rng(1))
    assert len(out) == 10
    for s, a in zip(samples, out):
        np.testing.assert_array_equal(a.action, s.action)
        assert 0 <= a.background_id < 3
        assert (a.image[10:20, 30:40] == 40).all()
        np.testing.assert_array_equal(a.image[:5], pool.images[a.background_id][:5])


def test_manifest_round_trip(tmp_path):
    rows = [(0, "images/000000.pgm", np.array([0.1, -0.2, 1 / 3]), 2, 5, 1, -1)]
    write_manifest(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == ",".join(MANIFEST_COLUMNS)
    back = read_manifest(tmp_path / "m.csv")
    np.testing.assert_array_equal(back[0]["action"], rows[0][2])
    assert (back[0]["episode"], back[0]["tick"], back[0]["agent"], back[0]["background_id"]) == (2, 5, 1, -1)


def test_sample_set_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = SampleSet(rng.integers(0, 256, size=(4, 128, 768)).astype(np.uint8), rng.normal(size=(4, 3)),
                     np.arange(4), np.arange(4) * 2, np.ones(4, int), -np.ones(4, int))
    save_samples(tmp_path, data)
    back = load_samples(tmp_path)
    np.testing.assert_array_equal(back.images, data.images)
    np.testing.assert_array_equal(back.actions, data.actions)
    np.testing.assert_array_equal(back.tick, data.tick)
