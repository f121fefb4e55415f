import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swarm_mimic.analysis import (
    bilinear_sample,
    distance_series,
    export_artifacts,
    grad_cam,
    jet,
    render_heatmap,
    upsample,
)
from swarm_mimic.errors import NoPairs
from swarm_mimic.imageio import read_pgm, read_ppm
from swarm_mimic.nn.network import NetworkConfig, init_network
from swarm_mimic.sim import EpisodeLog


def make_log(frames, dt=0.1):
    lg = EpisodeLog(dt=dt)
    lg.positions = [np.asarray(f, dtype=np.float64) for f in frames]
    return lg


def test_static_pair():
    s = distance_series(make_log([[[0, 0, 0], [3, 0, 0]]] * 5))
    for arr in (s.dmin, s.dmax, s.dmean):
        np.testing.assert_array_equal(arr, 3.0)
    np.testing.assert_allclose(s.t, np.arange(5) * 0.1)


def test_matches_brute_force():
    pos = np.random.default_rng(0).uniform(-5, 5, size=(5, 3))
    d = [np.sqrt(sum((pos[i][k] - pos[j][k]) ** 2 for k in range(3)))
         for i, j in itertools.combinations(range(5), 2)]
    s = distance_series(make_log([pos]))
    assert s.dmin[0] == pytest.approx(min(d), abs=1e-12)
    assert s.dmax[0] == pytest.approx(max(d), abs=1e-12)
    assert s.dmean[0] == pytest.approx(sum(d) / len(d), abs=1e-12)


def test_single_agent_raises():
    with pytest.raises(NoPairs):
        distance_series(make_log([[[0, 0, 0]]]))


@given(arrays(np.float64, (4, 6, 3), elements=st.floats(-10, 10)))
def test_min_mean_max_order(frames):
    s = distance_series(make_log(list(frames)))
    assert np.all(s.dmin <= s.dmean + 1e-12) and np.all(s.dmean <= s.dmax + 1e-12)


@pytest.fixture(scope="module")
def net():
    return init_network(NetworkConfig(), np.random.default_rng(0))


@pytest.fixture(scope="module")
def image():
    img = np.full((128, 768), 255, np.uint8)
    img[60:68, 186:196] = 40
    return img


def test_grad_cam_shape_and_range(net, image):
    cam = grad_cam(net, image)
    assert cam.shape == (8, 48)
    assert cam.min() >= 0.0 and cam.max() == pytest.approx(1.0)
    for c in range(3):
        m = grad_cam(net, image, component=c)
        assert m.shape == (8, 48) and m.min() >= 0.0 and m.max() <= 1.0


def test_grad_cam_zero_head(net, image):
    z = net.copy()
    z.params["head.w"][:] = 0.0
    np.testing.assert_array_equal(grad_cam(z, image), 0.0)


def test_grad_cam_invariant_to_objective_scale(net, image):
    scaled = net.copy()
    scaled.target_mean = scaled.target_mean * 3.0
    scaled.target_std = scaled.target_std * 3.0
    a, b = grad_cam(net, image), grad_cam(scaled, image)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.argmax(a) == np.argmax(b)


def test_bilinear_reproduces_cell_centers():
    c = np.random.default_rng(0).uniform(size=(8, 48))
    r, q = np.meshgrid(np.arange(8), np.arange(48), indexing="ij")
    np.testing.assert_array_equal(bilinear_sample(c, r, q), c)
    assert bilinear_sample(c, 0.5, 0.0) == pytest.approx((c[0, 0] + c[1, 0]) / 2)


def test_upsample_constant_and_shape():
    u = upsample(np.full((8, 48), 0.3))
    assert u.shape == (128, 768)
    np.testing.assert_allclose(u, 0.3, atol=1e-15)


@given(arrays(np.float64, (8, 48), elements=st.floats(0, 1)))
def test_upsample_preserves_extremes(c):
    u = upsample(c)
    assert u.min() >= c.min() - 1e-9 and u.max() <= c.max() + 1e-9
    # the corner pixel centers fall inside the border clamp
    assert u[0, 0] == pytest.approx(c[0, 0], abs=1e-9)


def test_jet_anchor_colors():
    np.testing.assert_allclose(jet(0.0), [0.0, 0.0, 0.5])
    np.testing.assert_allclose(jet(0.5), [0.5, 1.0, 0.5])
    np.testing.assert_allclose(jet(1.0), [0.5, 0.0, 0.0])
    np.testing.assert_allclose(jet(0.125), [0.0, 0.0, 1.0])


def test_zero_map_heatmap_is_blue_blend(image):
    out = render_heatmap(image, np.zeros((8, 48)), alpha=0.5)
    assert out.shape == (128, 768, 3) and out.dtype == np.uint8
    expected = np.rint(0.5 * np.array([0.0, 0.0, 127.5]) + 0.5 * image[..., None].astype(float))
    np.testing.assert_array_equal(out, expected.astype(np.uint8))


def test_export_series_and_images(tmp_path, image):
    lg = make_log([[[0, 0, 0], [2, 0, 0], [0, 3, 0]]] * 200)
    export_artifacts(lg, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 201 and lines[0] == "t,dmin,dmax,dmean"
    export_artifacts(image, tmp_path / "g.pgm")
    data = (tmp_path / "g.pgm").read_bytes()
    np.testing.assert_array_equal(read_pgm(tmp_path / "g.pgm"), image)
    export_artifacts(read_pgm(tmp_path / "g.pgm"), tmp_path / "g2.pgm")
    assert (tmp_path / "g2.pgm").read_bytes() == data
    heat = render_heatmap(image, np.ones((8, 48)))
    export_artifacts(heat, tmp_path / "h.ppm")
    assert (tmp_path / "h.ppm").read_bytes().startswith(b"P6\n768 128\n255\n")
    np.testing.assert_array_equal(read_ppm(tmp_path / "h.ppm"), heat)


def test_export_unwritable(tmp_path, image):
    with pytest.raises(OSError):
        export_artifacts(image, tmp_path / "missing" / "x.pgm")
