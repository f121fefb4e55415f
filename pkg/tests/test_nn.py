import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from swarm_mimic.errors import CheckpointError, Divergence
from swarm_mimic.flock import yaw_matrix
from swarm_mimic.nn.augment import photometric, rotate_target, yaw_rotate_image, yaw_rotate_pair
from swarm_mimic.nn.checkpoint import load_checkpoint, save_checkpoint
from swarm_mimic.nn.network import (
    NetworkConfig,
    feature_maps,
    forward,
    init_network,
    loss_and_gradients,
    param_shapes,
    standardize_images,
    truncated_normal,
)
from swarm_mimic.nn.optim import OptimizerState, adam_step
from swarm_mimic.nn.policy import VisionPolicy, predict_body, predict_command
from swarm_mimic.nn.train import TrainConfig, plateau_update, train, zero_predictor_mse

from conftest import TINY


def test_default_architecture():
    cfg = NetworkConfig()
    assert cfg.feature_shape == (8, 48, 64)
    shapes = param_shapes(cfg)
    assert shapes["head.w"] == (8 * 48 * 64, 3)
    assert shapes["stage0.down.w"] == (3, 3, 1, 8)
    assert shapes["stage3.res.w"] == (3, 3, 64, 64)


def test_bad_input_size_rejected():
    with pytest.raises(ValueError):
        NetworkConfig(height=100, width=768)


def test_truncated_normal_matches_scipy():
    x = truncated_normal((200_000,), 1.0, np.random.default_rng(0))
    assert np.abs(x).max() <= 2.0
    ref = stats.truncnorm(-2.0, 2.0)
    assert x.std() == pytest.approx(ref.std(), rel=0.01)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_he_init_scale_and_zero_bias():
    net = init_network(NetworkConfig(), np.random.default_rng(1))
    w = net.params["stage3.res.w"]
    sigma = math.sqrt(2.0 / (3 * 3 * 64))
    assert w.std() == pytest.approx(stats.truncnorm(-2, 2).std() * sigma, rel=0.02)
    assert all(not v.any() for k, v in net.params.items() if k.endswith(".b"))


def test_adam_hand_trace():
    p = {"w": np.array([1.0])}
    st_ = OptimizerState.zeros_like(p)
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    adam_step(p, {"w": np.array([0.5])}, st_, lr, b1, b2, eps)
    # m = 0.05, v = 0.00025; bias-corrected 0.5 and 0.25
    assert p["w"][0] == pytest.approx(1.0 - lr * 0.5 / (0.5 + eps), rel=1e-14)
    adam_step(p, {"w": np.array([-1.0])}, st_, lr, b1, b2, eps)
    m = 0.9 * 0.05 + 0.1 * -1.0
    v = 0.999 * 0.00025 + 0.001 * 1.0
    mhat, vhat = m / (1 - 0.81), v / (1 - 0.999**2)
    expected = 1.0 - lr * 0.5 / (0.5 + eps) - lr * mhat / (math.sqrt(vhat) + eps)
    assert p["w"][0] == pytest.approx(expected, rel=1e-14)
    assert st_.step == 2


def test_image_standardization_guard():
    flat = standardize_images(np.full((2, 4, 4), 255, np.uint8))
    np.testing.assert_array_equal(flat, 0.0)
    x = standardize_images(np.arange(32).reshape(2, 4, 4))
    assert x.mean() == pytest.approx(0.0, abs=1e-12) and x.std() == pytest.approx(1.0)


def test_weight_penalty_excludes_biases(tiny_net):
    x = np.random.default_rng(0).normal(size=(2, 8, 16))
    t = np.zeros((2, 3))
    l0, _ = loss_and_gradients(tiny_net, x, t, 0.0, False)
    l1, g1 = loss_and_gradients(tiny_net, x, t, 1.0, False)
    penalty = sum(np.sum(v * v) for k, v in tiny_net.params.items() if k.endswith(".w"))
    assert l1 - l0 == pytest.approx(penalty)
    _, g0 = loss_and_gradients(tiny_net, x, t, 0.0, False)
    np.testing.assert_array_equal(g1["head.b"], g0["head.b"])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raised(tiny_net):
    tiny_net.params["head.b"][:] = np.inf
    with pytest.raises(Divergence):
        loss_and_gradients(tiny_net, np.zeros((1, 8, 16)), np.zeros((1, 3)), 0.0, False)


def test_eval_forward_is_deterministic_and_destandardized(tiny_net):
    tiny_net.target_mean = np.array([1.0, -1.0, 0.5])
    tiny_net.target_std = np.array([2.0, 3.0, 0.5])
    img = np.random.default_rng(0).integers(0, 256, size=(1, 8, 16))
    a = forward(tiny_net, img)
    np.testing.assert_array_equal(a, forward(tiny_net, img))
    out, _, _ = feature_maps(tiny_net, img)
    np.testing.assert_allclose(a, out * tiny_net.target_std + tiny_net.target_mean)


def test_predict_command_rotates_to_world(tiny_net):
    img = np.random.default_rng(1).integers(0, 256, size=(8, 16))
    body = predict_body(tiny_net, img)[0]
    att = yaw_matrix(0.7)
    np.testing.assert_allclose(predict_command(tiny_net, img, att), att.T @ body)


def test_vision_policy_needs_images(tiny_net):
    with pytest.raises(ValueError):
        VisionPolicy(tiny_net).act([], (), None)


def test_checkpoint_round_trip(tmp_path, tiny_net):
    opt = OptimizerState.zeros_like(tiny_net.params)
    adam_step(tiny_net.params, {k: np.ones_like(v) for k, v in tiny_net.params.items()}, opt)
    path = tmp_path / "m.vswm"
    save_checkpoint(tiny_net, path, opt)
    assert path.read_bytes()[:4] == b"VSWM"
    net2, opt2 = load_checkpoint(path, with_optimizer=True)
    assert net2.config == tiny_net.config
    for k in tiny_net.params:
        np.testing.assert_array_equal(net2.params[k], tiny_net.params[k])
        np.testing.assert_array_equal(opt2.m[k], opt.m[k])
    assert opt2.step == 1
    save_checkpoint(net2, tmp_path / "again.vswm", opt2)
    assert (tmp_path / "again.vswm").read_bytes() == path.read_bytes()


def test_checkpoint_corruption(tmp_path, tiny_net):
    path = tmp_path / "m.vswm"
    save_checkpoint(tiny_net, path)
    data = path.read_bytes()
    cases = {
        "magic": b"XXXX" + data[4:],
        "version": data[:4] + (7).to_bytes(4, "little") + data[8:],
        "truncated": data[:-5],
        "trailing": data + b"\0",
    }
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)


images = arrays(np.uint8, (128, 768))


@given(images, st.integers(0, 7), st.integers(0, 7))
def test_yaw_rotation_is_a_group_action(img, a, b):
    np.testing.assert_array_equal(yaw_rotate_image(yaw_rotate_image(img, a), b), yaw_rotate_image(img, a + b))
    np.testing.assert_array_equal(yaw_rotate_image(img, 4), img)


@given(arrays(np.float64, 3, elements=st.floats(-5, 5)), st.integers(0, 7))
def test_target_rotation_matches_yaw_matrix(t, k):
    # content turning by +k quarter turns is seen from a frame yawed by -k
    np.testing.assert_allclose(rotate_target(t, k), yaw_matrix(-k * math.pi / 2) @ t, atol=1e-12)


def test_quarter_turn_moves_front_to_left():
    img = np.zeros((128, 768), np.uint8)
    img[:, 128:256] = 7
    out, tgt = yaw_rotate_pair(img, [1.0, 0.0, 0.0], 1)
    assert (out[:, :128] == 7).all() and (out[:, 128:512] == 0).all()
    np.testing.assert_array_equal(tgt, [0.0, 1.0, 0.0])


@given(st.floats(0.75, 1.25), st.floats(-63.75, 63.75))
def test_photometric_range(alpha, beta):
    img = np.arange(256, dtype=np.uint8).reshape(16, 16)
    out = photometric(img, alpha, beta)
    assert out.min() >= 0 and out.max() <= 255
    np.testing.assert_allclose(photometric(img, 1.0, 0.0), img)


def test_plateau_schedule():
    cfg = TrainConfig(patience=3, lr_decay=0.5)
    best, stagnant, lr = math.inf, 0, 1.0
    trace = []
    for val in [5.0, 4.0, 4.5, 4.5, 4.5, 4.5]:
        improved, stop, stagnant, lr = plateau_update(val, best, stagnant, lr, cfg)
        if improved:
            best = val
        trace.append((improved, stop, stagnant, lr))
        if stop:
            break
    assert trace == [(True, False, 0, 1.0), (True, False, 0, 1.0), (False, False, 1, 1.0),
                     (False, False, 2, 1.0), (False, False, 3, 0.5), (False, True, 4, 0.5)]


def test_training_reduces_loss_and_returns_best():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 256, size=(48, 8, 16)).astype(np.uint8)
    # target is a smooth function of image content
    feat = x.reshape(48, -1).astype(float)
    t = np.stack([feat[:, :64].mean(1), feat[:, 64:].mean(1), feat[:, ::2].mean(1)], axis=1) / 50.0
    cfg = TrainConfig(max_epochs=15, batch=16, lr0=3e-3, augment_yaw=False, augment_photometric=False)
    net, hist = train(x[:40], t[:40], x[40:], t[40:], cfg, TINY)
    assert hist[-1].train_loss < hist[0].train_loss
    from swarm_mimic.nn.train import evaluate

    assert evaluate(net, x[40:], t[40:]) == pytest.approx(min(h.val_loss for h in hist))
    assert zero_predictor_mse(net, t[:40]) == pytest.approx(1.0)


def test_training_deterministic():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 256, size=(10, 8, 16)).astype(np.uint8)
    t = rng.normal(size=(10, 3))
    cfg = TrainConfig(max_epochs=2, batch=4, augment_yaw=False)
    a, _ = train(x[:8], t[:8], x[8:], t[8:], cfg, TINY)
    b, _ = train(x[:8], t[:8], x[8:], t[8:], cfg, TINY)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_mse_hand_value(tiny_net):
    from swarm_mimic.nn.layers import mse_loss

    assert mse_loss(np.ones((1, 3)), np.zeros((1, 3)))[0] == 1.0
    assert mse_loss(np.ones((2, 3)), np.ones((2, 3)))[0] == 0.0


def test_adam_first_step_and_zero_gradient():
    p = {"w": np.array([0.0]), "u": np.array([3.0])}
    s = OptimizerState.zeros_like(p)
    adam_step(p, {"w": np.array([1.0]), "u": np.array([0.0])}, s, lr=1e-3)
    # bias-corrected m and v are both 1: delta = -lr / (1 + eps)
    assert p["w"][0] == pytest.approx(-1e-3 / (1.0 + 1e-8), rel=1e-15)
    assert p["w"][0] == pytest.approx(-9.99999995e-4, rel=1e-8)
    assert p["u"][0] == 3.0


def test_adam_gradient_scale_invariance():
    rng = np.random.default_rng(0)
    g = {"w": rng.normal(size=50)}
    a = {"w": np.zeros(50)}
    b = {"w": np.zeros(50)}
    adam_step(a, g, OptimizerState.zeros_like(a))
    adam_step(b, {"w": 10 * g["w"]}, OptimizerState.zeros_like(b))
    np.testing.assert_allclose(b["w"], a["w"], rtol=1e-6)


@given(arrays(np.float64, (3, 5, 7), elements=st.floats(0, 255)))
def test_standardized_batch_statistics(x):
    if x.std() < 1e-3:
        return
    s = standardize_images(x)
    assert abs(s.mean()) < 1e-9 and abs(s.std() - 1.0) < 1e-6


def test_standardize_two_values():
    np.testing.assert_allclose(standardize_images(np.array([[0.0, 2.0]])), [[-1.0, 1.0]])


def test_dropout_expectation_matches_eval(tiny_net):
    from swarm_mimic.nn.network import forward_std

    x = np.random.default_rng(2).normal(size=(1, 8, 16))
    ev = forward_std(tiny_net, x, False)[0]
    rng = np.random.default_rng(3)
    draws = np.array([forward_std(tiny_net, x, True, rng)[0] for _ in range(4000)])
    se = draws.std(axis=0) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - ev) < 5 * se + 1e-12)


def test_train_mode_dropout_reproducible(tiny_net):
    x = np.random.default_rng(2).integers(0, 256, size=(2, 8, 16))
    a = forward(tiny_net, x, "train", np.random.default_rng(5))
    b = forward(tiny_net, x, "train", np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        forward(tiny_net, x, "test")
    with pytest.raises(ValueError):
        forward(tiny_net, np.zeros((1, 9, 16)))


def test_photometric_white_stays_bright():
    white = np.full((4, 4), 255, np.uint8)
    for alpha in (0.75, 1.0, 1.25):
        for beta in (-63.75, 0.0, 63.75):
            assert photometric(white, alpha, beta).min() >= 128


def test_policy_world_output_rotates_with_yaw(tiny_net):
    img = np.random.default_rng(1).integers(0, 256, size=(8, 16))
    a = predict_command(tiny_net, img, np.eye(3))
    b = predict_command(tiny_net, img, yaw_matrix(math.pi / 2))
    np.testing.assert_allclose(b, yaw_matrix(-math.pi / 2) @ a, atol=1e-9)
    np.testing.assert_array_equal(a, predict_body(tiny_net, img)[0])


def test_default_checkpoint_size_and_bit_exact_predictions(tmp_path):
    net = init_network(NetworkConfig(), np.random.default_rng(0))
    path = tmp_path / "big.vswm"
    save_checkpoint(net, path)
    assert path.stat().st_size < 10 * 2**20
    img = np.random.default_rng(1).integers(0, 256, size=(1, 128, 768))
    np.testing.assert_array_equal(forward(load_checkpoint(path), img), forward(net, img))
    assert np.isfinite(forward(net, img)).all()


def test_history_halves_lr_at_tenth_stagnant_epoch():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 256, size=(6, 8, 16)).astype(np.uint8)
    t = rng.normal(size=(6, 3))
    # lr0 so small that validation loss cannot move: every epoch after the first stagnates
    cfg = TrainConfig(max_epochs=30, batch=4, lr0=1e-300, augment_yaw=False)
    _, hist = train(x[:4], t[:4], x[4:], t[4:], cfg, TINY)
    lrs = [h.lr for h in hist]
    assert len(hist) == 12
    assert lrs[:11] == [1e-300] * 11 and lrs[11] == 0.5e-300
