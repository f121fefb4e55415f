"""Convolutional velocity-regression policy.

Architecture: four stages, each a 3x3 stride-2 convolution + ReLU followed
by one residual block ``relu(h + conv3x3(h))``; the last feature map is
flattened, passed through dropout and an affine layer with three outputs.
A 128x768 input leaves an 8x48 map after the fourth stage.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import Divergence
from . import layers as L

IMAGE_EPS = 1e-6
TARGET_EPS = 1e-6


@dataclass(frozen=True)
class NetworkConfig:
    height: int = 128
    width: int = 768
    widths: tuple = (8, 16, 32, 64)
    dropout: float = 0.5
    outputs: int = 3

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        f = self.downsampling
        if self.height % f or self.width % f:
            raise ValueError(f"input {self.height}x{self.width} not divisible by {f}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def downsampling(self) -> int:
        return 2 ** len(self.widths)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        f = self.downsampling
        return self.height // f, self.width // f, self.widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def param_shapes(config: NetworkConfig) -> dict[str, tuple]:
    shapes = {}
    cin = 1
    for k, w in enumerate(config.widths):
        shapes[f"stage{k}.down.w"] = (3, 3, cin, w)
        shapes[f"stage{k}.down.b"] = (w,)
        shapes[f"stage{k}.res.w"] = (3, 3, w, w)
        shapes[f"stage{k}.res.b"] = (w,)
        cin = w
    shapes["head.w"] = (int(np.prod(config.feature_shape)), config.outputs)
    shapes["head.b"] = (config.outputs,)
    return shapes


def is_weight(name: str) -> bool:
    return name.endswith(".w")


@dataclass
class Network:
    config: NetworkConfig
    params: dict
    target_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_std: np.ndarray = field(default_factory=lambda: np.ones(3))

    def copy(self) -> "Network":
        return Network(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.target_mean.copy(),
            self.target_std.copy(),
        )

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def set_target_stats(self, targets: np.ndarray) -> None:
        t = np.asarray(targets, dtype=np.float64).reshape(-1, self.config.outputs)
        self.target_mean = t.mean(axis=0)
        self.target_std = np.maximum(t.std(axis=0), TARGET_EPS)


def truncated_normal(shape, std: float, rng: np.random.Generator, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples, redrawn until within ``bound * std``."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def fan_in(shape: tuple) -> int:
    return int(np.prod(shape[:-1]))


def init_network(config: NetworkConfig, rng: np.random.Generator) -> Network:
    """He-scaled truncated-normal weights, zero biases."""
    params = {}
    for name, shape in param_shapes(config).items():
        if is_weight(name):
            params[name] = truncated_normal(shape, np.sqrt(2.0 / fan_in(shape)), rng)
        else:
            params[name] = np.zeros(shape)
    return Network(config, params, np.zeros(config.outputs), np.ones(config.outputs))


def standardize_images(images) -> np.ndarray:
    """Shift and scale a whole batch to zero mean and unit standard deviation."""
    x = np.asarray(images, dtype=np.float64)
    return (x - x.mean()) / max(float(x.std()), IMAGE_EPS)


def standardize_targets(targets, net: Network) -> np.ndarray:
    return (np.asarray(targets, dtype=np.float64) - net.target_mean) / net.target_std


def standardize_batch(images, targets, net: Network):
    return standardize_images(images), standardize_targets(targets, net)


def _check_images(net: Network, x: np.ndarray) -> np.ndarray:
    cfg = net.config
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[..., None]
    if x.shape[1:] != (cfg.height, cfg.width, 1):
        raise ValueError(f"expected images of shape {cfg.height}x{cfg.width}, got {x.shape[1:3]}")
    return x


def forward_std(net: Network, x: np.ndarray, train: bool = False,
                rng: Optional[np.random.Generator] = None, keep_cache: bool = False):
    """Forward pass on already-standardized images of shape (B, H, W[, 1]).

    Returns outputs in standardized target units, plus the cache list when
    ``keep_cache`` is set.
    """
    x = _check_images(net, np.asarray(x, dtype=np.float64))
    p = net.params
    caches = []
    h = x
    for k in range(len(net.config.widths)):
        z, c1 = L.conv_forward(h, p[f"stage{k}.down.w"], p[f"stage{k}.down.b"], 2)
        a, m1 = L.relu_forward(z)
        h, c2 = L.residual_forward(a, p[f"stage{k}.res.w"], p[f"stage{k}.res.b"])
        if keep_cache:
            caches.append((c1, m1, c2))
    features = h
    flat = features.reshape(h.shape[0], -1)
    if train and net.config.dropout > 0:
        if rng is None:
            raise ValueError("train mode needs an rng for dropout")
        mask = L.dropout_mask(flat.shape, net.config.dropout, rng)
    else:
        mask = None
    dropped = flat * mask if mask is not None else flat
    out, cd = L.dense_forward(dropped, p["head.w"], p["head.b"])
    if keep_cache:
        return out, {"stages": caches, "features": features, "mask": mask, "dense": cd}
    return out


def backward_std(net: Network, dout: np.ndarray, cache: dict, stop_at_features: bool = False):
    """Reverse pass from output gradients. Returns a gradient dict, or the
    gradient at the last feature map when ``stop_at_features`` is set."""
    p = net.params
    grads = {}
    dflat, grads["head.w"], grads["head.b"] = L.dense_backward(dout, cache["dense"], p["head.w"])
    if cache["mask"] is not None:
        dflat = L.dropout_backward(dflat, cache["mask"])
    dh = dflat.reshape(cache["features"].shape)
    if stop_at_features:
        return dh
    for k in reversed(range(len(net.config.widths))):
        c1, m1, c2 = cache["stages"][k]
        da, grads[f"stage{k}.res.w"], grads[f"stage{k}.res.b"] = L.residual_backward(dh, c2)
        dz = L.relu_backward(da, m1)
        dh, grads[f"stage{k}.down.w"], grads[f"stage{k}.down.b"] = L.conv_backward(dz, c1, need_dx=k > 0)
    return grads


def weight_penalty(net: Network) -> float:
    return float(sum(np.sum(v * v) for k, v in net.params.items() if is_weight(k)))


def forward(net: Network, images, mode: str = "eval", rng: Optional[np.random.Generator] = None,
            chunk: int = 4) -> np.ndarray:
    """Standardize a batch of raw images and return de-standardized body-frame outputs."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _check_images(net, np.asarray(images))
    xs = standardize_images(x)
    outs = [forward_std(net, xs[i:i + chunk], mode == "train", rng) for i in range(0, len(xs), chunk)]
    return np.concatenate(outs) * net.target_std + net.target_mean


def loss_and_gradients(net: Network, x_std: np.ndarray, t_std: np.ndarray, weight_decay: float,
                       train: bool = True, rng: Optional[np.random.Generator] = None,
                       chunk: int = 2) -> tuple[float, dict]:
    """Regularized MSE on standardized inputs/targets and all parameter gradients.

    The data term averages over all ``3 * B`` components; the penalty is
    ``weight_decay * sum(w**2)`` over weights (biases excluded). The batch is
    processed in chunks of ``chunk`` samples to bound memory.
    """
    x_std = _check_images(net, np.asarray(x_std, dtype=np.float64))
    t_std = np.asarray(t_std, dtype=np.float64).reshape(len(x_std), -1)
    n_total = t_std.size
    data = 0.0
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    for i in range(0, len(x_std), chunk):
        out, cache = forward_std(net, x_std[i:i + chunk], train, rng, keep_cache=True)
        diff = out - t_std[i:i + chunk]
        data += float(np.sum(diff * diff))
        g = backward_std(net, 2.0 * diff / n_total, cache)
        for k in grads:
            grads[k] += g[k]
    loss = data / n_total
    if weight_decay:
        loss += weight_decay * weight_penalty(net)
        for k, v in net.params.items():
            if is_weight(k):
                grads[k] += 2.0 * weight_decay * v
    if not np.isfinite(loss):
        raise Divergence(f"non-finite loss {loss}")
    return loss, grads


def feature_maps(net: Network, image) -> tuple[np.ndarray, np.ndarray, dict]:
    """Eval-mode forward of one raw image keeping the cache for attribution."""
    x = standardize_images(_check_images(net, np.asarray(image)))
    out, cache = forward_std(net, x, False, keep_cache=True)
    return out, cache["features"], cache
