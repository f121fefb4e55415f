"""Mini-batch training with plateau learning-rate decay and early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import Divergence
from .augment import augment_photometric, yaw_rotate_pair
from .network import (
    Network,
    NetworkConfig,
    forward_std,
    init_network,
    loss_and_gradients,
    standardize_images,
    standardize_targets,
)
from .optim import OptimizerState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    lr_decay: float = 0.5
    patience: int = 10
    batch: int = 128
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    augment_yaw: bool = True
    augment_photometric: bool = True
    chunk: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("lr0", "lr_decay", "batch", "patience", "max_epochs", "chunk"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])


def evaluate(net: Network, images: np.ndarray, targets: np.ndarray, batch: int = 128, chunk: int = 4) -> float:
    """Eval-mode MSE in standardized target units (no augmentation, no penalty)."""
    total, count = 0.0, 0
    for i in range(0, len(images), batch):
        x = standardize_images(images[i:i + batch])
        t = standardize_targets(targets[i:i + batch], net)
        for j in range(0, len(x), chunk):
            out = forward_std(net, x[j:j + chunk], False)
            d = out - t[j:j + chunk]
            total += float(np.sum(d * d))
            count += d.size
    return total / count


def zero_predictor_mse(net: Network, targets: np.ndarray) -> float:
    """MSE of always predicting the training mean, in standardized units."""
    t = standardize_targets(targets, net)
    return float(np.mean(t * t))


def augment_batch(images: np.ndarray, targets: np.ndarray, config: TrainConfig,
                  rng: np.random.Generator):
    """Random quarter-turn yaw per sample, then one brightness/contrast draw for the whole batch."""
    xs = np.empty(images.shape, dtype=np.float64)
    ts = np.empty(targets.shape, dtype=np.float64)
    for n in range(len(images)):
        img, tgt = images[n], targets[n]
        if config.augment_yaw:
            img, tgt = yaw_rotate_pair(img, tgt, int(rng.integers(4)))
        xs[n], ts[n] = img, tgt
    if config.augment_photometric:
        xs = augment_photometric(xs, rng)
    return xs, ts


def train(
    train_images: np.ndarray,
    train_targets: np.ndarray,
    val_images: np.ndarray,
    val_targets: np.ndarray,
    config: TrainConfig = TrainConfig(),
    network_config: NetworkConfig = NetworkConfig(),
    init: Optional[Network] = None,
    on_epoch=None,
):
    """Fit a network and return ``(best_network, history)``.

    The learning rate is halved once validation loss has not improved for
    ``patience`` epochs; training stops after more than ``patience`` such
    epochs or at ``max_epochs``. With ``init`` the run continues from that
    network, keeping its target statistics.
    """
    rng = np.random.default_rng(config.rng_seed)
    train_targets = np.asarray(train_targets, dtype=np.float64)
    val_targets = np.asarray(val_targets, dtype=np.float64)
    if len(train_images) == 0 or len(val_images) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if init is None:
        net = init_network(network_config, rng)
        net.set_target_stats(train_targets)
    else:
        net = init.copy()
    opt = OptimizerState.zeros_like(net.params)

    history: list[EpochRecord] = []
    best = net.copy()
    best_val = math.inf
    stagnant = 0
    lr = config.lr0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_images))
        losses = []
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            x, t = augment_batch(train_images[idx], train_targets[idx], config, rng)
            x = standardize_images(x)
            t = standardize_targets(t, net)
            try:
                loss, grads = loss_and_gradients(net, x, t, config.weight_decay, True, rng, config.chunk)
            except Divergence as exc:
                raise Divergence(str(exc), history) from exc
            adam_step(net.params, grads, opt, lr, config.beta1, config.beta2, config.eps)
            losses.append(loss * len(idx))
        val = evaluate(net, val_images, val_targets, config.batch)
        if not math.isfinite(val):
            raise Divergence(f"non-finite validation loss at epoch {epoch}", history)
        history.append(EpochRecord(epoch, sum(losses) / len(order), val, lr))
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, history[-1].train_loss, val, lr)
        if on_epoch is not None:
            on_epoch(history[-1])
        improved, stop, stagnant, lr = plateau_update(val, best_val, stagnant, lr, config)
        if improved:
            best_val, best = val, net.copy()
        if stop:
            break
    return best, history


def plateau_update(val: float, best_val: float, stagnant: int, lr: float, config: TrainConfig):
    """One epoch of the plateau schedule.

    Returns ``(improved, stop, stagnant, lr)``: the learning rate is scaled
    by ``lr_decay`` when the stagnation count reaches ``patience`` and
    training stops once it exceeds it.
    """
    if val < best_val:
        return True, False, 0, lr
    stagnant += 1
    if stagnant > config.patience:
        return False, True, stagnant, lr
    if stagnant == config.patience:
        lr *= config.lr_decay
    return False, False, stagnant, lr
