"""Training-time augmentation of cube-map images and their targets."""

from __future__ import annotations

import numpy as np

from ..vision import FACE

BRIGHTNESS = 0.25 * 255
CONTRAST = 0.25


def photometric(image: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    out = alpha * (np.asarray(image, dtype=np.float64) - 128.0) + 128.0 + beta
    return np.clip(out, 0.0, 255.0)


def augment_photometric(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random contrast (alpha in [0.75, 1.25]) and brightness (beta within +/-25% of full range).

    One draw applies to everything passed in, so a whole mini-batch shares it.
    """
    alpha = rng.uniform(1.0 - CONTRAST, 1.0 + CONTRAST)
    beta = rng.uniform(-BRIGHTNESS, BRIGHTNESS)
    return photometric(image, alpha, beta)


def rotate_target(target, k: int) -> np.ndarray:
    """Rotate a body-frame vector by k quarter turns about +z (x toward y)."""
    x, y, z = np.asarray(target, dtype=np.float64)
    for _ in range(k % 4):
        x, y = -y, x
    return np.array([x, y, z])


def yaw_rotate_image(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate the cube-map content by k quarter turns about body z.

    Lateral faces shift left by one face per quarter turn (front content
    moves to the left face); the top face turns clockwise and the bottom
    face counter-clockwise, matching the camera rig's in-plane axes.
    """
    k %= 4
    if k == 0:
        return image.copy()
    lateral = np.roll(image[:, :4 * FACE], -FACE * k, axis=1)
    top = np.rot90(image[:, 4 * FACE:5 * FACE], -k)
    bottom = np.rot90(image[:, 5 * FACE:6 * FACE], k)
    return np.concatenate([lateral, top, bottom], axis=1)


def yaw_rotate_pair(image: np.ndarray, target, k: int):
    return yaw_rotate_image(image, k), rotate_target(target, k)
