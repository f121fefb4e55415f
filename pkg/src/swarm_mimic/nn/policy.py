"""Inference: turn a trained network into a world-frame velocity controller."""

from __future__ import annotations

import numpy as np

from ..sim import Policy
from .network import Network, forward


def predict_body(net: Network, images) -> np.ndarray:
    """Body-frame Reynolds commands for a batch of raw images.

    Images are standardized one at a time, as during closed-loop control.
    """
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    return np.concatenate([forward(net, img[None], "eval") for img in images])


def predict_command(net: Network, image, attitude) -> np.ndarray:
    """World-frame Reynolds command for one observation.

    Migration is not included; callers add it.
    """
    body = predict_body(net, image)[0]
    return np.asarray(attitude, dtype=np.float64).T @ body


class VisionPolicy(Policy):
    uses_vision = True

    def __init__(self, net: Network):
        self.net = net

    def act(self, states, agents, observations=None):
        if observations is None:
            raise ValueError("vision policy needs observations")
        body = predict_body(self.net, np.stack(observations))
        return np.array([states[i].attitude.T @ b for i, b in zip(agents, body)])
