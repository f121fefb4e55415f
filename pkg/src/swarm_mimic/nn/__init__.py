"""From-scratch convolutional velocity-regression policy."""

from .augment import augment_photometric, rotate_target, yaw_rotate_image, yaw_rotate_pair
from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    Network,
    NetworkConfig,
    forward,
    init_network,
    loss_and_gradients,
    standardize_batch,
)
from .optim import OptimizerState, adam_step
from .policy import VisionPolicy, predict_body, predict_command
from .train import TrainConfig, train

__all__ = [
    "Network", "NetworkConfig", "OptimizerState", "TrainConfig", "VisionPolicy",
    "adam_step", "augment_photometric", "forward", "init_network", "load_checkpoint",
    "loss_and_gradients", "predict_body", "predict_command", "rotate_target",
    "save_checkpoint", "standardize_batch", "train", "yaw_rotate_image", "yaw_rotate_pair",
]
