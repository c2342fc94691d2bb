"""Union segmentation of multimodal images guided by generated text
instructions, built on a from-scratch reverse-mode autodiff tensor."""

from .tensor import Tensor, conv2d, conv_transpose2d, finite_diff_check, layer_norm, matmul, no_grad, softmax
from .nn import DimConfig
from .errors import (BackendError, ConfigError, FrozenDriftError, InputError,
                     ResolutionError, ShapeError, TrainingError, ZeusError)
from .losses import LossConfig, bce_loss, combined_loss, dice_loss, dsc_metric, miou_metric
from .fusion import FusionMode, count_trainable_params, fuse_early, fuse_hybrid, fuse_late
from .model import ZeusModel
from .train import RunConfig, evaluate, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "conv2d", "conv_transpose2d", "finite_diff_check", "layer_norm", "matmul",
    "no_grad", "softmax", "DimConfig", "LossConfig", "bce_loss", "combined_loss",
    "dice_loss", "dsc_metric", "miou_metric", "FusionMode", "count_trainable_params",
    "fuse_early", "fuse_hybrid", "fuse_late", "ZeusModel", "RunConfig", "evaluate",
    "lr_at", "train", "ZeusError", "ConfigError", "InputError", "ShapeError",
    "ResolutionError", "BackendError", "TrainingError", "FrozenDriftError",
    "__version__",
]
