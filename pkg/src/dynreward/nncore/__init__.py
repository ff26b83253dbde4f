"""Dense-network numerical core: MLPs, reverse-mode gradients, Adam,
diagonal Gaussians.  Everything is float64 and purely functional; parameter
updates return new objects."""

from dynreward.nncore.adam import AdamState, adam_step, init_adam
from dynreward.nncore.gaussian import (
    DEFAULT_LOG_STD_BOUNDS,
    DiagonalGaussian,
    gaussian_entropy,
    gaussian_log_prob,
    gaussian_sample,
)
from dynreward.nncore.mlp import (
    MlpParams,
    backward,
    forward,
    forward_cached,
    gradient,
    grad_sqnorm_backward,
    init_mlp,
    input_gradients,
    load_mlp,
    save_mlp,
)

__all__ = [
    "AdamState",
    "adam_step",
    "init_adam",
    "DEFAULT_LOG_STD_BOUNDS",
    "DiagonalGaussian",
    "gaussian_entropy",
    "gaussian_log_prob",
    "gaussian_sample",
    "MlpParams",
    "backward",
    "forward",
    "forward_cached",
    "gradient",
    "grad_sqnorm_backward",
    "init_mlp",
    "input_gradients",
    "load_mlp",
    "save_mlp",
]
