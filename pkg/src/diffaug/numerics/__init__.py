"""Tensor arithmetic, dense networks, reverse-mode gradients and AdamW."""

import numpy as np

from . import autodiff
from .autodiff import Var, stop_gradient
from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import (
    Dense,
    MlpParams,
    as_tensor,
    gradient,
    init_mlp,
    instance_norm,
    mlp_forward,
    n_parameters,
    resolve_spec,
)
from .optim import AdamWConfig, OptState, adamw_step, init_opt_state
from .tree import tree_leaves, tree_map, tree_replace

Tensor = np.ndarray

__all__ = [
    "AdamWConfig",
    "Dense",
    "MlpParams",
    "OptState",
    "Tensor",
    "Var",
    "adamw_step",
    "as_tensor",
    "autodiff",
    "gradient",
    "init_mlp",
    "init_opt_state",
    "instance_norm",
    "load_checkpoint",
    "mlp_forward",
    "n_parameters",
    "resolve_spec",
    "save_checkpoint",
    "stop_gradient",
    "tree_leaves",
    "tree_map",
    "tree_replace",
]
