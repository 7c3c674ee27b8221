"""Differentiable MLP core: tape autodiff, Adam, layernorm, Polyak targets."""

from . import tape
from .checkpoint import (arrays_to_layers, layers_into_params, load_checkpoint,
                         params_to_layers, save_checkpoint)
from .mlp import (LN_EPS, MlpParams, clone_params, forward_tape, gradient,
                  init_mlp, leaf_list, mlp_forward, param_arrays)
from .optim import AdamState, adam_init, adam_step, polyak_update

__all__ = [
    "tape", "MlpParams", "init_mlp", "mlp_forward", "forward_tape",
    "gradient", "leaf_list", "param_arrays", "clone_params", "LN_EPS",
    "AdamState", "adam_init", "adam_step", "polyak_update",
    "save_checkpoint", "load_checkpoint", "params_to_layers",
    "layers_into_params", "arrays_to_layers",
]
