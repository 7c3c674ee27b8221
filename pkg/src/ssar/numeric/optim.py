"""Adam optimizer and Polyak target averaging over parameter array lists."""

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..exceptions import DimensionError
from .mlp import MlpParams, param_arrays


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shapes: list = field(default_factory=list)


def adam_init(arrays, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        shapes=[a.shape for a in arrays],
    )


def adam_step(state: AdamState, arrays, grads):
    """One bias-corrected Adam update, in place; returns (arrays, state)."""
    if len(arrays) != len(state.m) or len(grads) != len(state.m):
        raise DimensionError("adam_step: parameter/gradient count mismatch")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"adam_step: param {p.shape} vs grad {g.shape}")
        kernels.adam_step_arrays(p, g, m, v, state.lr, state.beta1, state.beta2,
                                 state.eps, bc1, bc2)
    return arrays, state


def polyak_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """target <- (1 - tau) * target + tau * online, elementwise, in place."""
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"polyak tau must be in (0, 1], got {tau}")
    ta, oa = param_arrays(target), param_arrays(online)
    if len(ta) != len(oa):
        raise DimensionError("polyak_update: architecture mismatch")
    for t, o in zip(ta, oa):
        if t.shape != o.shape:
            raise DimensionError(f"polyak_update: {t.shape} vs {o.shape}")
        kernels.polyak_arrays(t, o, tau)
    return target
