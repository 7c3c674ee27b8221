"""Multilayer perceptron parameters, forward evaluation, and gradients.

``MlpParams`` is a plain container of float64 arrays: per layer a weight
matrix (out, in), a bias (out,), an activation tag, and optionally
layernorm scale/shift.  A squash tag transforms the final output
("none", "tanh", or ("sigmoid", lo, hi) for a bounded output).

Two forward paths share the same kernels: ``mlp_forward`` is the plain
numpy fast path (evaluation, target networks, detached statistics), and
``forward_tape`` records onto a gradient tape for training.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..exceptions import DimensionError
from . import tape as T

_ACTS = ("identity", "relu", "tanh")
_NORMS = ("none", "layernorm")

LN_EPS = 1e-5


@dataclass
class MlpParams:
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    ln_scales: list = field(default_factory=list)
    ln_shifts: list = field(default_factory=list)
    squash: tuple = ("none",)

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def validate(self):
        n = len(self.weights)
        if not n:
            raise DimensionError("empty MLP")
        for k in range(n):
            W, b = self.weights[k], self.biases[k]
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {k}: weight {W.shape} / bias {b.shape}")
            if k + 1 < n and self.weights[k + 1].shape[1] != W.shape[0]:
                raise DimensionError(
                    f"layer {k} out-dim {W.shape[0]} != layer {k + 1} in-dim "
                    f"{self.weights[k + 1].shape[1]}")
            if self.activations[k] not in _ACTS:
                raise ValueError(f"unknown activation {self.activations[k]!r}")
            if self.norms[k] not in _NORMS:
                raise ValueError(f"unknown norm {self.norms[k]!r}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise DimensionError(f"layer {k}: non-finite parameters")
        return self


def init_mlp(dims, rng, hidden_act="relu", out_act="identity", norm="none",
             squash=("none",), final_scale=1.0):
    """Uniform +-1/sqrt(fan_in) init; the final layer gets ``final_scale``.

    ``norm="layernorm"`` puts layernorm on every hidden layer (never the
    output layer).
    """
    p = MlpParams(squash=tuple(squash) if not isinstance(squash, str) else (squash,))
    n_layers = len(dims) - 1
    for k in range(n_layers):
        fan_in, fan_out = dims[k], dims[k + 1]
        bound = 1.0 / math.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        last = k == n_layers - 1
        if last:
            W *= final_scale
            b *= final_scale
        p.weights.append(W)
        p.biases.append(b)
        p.activations.append(out_act if last else hidden_act)
        if not last and norm == "layernorm":
            p.norms.append("layernorm")
            p.ln_scales.append(np.ones(fan_out))
            p.ln_shifts.append(np.zeros(fan_out))
        else:
            p.norms.append("none")
            p.ln_scales.append(None)
            p.ln_shifts.append(None)
    return p.validate()


def param_arrays(p: MlpParams):
    """Flat parameter list in a fixed order (W, b, [ln scale, ln shift])."""
    out = []
    for k in range(len(p.weights)):
        out.append(p.weights[k])
        out.append(p.biases[k])
        if p.norms[k] == "layernorm":
            out.append(p.ln_scales[k])
            out.append(p.ln_shifts[k])
    return out


def clone_params(p: MlpParams) -> MlpParams:
    return MlpParams(
        weights=[w.copy() for w in p.weights],
        biases=[b.copy() for b in p.biases],
        activations=list(p.activations),
        norms=list(p.norms),
        ln_scales=[s.copy() if s is not None else None for s in p.ln_scales],
        ln_shifts=[s.copy() if s is not None else None for s in p.ln_shifts],
        squash=p.squash,
    )


def _apply_squash_np(y, squash):
    kind = squash[0]
    if kind == "none":
        return y
    if kind == "tanh":
        return np.tanh(y)
    if kind == "sigmoid":
        lo, hi = squash[1], squash[2]
        return lo + (hi - lo) / (1.0 + np.exp(-y))
    raise ValueError(f"unknown squash {squash!r}")


def mlp_forward(p: MlpParams, x):
    """Plain numpy forward pass; accepts (B, in) or (in,)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != p.in_dim:
        raise DimensionError(f"input dim {x.shape[1]} != first layer in-dim {p.in_dim}")
    h = x
    for k in range(len(p.weights)):
        act = kernels.ACT_IDENTITY if p.activations[k] == "identity" else (
            kernels.ACT_RELU if p.activations[k] == "relu" else kernels.ACT_TANH)
        if p.norms[k] == "layernorm":
            z = h @ p.weights[k].T
            z += p.biases[k]
            out = np.empty_like(z)
            xhat = np.empty_like(z)
            rstd = np.empty(z.shape[0])
            kernels.ln_act_fwd(z, p.ln_scales[k], p.ln_shifts[k], LN_EPS, act,
                               out, xhat, rstd)
            h = out
        else:
            z = h @ p.weights[k].T
            out = np.empty_like(z)
            kernels.bias_act_fwd(z, p.biases[k], act, out)
            h = out
    h = _apply_squash_np(h, p.squash)
    return h[0] if single else h


def leaf_list(tp: T.Tape, p: MlpParams):
    """Leaf Vars aligned with ``param_arrays`` order."""
    return tp.leaves(param_arrays(p), op="param")


def forward_tape(tp: T.Tape, p: MlpParams, x, leaves=None):
    """Tape forward pass.

    ``leaves`` is the list from ``leaf_list`` when this network is being
    trained; without it the parameters are constants (target networks,
    frozen nets).  ``x`` may be a Var or a constant batch.
    """
    vs = iter(leaves) if leaves is not None else None

    def nxt(arr):
        return next(vs) if vs is not None else arr

    h = x
    for k in range(len(p.weights)):
        W = nxt(p.weights[k])
        b = nxt(p.biases[k])
        h = T.linear(h if isinstance(h, T.Var) else np.asarray(h, dtype=np.float64), W, b)
        if p.norms[k] == "layernorm":
            g = nxt(p.ln_scales[k])
            s = nxt(p.ln_shifts[k])
            h = T.layernorm_act(h, g, s, p.activations[k], eps=LN_EPS)
        else:
            h = T.activation(h, p.activations[k])
    kind = p.squash[0]
    if kind == "tanh":
        h = T.tanh(h)
    elif kind == "sigmoid":
        lo, hi = p.squash[1], p.squash[2]
        h = T.add(T.mul(T.sigmoid(h), np.float64(hi - lo)), np.float64(lo))
    return h


def gradient(build, p: MlpParams):
    """Gradients of a scalar loss with respect to ``p``.

    ``build(tape, leaves)`` constructs the loss Var from leaf Vars aligned
    with ``param_arrays(p)``.  Returns (loss value, gradient list).
    """
    tp = T.Tape()
    leaves = leaf_list(tp, p)
    loss = build(tp, leaves)
    grads = T.backward(loss)
    return float(loss.value), T.grads_for(grads, leaves)
