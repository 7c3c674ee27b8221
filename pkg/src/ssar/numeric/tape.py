"""Reverse-mode gradient tape over numpy arrays.

The tape is a Wengert list: executing the forward pass appends one node per
primitive operation, so list order is already topological and the backward
pass is a single reverse sweep.  Ops are free functions taking ``Var`` or
plain ndarray arguments; ndarray arguments are treated as constants and
receive no gradient, which is how stop-gradients are expressed throughout
the package (pass ``var.value`` instead of ``var``).

All values are float64.  Per-row scalars are 1-D ``(B,)`` arrays and are
never mixed with 2-D arrays inside an op (broadcasting across both layouts
is a classic source of silent (B, B) blowups).
"""

import numpy as np

from .. import kernels
from ..exceptions import DimensionError, NonFiniteError

_ACT_CODE = {"identity": kernels.ACT_IDENTITY,
             "relu": kernels.ACT_RELU,
             "tanh": kernels.ACT_TANH}


class Tape:
    """Recorded primitive operations for one forward pass."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def leaf(self, value, op="leaf"):
        return Var(self, np.asarray(value, dtype=np.float64), (), op)

    def leaves(self, arrays, op="leaf"):
        return [self.leaf(a, op) for a in arrays]


class Var:
    """One tape node: a value plus backward closures toward its parents."""

    __slots__ = ("tape", "value", "pbacks", "op", "idx")

    def __init__(self, tape, value, pbacks, op):
        self.tape = tape
        self.value = value
        self.pbacks = pbacks
        self.op = op
        self.idx = len(tape.nodes)
        tape.nodes.append(self)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _node(tape, value, op, *pairs):
    pbacks = tuple((p, fn) for p, fn in pairs if isinstance(p, Var))
    return Var(tape, value, pbacks, op)


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise TypeError("at least one argument must be a Var")


def backward(root):
    """Accumulate gradients of a scalar root into every tape node.

    Returns a list indexed by node idx; entries are ndarray gradients or
    None for nodes the root does not depend on.
    """
    if root.value.size != 1:
        raise DimensionError(f"backward root must be scalar, got shape {root.value.shape}")
    tape = root.tape
    if not np.isfinite(root.value):
        for node in tape.nodes:
            if not np.all(np.isfinite(node.value)):
                raise NonFiniteError(node.op)
        raise NonFiniteError(root.op)
    grads = [None] * len(tape.nodes)
    grads[root.idx] = np.ones_like(root.value)
    for node in reversed(tape.nodes[: root.idx + 1]):
        g = grads[node.idx]
        if g is None:
            continue
        for parent, fn in node.pbacks:
            contrib = fn(g)
            if grads[parent.idx] is None:
                grads[parent.idx] = contrib
            else:
                grads[parent.idx] = grads[parent.idx] + contrib
    return grads


def grads_for(grads, leaves):
    """Gradients for a list of leaf Vars, zeros where unused."""
    out = []
    for leaf in leaves:
        g = grads[leaf.idx]
        out.append(np.zeros_like(leaf.value) if g is None else np.asarray(g))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    av, bv = _val(a), _val(b)
    return _node(_tape_of(a, b), av + bv, "add",
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = _val(a), _val(b)
    return _node(_tape_of(a, b), av - bv, "sub",
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _node(_tape_of(a, b), av * bv, "mul",
                 (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = _val(a), _val(b)
    return _node(_tape_of(a, b), av / bv, "div",
                 (a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))


def neg(a):
    return _node(a.tape, -a.value, "neg", (a, lambda g: -g))


def square(a):
    av = _val(a)
    return _node(a.tape, av * av, "square", (a, lambda g: g * (2.0 * av)))


def exp(a):
    ev = np.exp(_val(a))
    return _node(a.tape, ev, "exp", (a, lambda g: g * ev))


def log(a):
    av = _val(a)
    return _node(a.tape, np.log(av), "log", (a, lambda g: g / av))


def tanh(a):
    tv = np.tanh(_val(a))
    return _node(a.tape, tv, "tanh", (a, lambda g: g * (1.0 - tv * tv)))


def sigmoid(a):
    sv = 1.0 / (1.0 + np.exp(-_val(a)))
    return _node(a.tape, sv, "sigmoid", (a, lambda g: g * sv * (1.0 - sv)))


def absolute(a):
    av = _val(a)
    return _node(a.tape, np.abs(av), "abs", (a, lambda g: g * np.sign(av)))


def clip(a, lo, hi):
    av = _val(a)
    cv = np.clip(av, lo, hi)
    inside = (av > lo) & (av < hi)
    return _node(a.tape, cv, "clip", (a, lambda g: g * inside))


def minimum(a, b):
    av, bv = _val(a), _val(b)
    take_a = av <= bv
    return _node(_tape_of(a, b), np.minimum(av, bv), "minimum",
                 (a, lambda g: _unbroadcast(g * take_a, av.shape)),
                 (b, lambda g: _unbroadcast(g * ~take_a, bv.shape)))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None):
    av = _val(a)
    out = av.sum(axis=axis)

    def back(g):
        if axis is None:
            return np.broadcast_to(g, av.shape)
        return np.broadcast_to(np.expand_dims(g, axis), av.shape)

    return _node(a.tape, out, "sum", (a, back))


def mean_(a, axis=None):
    av = _val(a)
    n = av.size if axis is None else av.shape[axis]
    out = av.mean(axis=axis)

    def back(g):
        if axis is None:
            return np.broadcast_to(g / n, av.shape)
        return np.broadcast_to(np.expand_dims(g / n, axis), av.shape)

    return _node(a.tape, out, "mean", (a, back))


def weighted_mean(a, w):
    """mean of a 1-D vector under constant nonnegative weights w (sum > 0)."""
    av = _val(a)
    w = np.asarray(w, dtype=np.float64)
    sw = w.sum()
    out = np.asarray((av * w).sum() / sw)
    return _node(a.tape, out, "weighted_mean", (a, lambda g: g * (w / sw)))


def reshape(a, shape):
    av = _val(a)
    return _node(a.tape, av.reshape(shape), "reshape",
                 (a, lambda g: g.reshape(av.shape)))


def concat_cols(a, b):
    av, bv = _val(a), _val(b)
    na = av.shape[1]
    return _node(_tape_of(a, b), np.concatenate([av, bv], axis=1), "concat",
                 (a, lambda g: g[:, :na]),
                 (b, lambda g: g[:, na:]))


def slice_cols(a, lo, hi):
    av = _val(a)

    def back(g):
        out = np.zeros_like(av)
        out[:, lo:hi] = g
        return out

    return _node(a.tape, av[:, lo:hi], "slice", (a, back))


def logsumexp_rows(a):
    """Row-wise log-sum-exp of a 2-D array -> (B,)."""
    av = _val(a)
    mx = av.max(axis=1, keepdims=True)
    ex = np.exp(av - mx)
    s = ex.sum(axis=1, keepdims=True)
    out = (mx + np.log(s))[:, 0]
    soft = ex / s
    return _node(a.tape, out, "logsumexp", (a, lambda g: g[:, None] * soft))


# ---------------------------------------------------------------------------
# fused network ops
# ---------------------------------------------------------------------------

def linear(x, W, b):
    """x @ W.T + b with x (B, in), W (out, in), b (out,)."""
    xv, Wv, bv = _val(x), _val(W), _val(b)
    if xv.shape[1] != Wv.shape[1]:
        raise DimensionError(f"linear: input dim {xv.shape[1]} != weight in-dim {Wv.shape[1]}")
    out = xv @ Wv.T
    out += bv
    return _node(_tape_of(x, W, b), out, "linear",
                 (x, lambda g: g @ Wv),
                 (W, lambda g: g.T @ xv),
                 (b, lambda g: g.sum(axis=0)))


def layernorm_act(z, gamma, beta, act, eps=1e-5):
    """Fused per-row layernorm + activation, backed by the kernel module.

    Normalizes each row to mean 0 / biased variance 1 (with an ``eps``
    variance floor so constant rows stay finite), applies the learned
    scale/shift, then the activation.
    """
    zv, gv, bv = _val(z), _val(gamma), _val(beta)
    n, d = zv.shape
    out = np.empty_like(zv)
    xhat = np.empty_like(zv)
    rstd = np.empty(n)
    kernels.ln_act_fwd(zv, gv, bv, eps, _ACT_CODE[act], out, xhat, rstd)
    code = _ACT_CODE[act]

    state = {}

    def back_all(g):
        if "dz" not in state:
            dz = np.empty_like(zv)
            dgamma = np.empty_like(gv)
            dbeta = np.empty_like(bv)
            g = np.ascontiguousarray(g)
            kernels.ln_act_bwd(g, out, xhat, rstd, gv, code, dz, dgamma, dbeta)
            state["dz"], state["dgamma"], state["dbeta"] = dz, dgamma, dbeta
        return state

    return _node(_tape_of(z, gamma, beta), out, "layernorm",
                 (z, lambda g: back_all(g)["dz"]),
                 (gamma, lambda g: back_all(g)["dgamma"]),
                 (beta, lambda g: back_all(g)["dbeta"]))


def activation(z, act):
    zv = _val(z)
    code = _ACT_CODE[act]
    if act == "identity":
        return z if isinstance(z, Var) else _node(_tape_of(z), zv, "identity")
    out = np.empty_like(zv)
    kernels.act_fwd(zv, code, out)

    def back(g):
        dz = np.empty_like(zv)
        kernels.act_bwd(np.ascontiguousarray(g), out, code, dz)
        return dz

    return _node(z.tape, out, f"act_{act}", (z, back))


# ---------------------------------------------------------------------------
# fused distribution ops
# ---------------------------------------------------------------------------

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def normal_logp(mu, log_std, x):
    """Row-summed diagonal-Gaussian log density -> (B,).

    Any of mu, log_std, x may be a Var; the others are constants.
    """
    mv, lv, xv = _val(mu), _val(log_std), _val(x)
    std = np.exp(lv)
    zs = (xv - mv) / std
    out = (-_HALF_LOG_2PI - lv - 0.5 * zs * zs).sum(axis=1)
    return _node(_tape_of(mu, log_std, x), out, "normal_logp",
                 (mu, lambda g: g[:, None] * (zs / std)),
                 (log_std, lambda g: g[:, None] * (zs * zs - 1.0)),
                 (x, lambda g: g[:, None] * (-zs / std)))


def tanh_squash(u, scale):
    """scale * tanh(u); scale is a constant per-dim vector or scalar."""
    uv = _val(u)
    tv = np.tanh(uv)
    return _node(u.tape, scale * tv, "tanh_squash",
                 (u, lambda g: g * scale * (1.0 - tv * tv)))


def squash_correction(u, scale, eps=1e-6):
    """Row-summed log |d a / d u| of a = scale*tanh(u) -> (B,).

    Uses log(1 - tanh(u)^2 + eps) + log(scale) per coordinate; eps keeps
    boundary actions finite.
    """
    uv = _val(u)
    tv = np.tanh(uv)
    one_m = 1.0 - tv * tv
    out = (np.log(one_m + eps) + np.log(scale) * np.ones_like(uv)).sum(axis=1)
    dd = -2.0 * tv * one_m / (one_m + eps)
    return _node(u.tape, out, "squash_correction",
                 (u, lambda g: g[:, None] * dd))
