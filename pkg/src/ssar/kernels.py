"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Backend selection: set ``SSAR_KERNELS=numpy`` to force the fallback, or
``SSAR_KERNELS=numba`` to require the JIT path (raises if numba is missing).
Default is numba when importable.  ``benchmarks/bench_kernels.py`` compares
the two.

All kernels write into caller-allocated output arrays: repeated multi-MB
allocations inside JIT code are dominated by page faults, so buffers come
from numpy's allocator on the caller side.

Everything is float64; matrix products stay on numpy/BLAS in both backends
(a jit loop cannot beat dgemm), so the kernels here are the fused
elementwise and per-row reduction passes that numpy spreads over many
temporaries.

Activation backward passes take the stored post-activation values: for relu
the gate ``post > 0`` matches the forward output exactly (subgradient 0 at
0), and for tanh the derivative is ``1 - post**2`` with no recompute.
"""

import os

import numpy as np

# Activation codes shared by both backends.
ACT_IDENTITY = 0
ACT_RELU = 1
ACT_TANH = 2


def _select_backend() -> str:
    choice = os.environ.get("SSAR_KERNELS", "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        import numba  # noqa: F401  (raise ImportError if unavailable)

        return "numba"
    if choice not in ("", "auto"):
        raise ValueError(f"SSAR_KERNELS must be 'numba' or 'numpy', got {choice!r}")
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


BACKEND = _select_backend()


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _np_ln_act_fwd(z, gamma, beta, eps, act, out, xhat, rstd):
    m = z.mean(axis=1, keepdims=True)
    v = z.var(axis=1, keepdims=True)
    r = 1.0 / np.sqrt(v + eps)
    np.multiply(z - m, r, out=xhat)
    np.multiply(xhat, gamma, out=out)
    out += beta
    rstd[:] = r[:, 0]
    if act == ACT_RELU:
        np.maximum(out, 0.0, out=out)
    elif act == ACT_TANH:
        np.tanh(out, out=out)


def _np_ln_act_bwd(gout, post, xhat, rstd, gamma, act, dz, dgamma, dbeta):
    if act == ACT_RELU:
        g = np.where(post > 0.0, gout, 0.0)
    elif act == ACT_TANH:
        g = gout * (1.0 - post * post)
    else:
        g = gout
    dgamma[:] = (g * xhat).sum(axis=0)
    dbeta[:] = g.sum(axis=0)
    gy = g * gamma
    m1 = gy.mean(axis=1, keepdims=True)
    m2 = (gy * xhat).mean(axis=1, keepdims=True)
    np.multiply(gy - m1 - xhat * m2, rstd[:, None], out=dz)


def _np_act_fwd(z, act, out):
    if act == ACT_RELU:
        np.maximum(z, 0.0, out=out)
    elif act == ACT_TANH:
        np.tanh(z, out=out)
    else:
        out[:] = z


def _np_act_bwd(gout, post, act, dz):
    if act == ACT_RELU:
        np.multiply(gout, post > 0.0, out=dz)
    elif act == ACT_TANH:
        np.multiply(gout, 1.0 - post * post, out=dz)
    else:
        dz[:] = gout


def _np_adam_step(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _np_polyak(target, online, tau):
    target *= 1.0 - tau
    target += tau * online


def _np_bias_act_fwd(z, b, act, out):
    np.add(z, b, out=out)
    if act == ACT_RELU:
        np.maximum(out, 0.0, out=out)
    elif act == ACT_TANH:
        np.tanh(out, out=out)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    @njit(cache=True, fastmath=True)
    def _nb_ln_act_fwd(z, gamma, beta, eps, act, out, xhat, rstd):
        n, d = z.shape
        for i in range(n):
            m = 0.0
            for j in range(d):
                m += z[i, j]
            m /= d
            v = 0.0
            for j in range(d):
                c = z[i, j] - m
                v += c * c
            v /= d
            r = 1.0 / np.sqrt(v + eps)
            rstd[i] = r
            for j in range(d):
                h = (z[i, j] - m) * r
                xhat[i, j] = h
                y = gamma[j] * h + beta[j]
                if act == ACT_RELU:
                    if y < 0.0:
                        y = 0.0
                elif act == ACT_TANH:
                    y = np.tanh(y)
                out[i, j] = y

    @njit(cache=True, fastmath=True)
    def _nb_ln_act_bwd(gout, post, xhat, rstd, gamma, act, dz, dgamma, dbeta):
        n, d = gout.shape
        for j in range(d):
            dgamma[j] = 0.0
            dbeta[j] = 0.0
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                g = gout[i, j]
                if act == ACT_RELU:
                    if post[i, j] <= 0.0:
                        g = 0.0
                elif act == ACT_TANH:
                    g *= 1.0 - post[i, j] * post[i, j]
                dgamma[j] += g * xhat[i, j]
                dbeta[j] += g
                gy = g * gamma[j]
                m1 += gy
                m2 += gy * xhat[i, j]
            m1 /= d
            m2 /= d
            r = rstd[i]
            for j in range(d):
                g = gout[i, j]
                if act == ACT_RELU:
                    if post[i, j] <= 0.0:
                        g = 0.0
                elif act == ACT_TANH:
                    g *= 1.0 - post[i, j] * post[i, j]
                gy = g * gamma[j]
                dz[i, j] = (gy - m1 - xhat[i, j] * m2) * r

    @njit(cache=True, fastmath=True)
    def _nb_relu_fwd(z, out):
        n, d = z.shape
        for i in range(n):
            for j in range(d):
                v = z[i, j]
                out[i, j] = v if v > 0.0 else 0.0

    @njit(cache=True, fastmath=True)
    def _nb_relu_bwd(gout, post, dz):
        n, d = gout.shape
        for i in range(n):
            for j in range(d):
                dz[i, j] = gout[i, j] if post[i, j] > 0.0 else 0.0

    def _nb_act_fwd(z, act, out):
        if act == ACT_RELU:
            _nb_relu_fwd(z, out)
        elif act == ACT_TANH:
            np.tanh(z, out=out)  # numpy's vectorized tanh beats a jit loop
        else:
            out[:] = z

    def _nb_act_bwd(gout, post, act, dz):
        if act == ACT_RELU:
            _nb_relu_bwd(gout, post, dz)
        elif act == ACT_TANH:
            np.multiply(gout, 1.0 - post * post, out=dz)
        else:
            dz[:] = gout

    @njit(cache=True, fastmath=True)
    def _nb_adam_step(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
        for i in range(p.size):
            mi = b1 * m[i] + (1.0 - b1) * g[i]
            vi = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)

    @njit(cache=True, fastmath=True)
    def _nb_polyak(target, online, tau):
        for i in range(target.size):
            target[i] = (1.0 - tau) * target[i] + tau * online[i]

    @njit(cache=True, fastmath=True)
    def _nb_bias_relu_fwd(z, b, out):
        n, d = z.shape
        for i in range(n):
            for j in range(d):
                v = z[i, j] + b[j]
                out[i, j] = v if v > 0.0 else 0.0

    def _nb_bias_act_fwd(z, b, act, out):
        if act == ACT_RELU:
            _nb_bias_relu_fwd(z, b, out)
        else:
            _np_bias_act_fwd(z, b, act, out)

    ln_act_fwd = _nb_ln_act_fwd
    ln_act_bwd = _nb_ln_act_bwd
    act_fwd = _nb_act_fwd
    act_bwd = _nb_act_bwd
    bias_act_fwd = _nb_bias_act_fwd

    def adam_step_arrays(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
        _nb_adam_step(p.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                      m.reshape(-1), v.reshape(-1), lr, b1, b2, eps, bc1, bc2)

    def polyak_arrays(target, online, tau):
        _nb_polyak(target.reshape(-1), online.reshape(-1), tau)

else:
    ln_act_fwd = _np_ln_act_fwd
    ln_act_bwd = _np_ln_act_bwd
    act_fwd = _np_act_fwd
    act_bwd = _np_act_bwd
    bias_act_fwd = _np_bias_act_fwd

    def adam_step_arrays(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
        _np_adam_step(p, g, m, v, lr, b1, b2, eps, bc1, bc2)

    def polyak_arrays(target, online, tau):
        _np_polyak(target, online, tau)


NUMPY_KERNELS = {
    "ln_act_fwd": _np_ln_act_fwd,
    "ln_act_bwd": _np_ln_act_bwd,
    "act_fwd": _np_act_fwd,
    "act_bwd": _np_act_bwd,
    "bias_act_fwd": _np_bias_act_fwd,
    "adam_step": _np_adam_step,
    "polyak": _np_polyak,
}
