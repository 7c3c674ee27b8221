"""Twin critics with layernorm, and expectile-regression value pretraining.

The pretrained (Q, V) pair powers advantage-based sub-dataset selection:
it is learned entirely in-sample (no policy is ever queried), alternating
expectile regression for V against a detached Q with plain squared-error
regression for Q against ``r + gamma * V(s')``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DivergenceError
from .numeric import (MlpParams, adam_init, adam_step, clone_params,
                      forward_tape, init_mlp, leaf_list, mlp_forward,
                      param_arrays, polyak_update)
from .numeric import tape as T


@dataclass
class CriticPair:
    """Two Q networks over [s, a] plus Polyak-averaged target copies."""

    q1: MlpParams
    q2: MlpParams
    q1_target: MlpParams
    q2_target: MlpParams
    tau_polyak: float = 0.005

    @classmethod
    def create(cls, obs_dim, act_dim, hidden, rng, tau_polyak=0.005, layernorm=True):
        norm = "layernorm" if layernorm else "none"
        q1 = init_mlp([obs_dim + act_dim, *hidden, 1], rng, norm=norm)
        q2 = init_mlp([obs_dim + act_dim, *hidden, 1], rng, norm=norm)
        return cls(q1=q1, q2=q2, q1_target=clone_params(q1),
                   q2_target=clone_params(q2), tau_polyak=tau_polyak)

    def q_values(self, s, a):
        x = np.concatenate([s, a], axis=1)
        return mlp_forward(self.q1, x)[:, 0], mlp_forward(self.q2, x)[:, 0]

    def target_min(self, s, a):
        x = np.concatenate([s, a], axis=1)
        return np.minimum(mlp_forward(self.q1_target, x)[:, 0],
                          mlp_forward(self.q2_target, x)[:, 0])

    def q1_tape(self, tp, s, a_var):
        """Q1 with gradient through the action only (policy updates)."""
        x = T.concat_cols(tp.leaf(np.asarray(s, dtype=np.float64)), a_var)
        return T.reshape(forward_tape(tp, self.q1, x), (-1,))

    def min_q_tape(self, tp, s, a_var):
        x = T.concat_cols(tp.leaf(np.asarray(s, dtype=np.float64)), a_var)
        q1 = T.reshape(forward_tape(tp, self.q1, x), (-1,))
        q2 = T.reshape(forward_tape(tp, self.q2, x), (-1,))
        return T.minimum(q1, q2)

    def sync_targets(self):
        polyak_update(self.q1_target, self.q1, self.tau_polyak)
        polyak_update(self.q2_target, self.q2, self.tau_polyak)


@dataclass
class IqlPair:
    """State-action network Q and state network V trained by Eq.-style
    expectile regression; immutable after pretraining."""

    q: MlpParams
    v: MlpParams
    tau: float

    def q_fn(self, s, a):
        return mlp_forward(self.q, np.concatenate([s, a], axis=1))[:, 0]

    def v_fn(self, s):
        return mlp_forward(self.v, s)[:, 0]


def expectile_loss(u, tau):
    """|tau - 1(u < 0)| * u^2, elementwise."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"expectile tau must be in (0,1), got {tau}")
    u = np.asarray(u, dtype=np.float64)
    w = np.abs(tau - (u < 0.0))
    return w * u * u


def scalar_expectile(samples, tau):
    """argmin_c of sum |tau - 1(x - c < 0)| (x - c)^2 by ternary search."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("scalar_expectile of empty sample set")
    lo, hi = float(x.min()), float(x.max())

    def f(c):
        return float(expectile_loss(x - c, tau).sum())

    for _ in range(200):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if f(m1) <= f(m2):
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


def iql_pretrain(dataset, tau, steps, seed, gamma=0.99, lr=3e-4,
                 hidden=(64, 64), batch_size=256, check_every=1000) -> IqlPair:
    """Alternating expectile/Bellman regression on a fixed dataset.

    No policy is involved anywhere: V regresses toward the tau-expectile of
    Q over dataset actions, Q regresses toward r + gamma * V(s') with
    bootstrap masked on terminals.  Aborts if |mean V| exceeds ten times
    the reward-implied return bound.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x101]))
    q = init_mlp([dataset.obs_dim + dataset.act_dim, *hidden, 1], rng)
    v = init_mlp([dataset.obs_dim, *hidden, 1], rng)
    adam_q = adam_init(param_arrays(q), lr=lr)
    adam_v = adam_init(param_arrays(v), lr=lr)
    n = dataset.n
    r_max = float(np.abs(dataset.rewards).max())
    bound = r_max / (1.0 - gamma) if gamma < 1.0 else r_max * 1e3
    bound = max(bound, 1e-6)

    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        s = dataset.observations[idx]
        a = dataset.actions[idx]
        r = dataset.rewards[idx]
        s2 = dataset.next_observations[idx]
        term = dataset.terminals[idx].astype(np.float64)
        sa = np.concatenate([s, a], axis=1)

        # V step: expectile regression against detached Q
        q_det = mlp_forward(q, sa)[:, 0]
        tp = T.Tape()
        leaves_v = leaf_list(tp, v)
        v_out = T.reshape(forward_tape(tp, v, s, leaves_v), (-1,))
        u = T.sub(np.asarray(q_det), v_out)
        w = np.abs(tau - (u.value < 0.0))
        loss_v = T.mean_(T.mul(T.square(u), w))
        grads = T.grads_for(T.backward(loss_v), leaves_v)
        adam_step(adam_v, param_arrays(v), grads)

        # Q step: squared Bellman error against current V on s'
        target = r + gamma * (1.0 - term) * mlp_forward(v, s2)[:, 0]
        tp = T.Tape()
        leaves_q = leaf_list(tp, q)
        q_out = T.reshape(forward_tape(tp, q, sa, leaves_q), (-1,))
        loss_q = T.mean_(T.square(T.sub(q_out, target)))
        grads = T.grads_for(T.backward(loss_q), leaves_q)
        adam_step(adam_q, param_arrays(q), grads)

        if (step + 1) % check_every == 0:
            v_mean = float(mlp_forward(v, s)[:, 0].mean())
            if abs(v_mean) > 10.0 * bound:
                raise DivergenceError(
                    f"IQL pretraining diverged at step {step + 1}: "
                    f"|mean V| = {abs(v_mean):.3g} > 10 * {bound:.3g}")

    return IqlPair(q=q, v=v, tau=tau)
