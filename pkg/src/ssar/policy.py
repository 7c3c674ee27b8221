"""Policy heads and their densities.

Two heads share the MLP core: a diagonal-Gaussian head (plain or
tanh-squashed into the action box) and a deterministic head whose
exploration noise plays the role of a standard deviation.  Both expose a
plain-numpy path (evaluation, detached statistics) and a tape path
(training losses).

Conventions: the action box is symmetric, ``[-scale, scale]`` per
dimension with a single scalar ``scale``.  Squashed densities are proper
densities over the box (the tanh Jacobian includes the ``log scale``
term), so 1-D densities integrate to 1 over the box.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .numeric import MlpParams, forward_tape, init_mlp, mlp_forward
from .numeric import tape as T

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
ATANH_EPS = 1e-6   # dataset actions can sit exactly on the box boundary
JACOBIAN_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class GaussianHead:
    trunk: MlpParams          # obs -> [mu, log_std] (2 * act_dim)
    act_dim: int
    action_scale: float = 1.0
    squashed: bool = True
    calls: int = 0            # instrumentation: public evaluations of this head

    @classmethod
    def create(cls, obs_dim, act_dim, hidden, rng, action_scale=1.0, squashed=True):
        trunk = init_mlp([obs_dim, *hidden, 2 * act_dim], rng, final_scale=1e-2)
        return cls(trunk=trunk, act_dim=act_dim, action_scale=float(action_scale),
                   squashed=squashed)

    # -- numpy paths --------------------------------------------------------

    def dist_params(self, s):
        out = mlp_forward(self.trunk, np.atleast_2d(np.asarray(s, dtype=np.float64)))
        mu = out[:, : self.act_dim]
        log_std = np.clip(out[:, self.act_dim:], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def act(self, s):
        """Deterministic action (distribution mean, squashed into the box)."""
        self.calls += 1
        single = np.asarray(s).ndim == 1
        mu, _ = self.dist_params(s)
        a = self.action_scale * np.tanh(mu) if self.squashed else mu
        return a[0] if single else a

    def log_prob(self, s, a):
        """Row log density of actions under the current head -> (B,)."""
        self.calls += 1
        mu, log_std = self.dist_params(s)
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        if a.shape[1] != self.act_dim:
            raise DimensionError(f"action dim {a.shape[1]} != head act_dim {self.act_dim}")
        if not self.squashed:
            return _normal_logp_np(mu, log_std, a)
        t = np.clip(a / self.action_scale, -1.0 + ATANH_EPS, 1.0 - ATANH_EPS)
        u = np.arctanh(t)
        corr = (np.log(1.0 - t * t + JACOBIAN_EPS)
                + math.log(self.action_scale)).sum(axis=1)
        return _normal_logp_np(mu, log_std, u) - corr

    def sample(self, s, z):
        """Reparameterized sample from standard-normal noise z -> (a, logp)."""
        self.calls += 1
        mu, log_std = self.dist_params(s)
        std = np.exp(log_std)
        u = mu + std * z
        if not self.squashed:
            return u, _normal_logp_np(mu, log_std, u)
        t = np.tanh(u)
        a = self.action_scale * t
        corr = (np.log(1.0 - t * t + JACOBIAN_EPS)
                + math.log(self.action_scale)).sum(axis=1)
        return a, _normal_logp_np(mu, log_std, u) - corr

    def sample_many(self, s, z):
        """Vectorized sampling: z (B, M, d) -> actions (B, M, d), logp (B, M)."""
        self.calls += 1
        mu, log_std = self.dist_params(s)
        std = np.exp(log_std)
        u = mu[:, None, :] + std[:, None, :] * z
        zs = (u - mu[:, None, :]) / std[:, None, :]
        base = (-_HALF_LOG_2PI - log_std[:, None, :] - 0.5 * zs * zs).sum(axis=2)
        if not self.squashed:
            return u, base
        t = np.tanh(u)
        corr = (np.log(1.0 - t * t + JACOBIAN_EPS)
                + math.log(self.action_scale)).sum(axis=2)
        return self.action_scale * t, base - corr

    def threshold_cn(self, s, n):
        """Trust-region log-density threshold C_n(s) -> (B,).

        Both displacement points mu +- n*sigma (all coordinates moved
        together) are evaluated and the smaller log density wins; for a
        plain Gaussian the two branches coincide, for a squashed head the
        tanh Jacobian breaks the symmetry.
        """
        self.calls += 1
        mu, log_std = self.dist_params(s)
        base = (-_HALF_LOG_2PI - log_std).sum(axis=1) - 0.5 * n * n * self.act_dim
        if not self.squashed:
            return base
        std = np.exp(log_std)
        branches = []
        for sign in (1.0, -1.0):
            u = mu + sign * n * std
            t = np.tanh(u)
            corr = (np.log(1.0 - t * t + JACOBIAN_EPS)
                    + math.log(self.action_scale)).sum(axis=1)
            branches.append(base - corr)
        return np.minimum(branches[0], branches[1])

    # -- tape paths ---------------------------------------------------------

    def dist_params_tape(self, tp, s, leaves):
        out = forward_tape(tp, self.trunk, s, leaves)
        mu = T.slice_cols(out, 0, self.act_dim)
        log_std = T.clip(T.slice_cols(out, self.act_dim, 2 * self.act_dim),
                         LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def sample_tape(self, tp, s, z, leaves):
        """Tape version of ``sample``; gradient flows through mu and sigma."""
        mu, log_std = self.dist_params_tape(tp, s, leaves)
        u = T.add(mu, T.mul(T.exp(log_std), z))
        if not self.squashed:
            return u, T.normal_logp(mu, log_std, u)
        a = T.tanh_squash(u, self.action_scale)
        logp = T.sub(T.normal_logp(mu, log_std, u),
                     T.squash_correction(u, self.action_scale, JACOBIAN_EPS))
        return a, logp


@dataclass
class DeterministicHead:
    trunk: MlpParams          # obs -> act_dim, tanh squash
    act_dim: int
    action_scale: float = 1.0
    delta: float = 0.1        # exploration-noise scale, absolute action units
    calls: int = 0

    @classmethod
    def create(cls, obs_dim, act_dim, hidden, rng, action_scale=1.0, delta=None):
        trunk = init_mlp([obs_dim, *hidden, act_dim], rng, squash=("tanh",),
                         final_scale=1e-2)
        if delta is None:
            delta = 0.1 * float(action_scale)
        return cls(trunk=trunk, act_dim=act_dim, action_scale=float(action_scale),
                   delta=float(delta))

    def act(self, s):
        self.calls += 1
        single = np.asarray(s).ndim == 1
        a = self.action_scale * mlp_forward(self.trunk, np.atleast_2d(
            np.asarray(s, dtype=np.float64)))
        return a[0] if single else a

    def act_tape(self, tp, s, leaves):
        out = forward_tape(tp, self.trunk, s, leaves)
        return T.mul(out, np.float64(self.action_scale))


def deterministic_margin(head: DeterministicHead, s, a, n):
    """Trust-region margin for a deterministic policy -> (B,).

    ``act_dim * n^2 * delta^2 - ||a - pi(s)||^2``: the action-dimension
    factor makes the margin exactly ``2 delta^2`` times the gap between the
    Gaussian log density of ``a`` under N(pi(s), delta I) and its
    trust-region threshold, in any dimension.
    """
    pi = head.act(np.atleast_2d(np.asarray(s, dtype=np.float64)))
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    d = head.act_dim
    return d * (n * head.delta) ** 2 - ((a - pi) ** 2).sum(axis=1)


@dataclass
class TrustRegionParam:
    """Linear trust-region width schedule state."""

    n: float
    n_start: float
    n_end: float
    t_inc: int
    total_steps: int
    frozen: bool = False

    @property
    def delta_n(self):
        return (self.n_end - self.n_start) * self.t_inc / self.total_steps

    def validate(self):
        if not (self.n_start <= self.n <= self.n_end):
            raise ValueError(f"n={self.n} outside [{self.n_start}, {self.n_end}]")
        return self


def _normal_logp_np(mu, log_std, x):
    std = np.exp(log_std)
    zs = (x - mu) / std
    return (-_HALF_LOG_2PI - log_std - 0.5 * zs * zs).sum(axis=1)
