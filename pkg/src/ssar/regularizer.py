"""State-adaptive regularization strength: the coefficient network, its
update losses, the trust-region width schedule, and online annealing.

The coefficient network maps a state to a bounded scalar in
(0, 1.5 * beta_init).  Its loss is (constraint statistic) * beta(s) with
the statistic detached, so minimizing raises beta exactly where the policy
density (or margin) sits below the trust-region threshold and lowers it
where the constraint is already satisfied.  Gradients never cross between
the coefficient network and the policy/critics: the statistic enters the
beta loss as a constant, and beta values enter the backbone losses as
constants.
"""

import math
from dataclasses import dataclass

import numpy as np

from .numeric import MlpParams, forward_tape, init_mlp, mlp_forward
from .numeric import tape as T
from .policy import (DeterministicHead, GaussianHead, TrustRegionParam,
                     deterministic_margin)

COEFF_HIDDEN_DEFAULT = (512, 512)  # three-layer coefficient network
EMA_DECAY = 0.99


@dataclass
class CoefficientNet:
    net: MlpParams
    beta_init: float

    @classmethod
    def create(cls, obs_dim, beta_init, rng, hidden=COEFF_HIDDEN_DEFAULT):
        if beta_init <= 0:
            raise ValueError(f"beta_init must be positive, got {beta_init}")
        net = init_mlp([obs_dim, *hidden, 1], rng,
                       squash=("sigmoid", 0.0, 1.5 * beta_init),
                       final_scale=1e-2)
        return cls(net=net, beta_init=float(beta_init))

    def beta(self, s):
        """Coefficient values for a batch of states -> (B,), in (0, 1.5*beta_init)."""
        return mlp_forward(self.net, np.atleast_2d(np.asarray(s, dtype=np.float64)))[:, 0]

    def beta_tape(self, tp, s, leaves):
        return T.reshape(forward_tape(tp, self.net, s, leaves), (-1,))

    def param_bytes(self):
        """Stable byte serialization of the parameters (freeze-check hashing)."""
        from .numeric import param_arrays
        return b"".join(np.ascontiguousarray(a).tobytes()
                        for a in param_arrays(self.net))


@dataclass
class ScheduleState:
    """Trust-region width schedule plus its termination statistic estimate."""

    trust: TrustRegionParam
    termination_stat: float = math.nan  # EMA of per-batch constraint means
    ema_decay: float = EMA_DECAY

    @property
    def n(self):
        return self.trust.n

    @property
    def frozen(self):
        return self.trust.frozen

    def update_ema(self, batch_mean: float):
        if math.isnan(self.termination_stat):
            self.termination_stat = float(batch_mean)
        else:
            self.termination_stat = (self.ema_decay * self.termination_stat
                                     + (1.0 - self.ema_decay) * float(batch_mean))
        return self.termination_stat


def make_schedule(n_start, n_end, t_inc, total_steps) -> ScheduleState:
    trust = TrustRegionParam(n=float(n_start), n_start=float(n_start),
                             n_end=float(n_end), t_inc=int(t_inc),
                             total_steps=int(total_steps)).validate()
    return ScheduleState(trust=trust)


def schedule_step(state: ScheduleState, global_step: int,
                  termination_stat: float) -> ScheduleState:
    """Advance the width schedule at an update-interval boundary.

    Off-interval calls are no-ops.  At a boundary: a positive termination
    statistic freezes the schedule permanently; otherwise the width grows
    by one linear increment, clamped at its end value.
    """
    tr = state.trust
    if global_step <= 0 or global_step % tr.t_inc != 0:
        return state
    if tr.frozen:
        return state
    if termination_stat > 0.0:
        tr.frozen = True
        return state
    tr.n = min(tr.n + tr.delta_n, tr.n_end)
    return state


def anneal(beta_value, n_online_steps, n_end):
    """Linear decay of a frozen coefficient over online interaction steps."""
    if n_online_steps < 0:
        raise ValueError("online step count must be nonnegative")
    if n_end <= 0:
        raise ValueError("decay horizon must be positive")
    frac = min(max(1.0 - n_online_steps / n_end, 0.0), 1.0)
    return frac * beta_value


# ---------------------------------------------------------------------------
# constraint statistics and coefficient losses
# ---------------------------------------------------------------------------

def beta_statistic_stochastic(head: GaussianHead, s, a, n):
    """log pi(a|s) - C_n(s), detached -> (B,)."""
    return head.log_prob(s, a) - head.threshold_cn(s, n)


def beta_statistic_deterministic(head: DeterministicHead, s, a, n):
    """Trust-region margin of the deterministic head, detached -> (B,)."""
    return deterministic_margin(head, s, a, n)


def beta_statistic(head, s, a, n):
    if isinstance(head, GaussianHead):
        return beta_statistic_stochastic(head, s, a, n)
    return beta_statistic_deterministic(head, s, a, n)


def beta_loss_builder(coeff: CoefficientNet, s, stat):
    """Loss builder mean(stat * beta(s)) with gradient only into the
    coefficient network; ``stat`` is a constant (B,) array."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    stat = np.asarray(stat, dtype=np.float64)

    def build(tp, leaves):
        return T.mean_(T.mul(coeff.beta_tape(tp, s, leaves), stat))

    return build


def beta_loss_stochastic(coeff, head, s, a, n):
    """Coefficient loss on a sub-dataset batch under a stochastic policy."""
    return beta_loss_builder(coeff, s, beta_statistic_stochastic(head, s, a, n))


def beta_loss_deterministic(coeff, head, s, a, n):
    """Coefficient loss on a sub-dataset batch under a deterministic policy."""
    return beta_loss_builder(coeff, s, beta_statistic_deterministic(head, s, a, n))
