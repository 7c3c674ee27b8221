"""The two state-adaptive backbones and the training loops.

CQL side: twin-critic Bellman regression plus a per-state conservative
penalty beta(s) * (sampled-logsumexp - Q(s, a_data)) applied on sub-dataset
states, squashed-Gaussian actor trained against the soft value, automatic
entropy temperature.  TD3 side: standard smoothed twin-critic targets and a
delayed deterministic actor maximizing normalized Q minus a
beta(s)-weighted behavior-cloning penalty gated by sub-dataset membership.

Each offline iteration runs policy update, critic update, coefficient
update in that order (the deterministic backbone keeps its conventional
policy delay), then advances the trust-region schedule at interval
boundaries.  Online fine-tuning freezes the coefficient network, anneals
its outputs linearly over interaction steps, and marks every online
transition as constrained.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SubDatasetMask
from .envs import evaluate_policy
from .exceptions import SsarError
from .numeric import (adam_init, adam_step, clone_params, forward_tape,
                      leaf_list, mlp_forward, param_arrays, polyak_update)
from .numeric import tape as T
from .policy import DeterministicHead, GaussianHead
from .regularizer import (CoefficientNet, ScheduleState, anneal,
                          beta_loss_builder, beta_statistic, make_schedule,
                          schedule_step)
from .value import CriticPair, IqlPair

BACKBONES = ("cql-sa", "td3bc-sa")


@dataclass
class TrainSetup:
    """Hyperparameters for one run; defaults are the desk-scale presets."""

    backbone: str = "td3bc-sa"
    gamma: float = 0.99
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    coeff_lr: float = 1e-4
    alpha_lr: float = 3e-4
    hidden: tuple = (64, 64)
    coeff_hidden: tuple = (64, 64)
    beta_init: float = 2.5
    n_start: float = 1.0
    n_end: float = 3.0
    t_inc: int = 1000
    total_steps: int = 100_000
    tau_polyak: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2      # fraction of the action scale
    noise_clip: float = 0.5
    n_cons_samples: int = 10       # per proposal: uniform / policy / next-policy
    sparse_task: bool = False
    adaptive_coeff: bool = True    # False: beta(s) pinned to beta_init
    online_policy_delay_sparse: int = 4

    def validate(self):
        if self.backbone not in BACKBONES:
            raise SsarError(f"unknown backbone {self.backbone!r}; choices {BACKBONES}")
        if self.beta_init <= 0 or self.gamma <= 0 or self.gamma > 1:
            raise SsarError("beta_init must be > 0 and gamma in (0, 1]")
        return self


class ReplayBuffer:
    """Columnar transition storage with per-transition membership flags.

    ``mode='uniform'`` samples over everything stored; ``mode='symmetric'``
    draws half of each batch from the fixed offline block and half from the
    online block (odd batch sizes round the online share up).  Online
    transitions always carry sub-dataset membership.
    """

    def __init__(self, obs_dim, act_dim, capacity, mode="uniform"):
        self.capacity = int(capacity)
        self.mode = mode
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.term = np.zeros(capacity)
        self.dhat = np.zeros(capacity, dtype=bool)
        self.online = np.zeros(capacity, dtype=bool)
        self.n_offline = 0
        self.size = 0

    @classmethod
    def from_offline(cls, dataset: Dataset, mask: SubDatasetMask, extra_capacity=0,
                     mode="uniform", include="all"):
        if include == "all":
            keep = np.arange(dataset.n)
        elif include == "part":
            keep = mask.indices
        elif include == "none":
            keep = np.arange(0)
        else:
            raise SsarError(f"unknown buffer init {include!r}")
        buf = cls(dataset.obs_dim, dataset.act_dim, len(keep) + extra_capacity, mode)
        n = len(keep)
        buf.s[:n] = dataset.observations[keep]
        buf.a[:n] = dataset.actions[keep]
        buf.r[:n] = dataset.rewards[keep]
        buf.s2[:n] = dataset.next_observations[keep]
        buf.term[:n] = dataset.terminals[keep].astype(np.float64)
        buf.dhat[:n] = mask.mask[keep]
        buf.n_offline = n
        buf.size = n
        return buf

    def add(self, s, a, r, s2, terminal):
        if self.size >= self.capacity:
            raise SsarError("replay buffer full")
        i = self.size
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.term[i] = float(terminal)
        self.dhat[i] = True          # constraint applies to all online data
        self.online[i] = True
        self.size += 1

    @property
    def n_online(self):
        return self.size - self.n_offline

    def sample(self, batch_size, rng):
        if self.mode == "symmetric" and self.n_offline > 0 and self.n_online > 0:
            k_on = (batch_size + 1) // 2
            k_off = batch_size - k_on
            idx = np.concatenate([
                rng.integers(0, self.n_offline, size=k_off),
                rng.integers(self.n_offline, self.size, size=k_on),
            ])
        else:
            if self.size == 0:
                raise SsarError("sampling from an empty replay buffer")
            idx = rng.integers(0, self.size, size=batch_size)
        return {
            "s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
            "s2": self.s2[idx], "term": self.term[idx], "dhat": self.dhat[idx],
        }


@dataclass
class TrainState:
    """Everything one run mutates: networks, optimizers, schedule, buffer."""

    setup: TrainSetup
    actor: object
    critics: CriticPair
    coeff: CoefficientNet
    schedule: ScheduleState
    adam_actor: object
    adam_critic: object
    adam_coeff: object
    buffer: ReplayBuffer = None
    actor_target: DeterministicHead = None
    iql: IqlPair = None
    log_alpha: np.ndarray = None
    adam_alpha: object = None
    obs_dim: int = 0
    act_dim: int = 0
    action_scale: float = 1.0
    offline_step: int = 0
    online_step: int = 0
    first_update_step: int = -1
    update_counts: dict = field(default_factory=lambda: {"policy": 0, "critic": 0, "beta": 0})
    update_log: list = None
    rngs: dict = field(default_factory=dict)

    @property
    def backbone(self):
        return self.setup.backbone


def build_train_state(setup: TrainSetup, dataset: Dataset, mask: SubDatasetMask,
                      seed: int, action_scale=None) -> TrainState:
    setup.validate()
    obs_dim, act_dim = dataset.obs_dim, dataset.act_dim
    scale = float(action_scale if action_scale is not None
                  else np.abs(dataset.action_high).max())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    if setup.backbone == "cql-sa":
        actor = GaussianHead.create(obs_dim, act_dim, setup.hidden, rng,
                                    action_scale=scale, squashed=True)
        actor_target = None
    else:
        actor = DeterministicHead.create(obs_dim, act_dim, setup.hidden, rng,
                                         action_scale=scale)
        actor_target = DeterministicHead(trunk=clone_params(actor.trunk),
                                         act_dim=act_dim, action_scale=scale,
                                         delta=actor.delta)
    critics = CriticPair.create(obs_dim, act_dim, setup.hidden, rng,
                                tau_polyak=setup.tau_polyak, layernorm=True)
    coeff = CoefficientNet.create(obs_dim, setup.beta_init, rng,
                                  hidden=setup.coeff_hidden)
    state = TrainState(
        setup=setup,
        actor=actor,
        actor_target=actor_target,
        critics=critics,
        coeff=coeff,
        schedule=make_schedule(setup.n_start, setup.n_end, setup.t_inc,
                               setup.total_steps),
        adam_actor=adam_init(param_arrays(actor.trunk), lr=setup.actor_lr),
        adam_critic=adam_init(param_arrays(critics.q1) + param_arrays(critics.q2),
                              lr=setup.critic_lr),
        adam_coeff=adam_init(param_arrays(coeff.net), lr=setup.coeff_lr),
        buffer=ReplayBuffer.from_offline(dataset, mask),
        obs_dim=obs_dim, act_dim=act_dim, action_scale=scale,
        rngs={name: np.random.default_rng(np.random.SeedSequence([seed, k]))
              for k, name in enumerate(("init", "batch", "noise", "env"), start=1)},
    )
    if setup.backbone == "cql-sa":
        state.log_alpha = np.zeros(1)
        state.adam_alpha = adam_init([state.log_alpha], lr=setup.alpha_lr)
    return state


def beta_values(state: TrainState, s):
    """Detached coefficient values for a batch of states."""
    if state.setup.adaptive_coeff:
        return state.coeff.beta(s)
    return np.full(s.shape[0], state.setup.beta_init)


# ---------------------------------------------------------------------------
# loss builders (shared by updates and by the finite-difference suite)
# ---------------------------------------------------------------------------

def importance_logsumexp_np(q_vals, log_densities):
    """Estimate of log integral exp(Q) da from importance samples.

    ``q_vals`` and ``log_densities`` are (B, M); each sample is corrected by
    its own proposal density and the average turns the sum into an
    integral estimate.
    """
    z = q_vals - log_densities
    mx = z.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(z - mx).sum(axis=1, keepdims=True)))[:, 0] - math.log(z.shape[1])


def conservative_action_samples(actor: GaussianHead, s, s2, scale, m, rng):
    """CQL(H) proposal set: m uniform + m policy + m next-state-policy
    actions per state, with per-sample log proposal densities (detached)."""
    b, d = s.shape[0], actor.act_dim
    a_unif = rng.uniform(-scale, scale, size=(b, m, d))
    lp_unif = np.full((b, m), -d * math.log(2.0 * scale))
    a_pol, lp_pol = actor.sample_many(s, rng.standard_normal((b, m, d)))
    a_nxt, lp_nxt = actor.sample_many(s2, rng.standard_normal((b, m, d)))
    actions = np.concatenate([a_unif, a_pol, a_nxt], axis=1)
    log_q = np.concatenate([lp_unif, lp_pol, lp_nxt], axis=1)
    return actions, log_q


def cql_critic_loss_builder(critics: CriticPair, s, a, y, a_ood, log_q, beta_vals, dhat):
    """Eq.-style conservative critic loss over both critics.

    Per critic: masked mean of beta(s) * (sampled logsumexp - Q(s, a_data))
    over sub-dataset states, plus half the mean squared Bellman error over
    the whole batch.  All of y, a_ood, log_q, beta_vals are constants.
    """
    b, m_tot, d = a_ood.shape
    x_data = np.concatenate([s, a], axis=1)
    x_ood = np.concatenate([np.repeat(s, m_tot, axis=0),
                            a_ood.reshape(b * m_tot, d)], axis=1)
    log_norm = math.log(m_tot)
    dhat_f = dhat.astype(np.float64)
    any_dhat = dhat_f.sum() > 0

    def build(tp, leaves_list):
        total = None
        for q_net, leaves in zip((critics.q1, critics.q2), leaves_list):
            q_data = T.reshape(forward_tape(tp, q_net, x_data, leaves), (-1,))
            bell = T.mul(T.mean_(T.square(T.sub(q_data, y))), np.float64(0.5))
            if any_dhat:
                q_ood = T.reshape(forward_tape(tp, q_net, x_ood, leaves), (b, m_tot))
                lse = T.sub(T.logsumexp_rows(T.sub(q_ood, log_q)), np.float64(log_norm))
                cons = T.weighted_mean(T.mul(T.sub(lse, q_data), beta_vals), dhat_f)
                term = T.add(cons, bell)
            else:
                term = bell
            total = term if total is None else T.add(total, term)
        return total

    return build


def cql_policy_loss_builder(actor: GaussianHead, critics, s, z, alpha, bc_actions=None):
    """Soft policy-improvement loss; optional behavior-cloning term for
    sparse tasks.  ``z`` is the fixed reparameterization noise."""

    def build(tp, leaves):
        a_var, logp = actor.sample_tape(tp, s, z, leaves)
        qmin = critics.min_q_tape(tp, s, a_var)
        loss = T.mean_(T.sub(T.mul(logp, np.float64(alpha)), qmin))
        if bc_actions is not None:
            bc = T.mean_(T.sum_(T.square(T.sub(a_var, bc_actions)), axis=1))
            loss = T.add(loss, T.mul(bc, np.float64(0.5)))
        return loss

    return build


def td3_critic_loss_builder(critics: CriticPair, s, a, y):
    x_data = np.concatenate([s, a], axis=1)

    def build(tp, leaves_list):
        total = None
        for q_net, leaves in zip((critics.q1, critics.q2), leaves_list):
            q = T.reshape(forward_tape(tp, q_net, x_data, leaves), (-1,))
            term = T.mean_(T.square(T.sub(q, y)))
            total = term if total is None else T.add(total, term)
        return total

    return build


def td3bc_policy_loss_builder(actor: DeterministicHead, critics, s, a, weights, denom):
    """Negated Eq.-style objective: -(mean Q/denom) + mean(w * ||pi - a||^2)
    with w = membership * beta, denom the detached batch |Q| normalizer."""

    def build(tp, leaves):
        pi = actor.act_tape(tp, s, leaves)
        q = critics.q1_tape(tp, s, pi)
        bc = T.sum_(T.square(T.sub(pi, a)), axis=1)
        return T.add(T.mean_(T.mul(q, np.float64(-1.0 / denom))),
                     T.mean_(T.mul(bc, weights)))

    return build


def _apply_update(nets, adam, build):
    """Build a loss over one or more networks, backprop, Adam step."""
    tp = T.Tape()
    if isinstance(nets, (list, tuple)):
        leaves_list = [leaf_list(tp, n) for n in nets]
        loss = build(tp, leaves_list)
        flat = [lv for ls in leaves_list for lv in ls]
        arrays = [a for n in nets for a in param_arrays(n)]
    else:
        flat = leaf_list(tp, nets)
        loss = build(tp, flat)
        arrays = param_arrays(nets)
    grads = T.grads_for(T.backward(loss), flat)
    adam_step(adam, arrays, grads)
    return float(loss.value)


# ---------------------------------------------------------------------------
# update ops
# ---------------------------------------------------------------------------

def cql_q_update(state: TrainState, batch, beta_vals=None):
    setup = state.setup
    s, a, r, s2, term = batch["s"], batch["a"], batch["r"], batch["s2"], batch["term"]
    if beta_vals is None:
        beta_vals = beta_values(state, s)
    rng = state.rngs["noise"]
    a2, _ = state.actor.sample(s2, rng.standard_normal(s2.shape[0] * state.act_dim)
                               .reshape(s2.shape[0], state.act_dim))
    y = r + setup.gamma * (1.0 - term) * state.critics.target_min(s2, a2)
    a_ood, log_q = conservative_action_samples(
        state.actor, s, s2, state.action_scale, setup.n_cons_samples, rng)
    build = cql_critic_loss_builder(state.critics, s, a, y, a_ood, log_q,
                                    beta_vals, batch["dhat"])
    loss = _apply_update([state.critics.q1, state.critics.q2], state.adam_critic, build)
    state.critics.sync_targets()
    state.update_counts["critic"] += 1
    q1, _ = state.critics.q_values(s, a)
    return {"loss_critic": loss, "q_mean": float(q1.mean()), "target_mean": float(y.mean())}


def cql_policy_update(state: TrainState, batch):
    setup = state.setup
    s = batch["s"]
    rng = state.rngs["noise"]
    z = rng.standard_normal((s.shape[0], state.act_dim))
    alpha = float(np.exp(state.log_alpha[0]))
    bc_actions = batch["a"] if setup.sparse_task else None
    build = cql_policy_loss_builder(state.actor, state.critics, s, z, alpha, bc_actions)
    loss = _apply_update(state.actor.trunk, state.adam_actor, build)

    # temperature step toward target entropy -act_dim (log-alpha gradient
    # is closed form; the policy term is detached)
    _, logp = state.actor.sample(s, z)
    target_entropy = -float(state.act_dim)
    grad_log_alpha = -float(np.mean(logp + target_entropy))
    adam_step(state.adam_alpha, [state.log_alpha], [np.array([grad_log_alpha])])
    state.update_counts["policy"] += 1
    return {"loss_policy": loss, "alpha": alpha}


def td3_q_update(state: TrainState, batch):
    setup = state.setup
    s, a, r, s2, term = batch["s"], batch["a"], batch["r"], batch["s2"], batch["term"]
    rng = state.rngs["noise"]
    scale = state.action_scale
    noise = np.clip(rng.standard_normal((s2.shape[0], state.act_dim))
                    * setup.target_noise * scale,
                    -setup.noise_clip * scale, setup.noise_clip * scale)
    a2 = np.clip(state.actor_target.act(s2) + noise, -scale, scale)
    y = r + setup.gamma * (1.0 - term) * state.critics.target_min(s2, a2)
    build = td3_critic_loss_builder(state.critics, s, a, y)
    loss = _apply_update([state.critics.q1, state.critics.q2], state.adam_critic, build)
    state.update_counts["critic"] += 1
    q1, _ = state.critics.q_values(s, a)
    return {"loss_critic": loss, "q_mean": float(q1.mean()), "target_mean": float(y.mean())}


def td3bc_policy_update(state: TrainState, batch, beta_vals=None):
    s, a = batch["s"], batch["a"]
    if beta_vals is None:
        beta_vals = beta_values(state, s)
    q1_data = mlp_forward(state.critics.q1, np.concatenate([s, a], axis=1))[:, 0]
    denom = max(float(np.abs(q1_data).mean()), 1e-6)
    weights = batch["dhat"].astype(np.float64) * beta_vals
    build = td3bc_policy_loss_builder(state.actor, state.critics, s, a, weights, denom)
    loss = _apply_update(state.actor.trunk, state.adam_actor, build)
    state.critics.sync_targets()
    polyak_update(state.actor_target.trunk, state.actor.trunk, state.setup.tau_polyak)
    state.update_counts["policy"] += 1
    return {"loss_policy": loss, "q_norm_denom": denom}


def coefficient_update(state: TrainState, mask: SubDatasetMask, dataset_like):
    """One Adam step on the coefficient loss over a sub-dataset batch."""
    setup = state.setup
    rng = state.rngs["batch"]
    pick = mask.indices[rng.integers(0, mask.indices.size, size=setup.batch_size)]
    s = dataset_like.observations[pick]
    a = dataset_like.actions[pick]
    stat = beta_statistic(state.actor, s, a, state.schedule.n)
    build = beta_loss_builder(state.coeff, s, stat)
    loss = _apply_update(state.coeff.net, state.adam_coeff, build)
    state.update_counts["beta"] += 1
    return {"loss_beta": loss, "stat_mean": float(stat.mean())}


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _policy_due(state: TrainState, iteration: int, online: bool) -> bool:
    if state.backbone == "cql-sa":
        return True
    delay = state.setup.policy_delay
    if online and state.setup.sparse_task:
        delay = state.setup.online_policy_delay_sparse
    return iteration % delay == 0


def _one_update(state: TrainState, batch, beta_vals, iteration, online, log=None):
    """Algorithm order within an iteration: policy, critic, (offline) beta."""
    diag = {}
    if _policy_due(state, iteration, online):
        if state.backbone == "cql-sa":
            diag.update(cql_policy_update(state, batch))
        else:
            diag.update(td3bc_policy_update(state, batch, beta_vals))
        if log is not None:
            log.append(("policy", iteration))
    if state.backbone == "cql-sa":
        diag.update(cql_q_update(state, batch, beta_vals))
    else:
        diag.update(td3_q_update(state, batch))
    if log is not None:
        log.append(("critic", iteration))
    return diag


def _beta_summary(state: TrainState, dataset: Dataset, rng):
    idx = rng.integers(0, dataset.n, size=min(512, dataset.n))
    vals = beta_values(state, dataset.observations[idx])
    edges = np.linspace(0.0, 1.5 * state.setup.beta_init, 21)
    counts, _ = np.histogram(vals, bins=edges)
    return vals, edges, counts


def _metrics_row(state, step, phase, diag, eval_ret, beta_vals):
    sched = state.schedule
    stat = sched.termination_stat
    return {
        "step": int(step),
        "phase": phase,
        "eval_return_mean": float(eval_ret[0]),
        "eval_return_std": float(eval_ret[1]),
        "q_mean": float(diag.get("q_mean", math.nan)),
        "beta_mean": float(beta_vals.mean()),
        "beta_min": float(beta_vals.min()),
        "beta_max": float(beta_vals.max()),
        "n": float(sched.n),
        "frozen": bool(sched.frozen),
        "termination_stat": None if math.isnan(stat) else float(stat),
        "loss_policy": float(diag.get("loss_policy", math.nan)),
        "loss_critic": float(diag.get("loss_critic", math.nan)),
        "loss_beta": float(diag.get("loss_beta", math.nan)),
    }


def offline_train(setup: TrainSetup, dataset: Dataset, mask: SubDatasetMask,
                  seed: int, env=None, eval_every=5000, eval_episodes=10,
                  instrument=False, state: TrainState = None):
    """Offline phase; returns (state, metrics rows, extras)."""
    if state is None:
        state = build_train_state(setup, dataset, mask, seed)
    if instrument:
        state.update_log = []
    metrics, beta_hists = [], []
    rng_batch = state.rngs["batch"]
    rng_eval = np.random.default_rng(np.random.SeedSequence([seed, 0xB7]))
    diag = {}
    try:
        for i in range(1, setup.total_steps + 1):
            batch = state.buffer.sample(setup.batch_size, rng_batch)
            bvals = beta_values(state, batch["s"])
            diag = _one_update(state, batch, bvals, i, online=False,
                               log=state.update_log)
            if setup.adaptive_coeff:
                diag.update(coefficient_update(state, mask, dataset))
                if state.update_log is not None:
                    state.update_log.append(("beta", i))
            # termination statistic over the full-data batch
            stat = beta_statistic(state.actor, batch["s"], batch["a"], state.schedule.n)
            ema = state.schedule.update_ema(float(stat.mean()))
            schedule_step(state.schedule, i, ema)
            state.offline_step = i

            if env is not None and eval_every and i % eval_every == 0:
                eval_ret = evaluate_policy(env, state.actor, eval_episodes,
                                           seed=(seed, 4, i))
                vals, edges, counts = _beta_summary(state, dataset, rng_eval)
                metrics.append(_metrics_row(state, i, "offline", diag, eval_ret, vals))
                beta_hists.append({"step": int(i), "phase": "offline",
                                   "edges": edges.tolist(),
                                   "counts": counts.tolist()})
    except SsarError as e:
        raise SsarError(f"offline step {state.offline_step + 1}: {e}") from e
    return state, metrics, {"beta_hist": beta_hists}


def _explore_action(state: TrainState, obs, rng):
    scale = state.action_scale
    if state.backbone == "cql-sa":
        z = rng.standard_normal((1, state.act_dim))
        a, _ = state.actor.sample(obs[None, :], z)
        return a[0]
    noise = rng.standard_normal(state.act_dim) * 0.1 * scale
    return np.clip(state.actor.act(obs) + noise, -scale, scale)


def online_finetune(state: TrainState, env, dataset: Dataset, mask: SubDatasetMask,
                    strategy: str, online_steps: int, warmup=5000,
                    anneal_end=400_000, eval_every=2500, eval_episodes=10,
                    seed=None):
    """Online fine-tuning with a frozen, annealed coefficient network.

    Buffer strategies: all (full offline data), half (symmetric offline /
    online sampling), part (sub-dataset only), none (start empty).  The
    first ``warmup`` interaction steps perform no parameter updates.
    """
    setup = state.setup
    if strategy == "half":
        buf = ReplayBuffer.from_offline(dataset, mask, extra_capacity=online_steps + 1,
                                        mode="symmetric", include="all")
    elif strategy in ("all", "part", "none"):
        buf = ReplayBuffer.from_offline(dataset, mask, extra_capacity=online_steps + 1,
                                        mode="uniform", include=strategy)
    else:
        raise SsarError(f"unknown buffer strategy {strategy!r}")
    state.buffer = buf
    if seed is None:
        seed = 0
    rng_env = state.rngs["env"]
    rng_batch = state.rngs["batch"]
    rng_eval = np.random.default_rng(np.random.SeedSequence([seed, 0xB8]))

    env_state = env.reset_state(rng_env)
    obs = env.observe(env_state)
    ep_len = 0
    metrics, beta_hists = [], []
    diag = {}
    try:
        for t in range(1, online_steps + 1):
            a = _explore_action(state, obs, rng_env)
            env_state, r, terminal = env.step_state(env_state, a)
            obs2 = env.observe(env_state)
            ep_len += 1
            timeout = ep_len >= env.max_steps and not terminal
            buf.add(obs, a, r, obs2, terminal)
            if terminal or timeout:
                env_state = env.reset_state(rng_env)
                obs = env.observe(env_state)
                ep_len = 0
            else:
                obs = obs2

            if t > warmup:
                if state.first_update_step < 0:
                    state.first_update_step = t
                batch = buf.sample(setup.batch_size, rng_batch)
                bvals = anneal(beta_values(state, batch["s"]), t, anneal_end)
                diag = _one_update(state, batch, bvals, t - warmup, online=True,
                                   log=state.update_log)
            state.online_step = t

            if eval_every and t % eval_every == 0:
                eval_ret = evaluate_policy(env, state.actor, eval_episodes,
                                           seed=(seed, 5, t))
                vals, edges, counts = _beta_summary(state, dataset, rng_eval)
                vals = anneal(vals, t, anneal_end)
                metrics.append(_metrics_row(state, t, "online", diag, eval_ret, vals))
                beta_hists.append({"step": int(t), "phase": "online",
                                   "edges": edges.tolist(), "counts": counts.tolist()})
    except SsarError as e:
        raise SsarError(f"online step {state.online_step + 1}: {e}") from e
    return state, metrics, {"beta_hist": beta_hists}


# ---------------------------------------------------------------------------
# tabular verification of the value-regularizer / log-likelihood equivalence
# ---------------------------------------------------------------------------

def verify_proposition1(n_instances=1000, max_actions=8, seed=0):
    """Max elementwise gradient gap between the two regularizer forms.

    For random tabular Q rows, a dataset action index, and a temperature,
    compares d/dQ of alpha * (logsumexp(Q / alpha) - Q[a] / alpha) against
    d/dQ of alpha * (-log softmax(Q / alpha)[a]); the two are built from
    different primitive chains so the comparison exercises the identity,
    not one shared formula.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        k = int(rng.integers(2, max_actions + 1))
        q = rng.standard_normal(k)
        a_idx = int(rng.integers(0, k))
        alpha = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))

        tp = T.Tape()
        qv = tp.leaf(q[None, :])
        lse = T.logsumexp_rows(T.mul(qv, np.float64(1.0 / alpha)))
        qa = T.reshape(T.slice_cols(qv, a_idx, a_idx + 1), (-1,))
        loss_a = T.mul(T.sum_(T.sub(lse, T.mul(qa, np.float64(1.0 / alpha)))),
                       np.float64(alpha))
        g_a = T.grads_for(T.backward(loss_a), [qv])[0][0]

        tp = T.Tape()
        qv = tp.leaf(q[None, :])
        e = T.exp(T.mul(qv, np.float64(1.0 / alpha)))
        total = T.sum_(e)
        p_a = T.div(T.sum_(T.slice_cols(e, a_idx, a_idx + 1)), total)
        loss_b = T.mul(T.neg(T.log(p_a)), np.float64(alpha))
        g_b = T.grads_for(T.backward(loss_b), [qv])[0][0]

        worst = max(worst, float(np.abs(g_a - g_b).max()))
    return worst
