"""Desk-scale continuous-control environments and scripted behavior policies.

Two environments cover the two reward regimes: a torque-limited pendulum
swing-up (dense negative reward, no termination, 200-step episodes) and a
walled point maze with a goal disc (sparse 0/1 reward, terminates on the
goal, 300-step episodes).  Dynamics are deterministic; all stochasticity
comes from explicit generators, so identical seeds reproduce identical
rollouts and byte-identical dataset files.

Scripted controllers provide a clean data-quality axis for offline
datasets: an expert (energy-shaping + PD for the pendulum, waypoint PD for
the maze), a noisy expert, and uniform random actions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .exceptions import DimensionError, SsarError


def _wrap_pi(x):
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


@dataclass
class PendulumAnalog:
    """Torque-limited pendulum; angle 0 is upright, reward is always <= 0."""

    g: float = 10.0
    m: float = 1.0
    l: float = 1.0
    dt: float = 0.05
    max_torque: float = 2.0
    max_speed: float = 8.0
    max_steps: int = 200

    name = "pendulum"
    obs_dim = 3
    act_dim = 1
    sparse = False

    @property
    def action_scale(self):
        return self.max_torque

    def reset_state(self, rng):
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    def observe(self, state):
        th, om = state
        return np.array([math.cos(th), math.sin(th), om])

    def step_state(self, state, action):
        th, om = state
        u = float(np.clip(np.asarray(action).reshape(-1)[0],
                          -self.max_torque, self.max_torque))
        if not (np.isfinite(th) and np.isfinite(om)):
            raise SsarError(f"non-finite pendulum state {state}")
        cost = _wrap_pi(th) ** 2 + 0.1 * om ** 2 + 0.001 * u ** 2
        new_om = om + (3.0 * self.g / (2.0 * self.l) * math.sin(th)
                       + 3.0 / (self.m * self.l ** 2) * u) * self.dt
        new_om = float(np.clip(new_om, -self.max_speed, self.max_speed))
        new_th = th + new_om * self.dt
        return np.array([new_th, new_om]), -cost, False

    def expert_action(self, state, rng=None, sigma=0.0):
        """Energy pumping far from upright, PD stabilization near it."""
        th, om = state
        thw = _wrap_pi(th)
        if abs(thw) < 0.35 and abs(om) < 2.0:
            u = -12.0 * thw - 2.2 * om
        else:
            inertia = self.m * self.l ** 2 / 3.0
            energy = 0.5 * inertia * om ** 2 + 0.5 * self.m * self.g * self.l * math.cos(th)
            target = 0.5 * self.m * self.g * self.l
            direction = math.copysign(1.0, om) if om != 0.0 else math.copysign(1.0, thw)
            u = 1.8 * (target - energy) * direction
        if sigma > 0.0:
            u += sigma * rng.standard_normal()
        return np.array([np.clip(u, -self.max_torque, self.max_torque)])


@dataclass
class PointMazeAnalog:
    """Point mass in a 5x5 walled maze; reward 1 inside the goal disc."""

    size: float = 5.0
    dt: float = 0.1
    accel: float = 4.0
    v_max: float = 1.0
    goal: tuple = (0.5, 4.5)
    goal_radius: float = 0.3
    start: tuple = (0.5, 0.5)
    max_steps: int = 300
    # axis-aligned wall rectangles (x0, x1, y0, y1); one bar forcing a detour
    walls: tuple = ((0.0, 3.5, 2.3, 2.7),)

    name = "pointmaze"
    obs_dim = 4
    act_dim = 2
    sparse = True

    @property
    def action_scale(self):
        return 1.0

    def reset_state(self, rng):
        x = self.start[0] + rng.uniform(-0.2, 0.2)
        y = self.start[1] + rng.uniform(-0.2, 0.2)
        return np.array([x, y, 0.0, 0.0])

    def observe(self, state):
        return np.asarray(state, dtype=np.float64).copy()

    def _blocked(self, x, y):
        if not (0.0 <= x <= self.size and 0.0 <= y <= self.size):
            return True
        for (x0, x1, y0, y1) in self.walls:
            if x0 <= x <= x1 and y0 <= y <= y1:
                return True
        return False

    def step_state(self, state, action):
        x, y, vx, vy = state
        if not np.all(np.isfinite(state)):
            raise SsarError(f"non-finite maze state {state}")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
        if a.shape[0] != 2:
            raise DimensionError(f"maze action must have 2 dims, got {a.shape[0]}")
        vx = float(np.clip(vx + a[0] * self.accel * self.dt, -self.v_max, self.v_max))
        vy = float(np.clip(vy + a[1] * self.accel * self.dt, -self.v_max, self.v_max))
        nx = x + vx * self.dt
        if self._blocked(nx, y):
            nx, vx = x, 0.0
        ny = y + vy * self.dt
        if self._blocked(nx, ny):
            ny, vy = y, 0.0
        dist = math.hypot(nx - self.goal[0], ny - self.goal[1])
        reached = dist <= self.goal_radius
        return np.array([nx, ny, vx, vy]), (1.0 if reached else 0.0), reached

    def expert_action(self, state, rng=None, sigma=0.0):
        """PD control toward region-based waypoints routed around the wall.

        Region membership only advances along the path, so the controller
        cannot flap between targets at a switching boundary.
        """
        x, y, vx, vy = state
        if y < 2.9 and x < 3.9:
            target = (4.3, 1.0)     # reach the corridor entrance
        elif x > 3.9 and y < 4.0:
            target = (4.3, 4.0)     # climb the corridor
        else:
            target = self.goal
        a = np.array([2.0 * (target[0] - x) - 1.2 * vx,
                      2.0 * (target[1] - y) - 1.2 * vy])
        if sigma > 0.0:
            a = a + sigma * rng.standard_normal(2)
        return np.clip(a, -1.0, 1.0)


ENVS = {"pendulum": PendulumAnalog, "pointmaze": PointMazeAnalog}


def make_env(name):
    if name not in ENVS:
        raise SsarError(f"unknown env {name!r}; choices: {sorted(ENVS)}")
    return ENVS[name]()


@dataclass
class BehaviorSpec:
    """Mixture of scripted controllers used to generate an offline dataset."""

    mixture: list          # list of (tag, weight); tag: expert | noisy(s) | random
    episodes: int
    seed: int

    def validate(self):
        if self.episodes <= 0:
            raise ValueError("episode count must be positive")
        weights = [w for _, w in self.mixture]
        if not weights or any(w <= 0 for w in weights):
            raise ValueError("mixture weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {sum(weights)}")
        for tag, _ in self.mixture:
            parse_controller_tag(tag)
        return self


def parse_controller_tag(tag):
    """'expert' | 'random' | 'noisy(sigma)' (alias 'noisy-pd(sigma)')."""
    if tag == "expert" or tag == "expert-pd":
        return ("expert", 0.0)
    if tag == "random":
        return ("random", 0.0)
    for prefix in ("noisy-pd(", "noisy("):
        if tag.startswith(prefix) and tag.endswith(")"):
            return ("noisy", float(tag[len(prefix):-1]))
    raise ValueError(f"unknown controller tag {tag!r}")


def parse_mixture(text):
    """CLI mixture string, e.g. 'expert:0.5,random:0.5'."""
    mixture = []
    for part in text.split(","):
        tag, _, weight = part.strip().rpartition(":")
        if not tag:
            raise ValueError(f"bad mixture entry {part!r}, want tag:weight")
        mixture.append((tag, float(weight)))
    return mixture


def _controller_action(env, kind, sigma, state, rng):
    if kind == "random":
        return rng.uniform(-env.action_scale, env.action_scale, size=env.act_dim)
    if kind == "expert":
        return env.expert_action(state, rng=rng, sigma=0.0)
    return env.expert_action(state, rng=rng, sigma=sigma)


def run_episode(env, action_fn, rng):
    """Roll one episode; returns columnar transition arrays and the return."""
    state = env.reset_state(rng)
    obs, acts, rews, nobs, terms, touts = [], [], [], [], [], []
    for step in range(env.max_steps):
        o = env.observe(state)
        a = np.asarray(action_fn(state, o), dtype=np.float64)
        state, r, terminal = env.step_state(state, a)
        timeout = (step == env.max_steps - 1) and not terminal
        obs.append(o)
        acts.append(a)
        rews.append(r)
        nobs.append(env.observe(state))
        terms.append(terminal)
        touts.append(timeout)
        if terminal:
            break
    return (np.asarray(obs), np.asarray(acts), np.asarray(rews), np.asarray(nobs),
            np.asarray(terms, dtype=bool), np.asarray(touts, dtype=bool),
            float(np.sum(rews)))


def generate_dataset(env, spec: BehaviorSpec, return_info=False):
    """Offline dataset from a controller mixture; seed-deterministic."""
    spec.validate()
    tags = [parse_controller_tag(tag) for tag, _ in spec.mixture]
    weights = np.asarray([w for _, w in spec.mixture])
    cols = ([], [], [], [], [], [])
    info = []
    for ep in range(spec.episodes):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, ep]))
        kind, sigma = tags[rng.choice(len(tags), p=weights)]

        def act(state, _obs):
            return _controller_action(env, kind, sigma, state, rng)

        *episode, ret = run_episode(env, act, rng)
        for c, e in zip(cols, episode):
            c.append(e)
        info.append({"controller": kind, "sigma": sigma, "return": ret,
                     "success": bool((episode[2] > 0).any())})
    ds = Dataset(
        observations=np.concatenate(cols[0]),
        actions=np.concatenate(cols[1]),
        rewards=np.concatenate(cols[2]),
        next_observations=np.concatenate(cols[3]),
        terminals=np.concatenate(cols[4]),
        timeouts=np.concatenate(cols[5]),
        action_low=np.full(env.act_dim, -env.action_scale),
        action_high=np.full(env.act_dim, env.action_scale),
        provenance=f"{env.name} mix={spec.mixture} episodes={spec.episodes} seed={spec.seed}",
    ).validate()
    return (ds, info) if return_info else ds


def evaluate_policy(env, policy, episodes, seed):
    """Mean/std of deterministic-policy returns over fixed-seed episodes.

    ``policy`` is a callable obs -> action or a head exposing ``act``.
    """
    if episodes <= 0:
        raise ValueError("episode count must be positive")
    act = policy.act if hasattr(policy, "act") else policy
    seed_list = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    returns = np.empty(episodes)
    for ep in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([*seed_list, ep, 0xE7A1]))
        state = env.reset_state(rng)
        total = 0.0
        for _ in range(env.max_steps):
            a = np.asarray(act(env.observe(state)), dtype=np.float64)
            state, r, terminal = env.step_state(state, a)
            total += r
            if terminal:
                break
        returns[ep] = total
    return float(returns.mean()), float(returns.std())


def scripted_policy(env, tag, seed=0):
    """Wrap a scripted controller as an observation -> action policy."""
    kind, sigma = parse_controller_tag(tag)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C41]))
    env_ref = env

    class _Scripted:
        def act(self, obs):
            state = _state_from_obs(env_ref, obs)
            return _controller_action(env_ref, kind, sigma, state, rng)

    return _Scripted()


def _state_from_obs(env, obs):
    if isinstance(env, PendulumAnalog):
        return np.array([math.atan2(obs[1], obs[0]), obs[2]])
    return np.asarray(obs, dtype=np.float64)
