"""Offline dataset storage, trajectory segmentation, and sub-dataset selection.

Datasets are columnar float64 arrays plus terminal/timeout flags; they are
immutable after load.  A ``SubDatasetMask`` marks the transitions that the
selective-regularization losses may constrain; return- and success-based
selection keep whole trajectories, advantage-based selection works at the
transition level.

File format (``.ssardata``): magic "SSARDATA", version u32 LE, u32 header
length + UTF-8 JSON header {obs_dim, act_dim, n, action_low, action_high,
provenance}, then columns in order observations, actions, rewards,
next_observations as row-major little-endian float64, then terminals and
timeouts as u8.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataFormatError, DimensionError, EmptySelectionError

MAGIC = b"SSARDATA"
VERSION = 1


@dataclass
class Dataset:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    terminals: np.ndarray
    timeouts: np.ndarray
    action_low: np.ndarray
    action_high: np.ndarray
    provenance: str = ""

    @property
    def n(self):
        return self.rewards.shape[0]

    @property
    def obs_dim(self):
        return self.observations.shape[1]

    @property
    def act_dim(self):
        return self.actions.shape[1]

    def validate(self):
        n = self.n
        if n <= 0:
            raise DimensionError("dataset is empty")
        for name in ("observations", "actions", "next_observations", "terminals", "timeouts"):
            col = getattr(self, name)
            if col.shape[0] != n:
                raise DimensionError(f"column {name} has length {col.shape[0]}, expected {n}")
        for name in ("observations", "actions", "rewards", "next_observations"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataFormatError(f"non-finite values in column {name}")
        if np.any(self.terminals & self.timeouts):
            raise DataFormatError("terminal and timeout both set on some transition")
        eps = 1e-9
        if np.any(self.actions < self.action_low - eps) or \
           np.any(self.actions > self.action_high + eps):
            raise DataFormatError("actions outside the action box")
        return self


@dataclass
class Trajectory:
    start: int
    stop: int           # exclusive
    ret: float          # undiscounted return, exact sum of member rewards
    success: bool

    @property
    def length(self):
        return self.stop - self.start


@dataclass
class SubDatasetMask:
    mask: np.ndarray            # bool per transition
    mode: str                   # return-threshold | advantage | success-trajectory
    params: dict = field(default_factory=dict)
    indices: np.ndarray = None  # materialized for O(1) sub-dataset sampling

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.flatnonzero(self.mask)
        if self.indices.size == 0:
            raise EmptySelectionError(
                f"{self.mode} selection matched no transitions "
                f"(params: {self.params})")

    @property
    def count(self):
        return int(self.indices.size)


def segment_trajectories(ds: Dataset):
    """Partition [0, n) at terminal/timeout boundaries and compute returns."""
    ends = np.flatnonzero(ds.terminals | ds.timeouts)
    out = []
    start = 0
    for e in ends:
        stop = int(e) + 1
        r = float(ds.rewards[start:stop].sum())
        out.append(Trajectory(start=start, stop=stop, ret=r,
                              success=bool((ds.rewards[start:stop] > 0).any())))
        start = stop
    if start < ds.n:
        r = float(ds.rewards[start:].sum())
        out.append(Trajectory(start=start, stop=ds.n, ret=r,
                              success=bool((ds.rewards[start:] > 0).any())))
    return out


def select_by_return(ds: Dataset, g_t: float, trajectories=None) -> SubDatasetMask:
    """Transitions of trajectories with return strictly above ``g_t``."""
    trajectories = trajectories if trajectories is not None else segment_trajectories(ds)
    mask = np.zeros(ds.n, dtype=bool)
    for tr in trajectories:
        if tr.ret > g_t:
            mask[tr.start:tr.stop] = True
    if not mask.any():
        returns = [tr.ret for tr in trajectories]
        raise EmptySelectionError(
            f"no trajectory return exceeds G_T={g_t} "
            f"(max return {max(returns):.6g}); lower the threshold")
    return SubDatasetMask(mask=mask, mode="return-threshold", params={"g_t": float(g_t)})


def select_by_advantage(ds: Dataset, q_fn, v_fn, batch=8192) -> SubDatasetMask:
    """Transitions with Q(s, a) - V(s) strictly positive (state-level)."""
    mask = np.zeros(ds.n, dtype=bool)
    for lo in range(0, ds.n, batch):
        hi = min(lo + batch, ds.n)
        adv = q_fn(ds.observations[lo:hi], ds.actions[lo:hi]) - v_fn(ds.observations[lo:hi])
        mask[lo:hi] = adv > 0.0
    if not mask.any():
        raise EmptySelectionError(
            "no transition has positive advantage; value pretraining failed")
    return SubDatasetMask(mask=mask, mode="advantage", params={})


def select_by_success(ds: Dataset, trajectories=None) -> SubDatasetMask:
    """Transitions of trajectories flagged successful (sparse-reward tasks)."""
    trajectories = trajectories if trajectories is not None else segment_trajectories(ds)
    mask = np.zeros(ds.n, dtype=bool)
    for tr in trajectories:
        if tr.success:
            mask[tr.start:tr.stop] = True
    if not mask.any():
        raise EmptySelectionError("no successful trajectory in the dataset")
    return SubDatasetMask(mask=mask, mode="success-trajectory", params={})


def all_true_mask(ds: Dataset) -> SubDatasetMask:
    """Uniform regularization: the sub-dataset is the whole dataset."""
    return SubDatasetMask(mask=np.ones(ds.n, dtype=bool),
                          mode="return-threshold", params={"g_t": -np.inf})


# ---------------------------------------------------------------------------
# binary persistence
# ---------------------------------------------------------------------------

def save_dataset(path, ds: Dataset):
    ds.validate()
    header = {
        "obs_dim": int(ds.obs_dim),
        "act_dim": int(ds.act_dim),
        "n": int(ds.n),
        "action_low": [float(x) for x in np.atleast_1d(ds.action_low)],
        "action_high": [float(x) for x in np.atleast_1d(ds.action_high)],
        "provenance": ds.provenance,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        for col in (ds.observations, ds.actions, ds.rewards, ds.next_observations):
            f.write(np.ascontiguousarray(col, dtype="<f8").tobytes())
        f.write(ds.terminals.astype(np.uint8).tobytes())
        f.write(ds.timeouts.astype(np.uint8).tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        buf = f.read()
    off = 0

    def need(count, what):
        nonlocal off
        if off + count > len(buf):
            raise DataFormatError(
                f"truncated dataset reading {what}: expected {off + count} bytes, "
                f"file has {len(buf)}", offset=off)
        piece = buf[off:off + count]
        off += count
        return piece

    if need(8, "magic") != MAGIC:
        raise DataFormatError("bad magic, not a dataset file", offset=0)
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != VERSION:
        raise DataFormatError(f"unsupported dataset version {version}", offset=8)
    (hlen,) = struct.unpack("<I", need(4, "header length"))
    header_off = off
    try:
        header = json.loads(need(hlen, "header").decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise DataFormatError(f"unparseable header: {e}", offset=header_off)
    try:
        obs_dim = int(header["obs_dim"])
        act_dim = int(header["act_dim"])
        n = int(header["n"])
        action_low = np.asarray(header["action_low"], dtype=np.float64)
        action_high = np.asarray(header["action_high"], dtype=np.float64)
        provenance = str(header.get("provenance", ""))
    except KeyError as e:
        raise DataFormatError(f"header missing field {e}", offset=header_off)

    def column(rows, cols, what):
        nonlocal off
        col_off = off
        raw = need(rows * cols * 8, what)
        arr = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy() if cols > 1 \
            else np.frombuffer(raw, dtype="<f8").copy()
        bad = np.flatnonzero(~np.isfinite(arr.reshape(-1)))
        if bad.size:
            raise DataFormatError(f"non-finite value in column {what}",
                                  offset=col_off + int(bad[0]) * 8)
        return arr

    observations = column(n, obs_dim, "observations")
    actions = column(n, act_dim, "actions")
    rewards = column(n, 1, "rewards")
    next_observations = column(n, obs_dim, "next_observations")
    terminals = np.frombuffer(need(n, "terminals"), dtype=np.uint8).astype(bool)
    timeouts = np.frombuffer(need(n, "timeouts"), dtype=np.uint8).astype(bool)
    if off != len(buf):
        raise DataFormatError("trailing bytes after dataset body", offset=off)
    ds = Dataset(observations=observations, actions=actions, rewards=rewards,
                 next_observations=next_observations, terminals=terminals,
                 timeouts=timeouts, action_low=action_low, action_high=action_high,
                 provenance=provenance)
    return ds.validate()
