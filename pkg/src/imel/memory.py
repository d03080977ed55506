"""Replay reservoir of annotated episodes, which doubles as the context set."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .env import EnvSpec
from .errors import AnnotationError, ShapeError
from .policy import GaussianStats


def _frozen(a, ndim):
    a = np.array(a, dtype=np.float64)
    if ndim == 2 and a.ndim == 1:
        a = a[:, None]
    if a.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: np.ndarray
    behavior: GaussianStats
    reward: float
    mc_return: float | None = None
    advantage: float | None = None
    improved_mean: np.ndarray | None = None


class Episode:
    """One rollout stored column-wise; row ``t`` is one Experience.

    The three annotation columns (returns, advantages, improved means) are
    written exactly once by :meth:`annotate`; every stored array is read-only.
    """

    def __init__(self, states, actions, means, stds, rewards, iteration=0, initial=False):
        self.states = _frozen(states, 2)
        self.actions = _frozen(actions, 2)
        self.means = _frozen(means, 2)
        self.stds = _frozen(stds, 2)
        self.rewards = _frozen(rewards, 1)
        n = len(self.rewards)
        if n == 0:
            raise ShapeError("an episode needs at least one step")
        for name in ("states", "actions", "means", "stds"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"{name} has {len(getattr(self, name))} rows, rewards has {n}")
        if self.means.shape != self.actions.shape or self.stds.shape != self.actions.shape:
            raise ShapeError("behavior stats must match the action shape")
        if np.any(self.stds <= 0):
            raise ValueError("behavior std must be positive")
        self.iteration = int(iteration)
        self.initial = bool(initial)
        self.returns = None
        self.advantages = None
        self.improved_means = None
        self.eta = None

    def __len__(self):
        return len(self.rewards)

    @property
    def annotated(self) -> bool:
        return self.improved_means is not None

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))

    def annotate(self, returns, advantages, improved_means, eta=None) -> "Episode":
        if self.annotated:
            raise AnnotationError("episode is already annotated")
        improved = _frozen(improved_means, 2)
        if improved.shape != self.actions.shape:
            raise ShapeError("improved means must match the action shape")
        if not np.all(np.isfinite(improved)):
            raise ValueError("improved means must be finite")
        returns = _frozen(returns, 1)
        advantages = _frozen(advantages, 1)
        if len(returns) != len(self) or len(advantages) != len(self):
            raise ShapeError("annotation length differs from episode length")
        self.returns, self.advantages, self.improved_means = returns, advantages, improved
        self.eta = None if eta is None else float(eta)
        return self

    def __getitem__(self, t) -> Experience:
        return Experience(
            state=self.states[t],
            action=self.actions[t],
            behavior=GaussianStats(self.means[t], self.stds[t]),
            reward=float(self.rewards[t]),
            mc_return=None if self.returns is None else float(self.returns[t]),
            advantage=None if self.advantages is None else float(self.advantages[t]),
            improved_mean=None if self.improved_means is None else self.improved_means[t],
        )

    @property
    def experiences(self) -> list[Experience]:
        return [self[t] for t in range(len(self))]


class PointSet(NamedTuple):
    """(state, improved mean) pairs as two row-aligned arrays."""

    states: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.states)


class ReplayMemory:
    """Bounded episode store.

    ``capacity`` bounds the number of rollout episodes; initial-context
    episodes are never evicted and do not count against it. ``None`` means
    unbounded.
    """

    def __init__(self, capacity: int | None = 64):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1 or None")
        self.capacity = capacity
        self.episodes: list[Episode] = []
        self._points = None

    def __len__(self):
        return len(self.episodes)

    @property
    def total_points(self) -> int:
        return sum(len(e) for e in self.episodes)

    def push(self, episode: Episode) -> "ReplayMemory":
        if not episode.annotated:
            raise AnnotationError("only annotated episodes can enter the memory")
        self.episodes.append(episode)
        if self.capacity is not None:
            while sum(not e.initial for e in self.episodes) > self.capacity:
                oldest = next(i for i, e in enumerate(self.episodes) if not e.initial)
                del self.episodes[oldest]
        self._points = None
        return self

    def points(self) -> PointSet:
        """All (state, improved mean) pairs in insertion order."""
        if not self.episodes:
            raise ValueError("memory is empty")
        if self._points is None:
            states = np.concatenate([e.states for e in self.episodes])
            targets = np.concatenate([e.improved_means for e in self.episodes])
            states.flags.writeable = False
            targets.flags.writeable = False
            self._points = PointSet(states, targets)
        return self._points

    def units(self, initial_split: int = 1) -> list[np.ndarray]:
        """Row indices into :meth:`points` for each leave-one-out unit.

        Rollout episodes are one unit each; initial-context episodes are cut
        into ``initial_split`` contiguous pseudo-episodes.
        """
        out = []
        offset = 0
        for e in self.episodes:
            idx = np.arange(offset, offset + len(e))
            if e.initial and initial_split > 1:
                out.extend(c for c in np.array_split(idx, min(initial_split, len(e))) if len(c))
            else:
                out.append(idx)
            offset += len(e)
        return out


def initial_context(spec: EnvSpec, c: int, mu0, sigma0, seed) -> ReplayMemory:
    """Synthetic first episode: uniform states in the state box, Gaussian actions.

    The sampled actions double as the improved means of these points.
    """
    if c < 1:
        raise ValueError("initial context needs c >= 1")
    rng = np.random.default_rng(seed)
    states = rng.uniform(spec.state_low, spec.state_high, size=(c, spec.state_dim))
    mu = np.broadcast_to(np.asarray(mu0, dtype=np.float64), (c, spec.action_dim))
    sd = np.broadcast_to(np.asarray(sigma0, dtype=np.float64), (c, spec.action_dim))
    actions = mu + sd * rng.standard_normal((c, spec.action_dim))
    ep = Episode(states, actions, mu, sd, np.zeros(c), iteration=0, initial=True)
    ep.annotate(np.zeros(c), np.zeros(c), actions)
    return ReplayMemory(capacity=None).push(ep)


def push_episode(memory: ReplayMemory, episode: Episode) -> ReplayMemory:
    return memory.push(episode)


def leave_one_out(memory: ReplayMemory, m: int, initial_split: int = 1) -> tuple[PointSet, PointSet]:
    """(context without unit ``m``, unit ``m`` as targets)."""
    units = memory.units(initial_split)
    if len(units) < 2:
        raise ValueError("leave-one-out needs at least two episodes")
    if not 0 <= m < len(units):
        raise IndexError(f"episode index {m} out of range for {len(units)} episodes")
    pts = memory.points()
    target_idx = units[m]
    mask = np.ones(len(pts), dtype=bool)
    mask[target_idx] = False
    return (PointSet(pts.states[mask], pts.targets[mask]),
            PointSet(pts.states[target_idx], pts.targets[target_idx]))


def subsample(points: PointSet, max_points: int, rng) -> PointSet:
    """Uniform subsample without replacement, kept in insertion order."""
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    if len(points) == 0:
        raise ValueError("cannot sample from an empty context")
    if len(points) <= max_points:
        return points
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    idx = np.sort(rng.choice(len(points), size=max_points, replace=False))
    return PointSet(points.states[idx], points.targets[idx])


def sample_context(memory: ReplayMemory, max_points: int, seed) -> PointSet:
    if len(memory) == 0:
        raise ValueError("memory is empty")
    return subsample(memory.points(), max_points, seed)


# -- dump / restore ----------------------------------------------------------

MEMORY_MAGIC = b"IMELMEM 1\n"
_COLUMNS = ("states", "actions", "means", "stds", "rewards", "returns", "advantages", "improved_means")
_SCALAR_COLUMNS = ("rewards", "returns", "advantages")


def dump_memory(memory: ReplayMemory, path) -> None:
    """Episode-major binary dump.

    Layout: magic line ``IMELMEM 1``, one JSON header line, then for each
    episode in order the columns states, actions, means, stds, rewards,
    returns, advantages, improved_means as row-major little-endian float64.
    Missing annotations are stored as NaN.
    """
    header = {"capacity": memory.capacity, "episodes": []}
    chunks = []
    for e in memory.episodes:
        header["episodes"].append({
            "length": len(e), "state_dim": e.states.shape[1], "action_dim": e.actions.shape[1],
            "iteration": e.iteration, "initial": e.initial, "annotated": e.annotated, "eta": e.eta,
        })
        for col in _COLUMNS:
            val = getattr(e, col)
            if val is None:
                val = np.full(len(e) * (e.actions.shape[1] if col == "improved_means" else 1), np.nan)
            chunks.append(np.asarray(val, dtype="<f8").ravel())
    payload = np.concatenate(chunks) if chunks else np.zeros(0, "<f8")
    with open(path, "wb") as fh:
        fh.write(MEMORY_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.astype("<f8").tobytes())


def load_memory(path) -> ReplayMemory:
    data = Path(path).read_bytes()
    if not data.startswith(MEMORY_MAGIC):
        raise ValueError(f"{path}: not an IMELMEM v1 file")
    rest = data[len(MEMORY_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    payload = np.frombuffer(rest[nl + 1:], dtype="<f8").astype(np.float64)
    memory = ReplayMemory(header["capacity"])
    pos = 0
    for info in header["episodes"]:
        n, ds, da = info["length"], info["state_dim"], info["action_dim"]
        cols = {}
        for col in _COLUMNS:
            if col in _SCALAR_COLUMNS:
                cols[col] = payload[pos:pos + n]
                pos += n
            else:
                width = ds if col == "states" else da
                cols[col] = payload[pos:pos + n * width].reshape(n, width)
                pos += n * width
        ep = Episode(cols["states"], cols["actions"], cols["means"], cols["stds"], cols["rewards"],
                     info["iteration"], info["initial"])
        if info["annotated"]:
            ep.annotate(cols["returns"], cols["advantages"], cols["improved_means"], info["eta"])
        memory.episodes.append(ep)
    return memory
