"""Deterministic continuous-control environments.

Three small systems stand in for simulator benchmarks. Their constants come
from ``data/envs.toml``; ``step`` is a pure function of ``(state, action)``
plus the step index used for the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigError, EnvDivergence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    state_low: np.ndarray
    state_high: np.ndarray
    max_steps: int

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ConfigError("state_dim and action_dim must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.action_low.shape != (self.action_dim,) or self.state_low.shape != (self.state_dim,):
            raise ConfigError("bound vectors do not match dimensions")
        if np.any(self.action_low >= self.action_high) or np.any(self.state_low >= self.state_high):
            raise ConfigError("lower bounds must be strictly below upper bounds")

    @property
    def action_range(self) -> np.ndarray:
        return self.action_high - self.action_low


@dataclass(frozen=True)
class Transition:
    next_state: np.ndarray
    reward: float
    terminal: bool


def load_registry() -> dict:
    text = resources.files("imel").joinpath("data/envs.toml").read_text()
    return tomllib.loads(text)


class Env:
    """Base class; subclasses implement ``_initial`` and ``_dynamics``."""

    name = ""

    def __init__(self, constants: dict):
        self.constants = dict(constants)
        a_low = np.array(constants["action_low"], dtype=np.float64)
        s_low = np.array(constants["state_low"], dtype=np.float64)
        self.spec = EnvSpec(
            name=self.name,
            state_dim=s_low.size,
            action_dim=a_low.size,
            action_low=a_low,
            action_high=np.array(constants["action_high"], dtype=np.float64),
            state_low=s_low,
            state_high=np.array(constants["state_high"], dtype=np.float64),
            max_steps=int(constants["max_steps"]),
        )

    def reset(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self._initial(rng)

    def step(self, state, action, t: int | None = None) -> Transition:
        """Advance one step; ``t`` (0-based index of this step) enables the horizon."""
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.spec.state_dim,):
            raise ValueError(f"state must have shape ({self.spec.state_dim},)")
        if not np.all(np.isfinite(state)):
            raise EnvDivergence(f"{self.name}: non-finite state {state}")
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        if not np.all(np.isfinite(action)):
            raise ValueError("action must be finite")
        action = np.clip(action, self.spec.action_low, self.spec.action_high)
        next_state, reward, failed = self._dynamics(state, action)
        if not np.all(np.isfinite(next_state)) or not math.isfinite(reward):
            raise EnvDivergence(f"{self.name}: dynamics produced a non-finite value")
        done = failed or (t is not None and t + 1 >= self.spec.max_steps)
        return Transition(next_state, float(reward), bool(done))

    def _initial(self, rng):
        raise NotImplementedError

    def _dynamics(self, state, action):
        raise NotImplementedError


class PointMass1D(Env):
    """Double integrator ``x'' = a`` with cost ``x^2 + c a^2``."""

    name = "point_mass_1d"

    def _initial(self, rng):
        return rng.uniform(self.constants["reset_low"], self.constants["reset_high"])

    def _dynamics(self, state, action):
        dt = self.constants["dt"]
        x, v = state
        a = action[0]
        reward = -x * x - self.constants["action_cost"] * a * a
        return np.array([x + dt * v, v + dt * a]), reward, False


class CartPole(Env):
    """Cart-pole balancing with a continuous force; +1 reward per surviving step."""

    name = "cartpole"

    def _initial(self, rng):
        return rng.uniform(self.constants["reset_low"], self.constants["reset_high"])

    def _dynamics(self, state, action):
        c = self.constants
        x, x_dot, theta, theta_dot = state
        force = c["force_scale"] * action[0]
        total_mass = c["cart_mass"] + c["pole_mass"]
        pml = c["pole_mass"] * c["pole_half_length"]
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        temp = (force + pml * theta_dot ** 2 * sin_t) / total_mass
        theta_acc = (c["gravity"] * sin_t - cos_t * temp) / (
            c["pole_half_length"] * (4.0 / 3.0 - c["pole_mass"] * cos_t ** 2 / total_mass)
        )
        x_acc = temp - pml * theta_acc * cos_t / total_mass
        dt = c["dt"]
        nxt = np.array([
            x + dt * x_dot,
            x_dot + dt * x_acc,
            theta + dt * theta_dot,
            theta_dot + dt * theta_acc,
        ])
        failed = abs(nxt[2]) > c["angle_limit"] or abs(nxt[0]) > c["position_limit"]
        return nxt, 1.0, failed


class Pendulum(Env):
    """Torque-limited swing-up; observation is ``(cos th, sin th, th_dot)``."""

    name = "pendulum"

    def _initial(self, rng):
        theta = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(-self.constants["reset_speed"], self.constants["reset_speed"])
        return np.array([math.cos(theta), math.sin(theta), speed])

    def _dynamics(self, state, action):
        c = self.constants
        cos_t, sin_t, theta_dot = state
        theta = math.atan2(sin_t, cos_t)
        u = action[0]
        reward = -(theta ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2)
        acc = 3.0 * c["gravity"] / (2.0 * c["length"]) * math.sin(theta) + 3.0 / (c["mass"] * c["length"] ** 2) * u
        new_dot = float(np.clip(theta_dot + c["dt"] * acc, -c["max_speed"], c["max_speed"]))
        new_theta = theta + c["dt"] * theta_dot
        return np.array([math.cos(new_theta), math.sin(new_theta), new_dot]), reward, False


ENVIRONMENTS = {cls.name: cls for cls in (PointMass1D, CartPole, Pendulum)}


def make_env(name: str) -> Env:
    """Build a registered environment; its EnvSpec is ``env.spec``."""
    if name not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    registry = load_registry()
    return ENVIRONMENTS[name](registry[name])
