"""Non-parametric policy improvement of stored experiences.

Each experience's behavior mean is moved one policy-gradient step along
``A_t (a_t - mu_t) / sigma^2``; the step size is chosen in closed form so that
the episode-mean KL between improved and behavior policies equals the budget
``epsilon``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, NoImprovementDirection, ShapeError, TrainingDivergence
from .kernels import discounted_cumsum
from .memory import Episode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImproveConfig:
    gamma: float = 0.99
    lam: float = 0.95
    epsilon: float = 0.05
    use_gae: bool = True
    update_sigma: bool = False
    # q_t = sum_{l>=1} gamma^l r_{t+l}, i.e. the first reward discounted as well
    literal_returns: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if not self.epsilon > 0.0:
            raise ConfigError("epsilon must be positive")


class ValueNet:
    """State-value regressor ``V(s) = shift + scale * net(s)``.

    ``shift``/``scale`` track the target statistics; they are re-centred
    before each fit with a compensating change to the output layer, so the
    represented function is unchanged by the re-centring itself.
    """

    def __init__(self, params: nn.NetParams, shift=0.0, scale=1.0):
        if params.out_dim != 1:
            raise ShapeError("value net must have a scalar output")
        self.params = params
        self.shift = float(shift)
        self.scale = float(scale)

    @classmethod
    def create(cls, state_dim, hidden=(64, 64), seed=0) -> "ValueNet":
        return cls(nn.mlp([state_dim, *hidden, 1], seed))

    def __call__(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        return self.shift + self.scale * nn.forward(self.params, states)[:, 0]

    def loss_and_grad(self, states, targets):
        out, cache = nn.forward_with_cache(self.params, states)
        resid = self.shift + self.scale * out[:, 0] - targets
        loss = float(np.mean(resid ** 2))
        upstream = (2.0 * self.scale / len(targets)) * resid[:, None]
        grad, _ = nn.backward(self.params, states, upstream, cache)
        return loss, grad

    def recentred(self, targets) -> "ValueNet":
        shift = float(np.mean(targets))
        scale = max(float(np.std(targets)), 1.0)
        values = self.params.values.copy()
        w, b = self.params.layers(values)[-1]
        ratio = self.scale / scale
        w *= ratio
        b[:] = (self.scale * b + self.shift - shift) / scale
        return ValueNet(self.params.replace(values), shift, scale)


def mc_returns(rewards, gamma, literal=False) -> np.ndarray:
    """Discounted reward-to-go; ``rewards[t]`` is the reward that follows action t."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size == 0:
        raise ValueError("rewards must be a nonempty 1-d sequence")
    q = discounted_cumsum(rewards, gamma)
    return gamma * q if literal else q


def fit_value(value_net: ValueNet, states, targets, epochs: int, opt_state: nn.OptimizerState):
    """Full-batch squared-error regression. Returns ``(net, opt_state, losses)``."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64)
    if len(states) != len(targets):
        raise ShapeError("states and targets differ in length")
    if epochs <= 0:
        return value_net, opt_state, []
    net = value_net.recentred(targets)
    losses = []
    for _ in range(epochs):
        loss, grad = net.loss_and_grad(states, targets)
        if not np.isfinite(loss):
            raise TrainingDivergence("value loss is not finite")
        losses.append(loss)
        params, opt_state = nn.optimizer_step(net.params, grad, opt_state)
        net = ValueNet(params, net.shift, net.scale)
    final = float(np.mean((net(states) - targets) ** 2))
    if not np.isfinite(final):
        raise TrainingDivergence("value loss is not finite")
    losses.append(final)
    return net, opt_state, losses


def advantages(states, rewards, value_net, config: ImproveConfig) -> np.ndarray:
    """Baseline-corrected returns, optionally by GAE; episodes end with V = 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if value_net is None:
        values = np.zeros(len(rewards))
    else:
        values = value_net(states)
    if len(values) != len(rewards):
        raise ShapeError("states and rewards differ in length")
    if not config.use_gae:
        return mc_returns(rewards, config.gamma, config.literal_returns) - values
    next_values = np.append(values[1:], 0.0)
    deltas = rewards + config.gamma * next_values - values
    return discounted_cumsum(deltas, config.gamma * config.lam)


def _step_terms(adv, actions, means, stds):
    adv = np.asarray(adv, dtype=np.float64)
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    stds = np.broadcast_to(np.asarray(stds, dtype=np.float64), means.shape)
    if actions.shape != means.shape or adv.shape != (len(means),):
        raise ShapeError("advantages, actions and means do not line up")
    return adv, actions, means, stds


def step_size_eta(adv, actions, means, stds, epsilon, T=None) -> float:
    """Step size making the mean equal-sigma KL over ``T`` steps exactly ``epsilon``."""
    adv, actions, means, stds = _step_terms(adv, actions, means, stds)
    T = len(adv) if T is None else T
    denom = float(np.sum(adv[:, None] ** 2 * (actions - means) ** 2 / stds ** 6))
    if not denom > 0.0 or not np.isfinite(denom):
        raise NoImprovementDirection("all advantage-weighted scores are zero")
    return float(np.sqrt(2.0 * T * epsilon / denom))


def improved_mean(means, stds, actions, adv, eta) -> np.ndarray:
    adv, actions, means, stds = _step_terms(adv, actions, means, stds)
    return means + eta * adv[:, None] * (actions - means) / stds ** 2


def improved_sigma(stds, means, actions, eta) -> np.ndarray:
    """Per-step std update; carries no advantage factor."""
    stds = np.asarray(stds, dtype=np.float64)
    diff2 = (np.asarray(actions, dtype=np.float64) - np.asarray(means, dtype=np.float64)) ** 2
    return stds + eta * (diff2 - stds ** 2) / stds ** 3


def aggregate_sigma(step_sigmas, sigma_min) -> np.ndarray:
    """Episode mean of per-step stds, floored at ``sigma_min`` per dimension."""
    sig = np.mean(np.atleast_2d(step_sigmas), axis=0)
    if np.any(sig <= 0.0):
        log.warning("sigma update went non-positive (%s); clamping to %s", sig, sigma_min)
    return np.maximum(sig, sigma_min)


def annotate_episode(episode: Episode, value_net, config: ImproveConfig) -> tuple[Episode, float]:
    """Write returns, advantages and improved means into ``episode``.

    When there is no improvement direction the improved means equal the
    behavior means and the returned step size is 0.
    """
    q = mc_returns(episode.rewards, config.gamma, config.literal_returns)
    adv = advantages(episode.states, episode.rewards, value_net, config)
    try:
        eta = step_size_eta(adv, episode.actions, episode.means, episode.stds, config.epsilon)
    except NoImprovementDirection:
        log.info("episode %d has no improvement direction; storing behavior means", episode.iteration)
        eta = 0.0
        mu_star = np.array(episode.means)
    else:
        mu_star = improved_mean(episode.means, episode.stds, episode.actions, adv, eta)
    episode.annotate(q, adv, mu_star, eta)
    return episode, eta
