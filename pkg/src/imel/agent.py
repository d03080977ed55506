"""The IMeL outer loop, its leave-one-out trainer, and a REINFORCE comparator.

Each IMeL iteration trains the interpolator on the current memory, acts with
the interpolation over that memory, improves the new episode's means in
closed form, and stores it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import improve, nn
from .env import Env, make_env
from .errors import ConfigError
from .memory import (Episode, PointSet, ReplayMemory, dump_memory, initial_context, leave_one_out,
                     load_memory, sample_context, subsample)
from .mki import MkiModel
from .neural_process import NpModel
from .policy import GaussianStats, sample

log = logging.getLogger(__name__)

ALGORITHMS = ("imel-np", "imel-mki", "reinforce")
STREAMS = ("env", "policy", "init", "train_order", "z", "context", "eval")


@dataclass(frozen=True)
class RunConfig:
    # env / loop
    env: str = "point_mass_1d"
    algo: str = "imel-mki"
    iterations: int = 150
    horizon: int = 100
    sigma: float = 0.3
    episodes_per_iteration: int = 1
    eval_episodes: int = 5
    # improvement
    gamma: float = 0.99
    lam: float = 0.95
    epsilon: float = 0.05
    use_gae: bool = True
    update_sigma: bool = False
    literal_returns: bool = False
    sigma_min_frac: float = 0.05
    value_epochs: int = 50
    value_lr: float = 1e-2
    value_hidden: tuple = (64, 64)
    value_window: int = 8
    # memory
    capacity: int = 64
    initial_context: int = 32
    mu0: float = 0.0
    sigma0: float = 0.0
    max_context_points: int = 256
    act_context_points: int = 0
    initial_split: int = 4
    # interpolator training
    train_epochs: int = 1
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    hidden: tuple = (64, 64)
    np_r_dim: int = 32
    np_z_dim: int = 32
    np_sigma: bool = False
    mki_z_dim: int = 0
    mki_normalize: bool = True
    # comparator
    reinforce_lr: float = 1e-3
    reinforce_steps: int = 1

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        for name in ("iterations", "horizon", "episodes_per_iteration", "eval_episodes",
                     "initial_context", "max_context_points", "initial_split", "np_r_dim", "np_z_dim",
                     "value_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("train_epochs", "value_epochs", "capacity", "mki_z_dim", "reinforce_steps",
                     "act_context_points"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("sigma", "sigma_min_frac"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("sigma0", "learning_rate", "value_lr", "reinforce_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "value_hidden", tuple(int(h) for h in self.value_hidden))
        self.improve_config()

    def improve_config(self) -> improve.ImproveConfig:
        return improve.ImproveConfig(self.gamma, self.lam, self.epsilon, self.use_gae,
                                     self.update_sigma, self.literal_returns)

    def replace(self, **changes) -> "RunConfig":
        values = self.to_dict()
        values.update(changes)
        return RunConfig(**values)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class IterationRecord:
    k: int
    episode_return: float
    eval_mean: float
    eval_p20: float
    eval_p80: float
    eval_returns: tuple
    eta: float
    sigma: float
    train_loss: tuple
    model_hash: str
    wall_clock: float = field(default=0.0, compare=False)

    @property
    def train_loss_mean(self) -> float:
        return float(np.mean(self.train_loss)) if self.train_loss else 0.0


def make_streams(seed: int) -> dict:
    """Independent named generators derived from one integer seed."""
    return {name: np.random.default_rng([int(seed), i]) for i, name in enumerate(STREAMS)}


def params_hash(values) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def rollout(env: Env, policy_fn, T: int, seed, rng=None, deterministic=False, iteration=0) -> Episode:
    """Run one episode of at most ``T`` steps.

    ``policy_fn(state)`` returns GaussianStats; the unclipped sampled action
    and the exact stats it was drawn from are stored.
    """
    state = env.reset(seed)
    cols = {k: [] for k in ("states", "actions", "means", "stds", "rewards")}
    horizon = min(T, env.spec.max_steps)
    for t in range(horizon):
        stats = policy_fn(state)
        action = sample(stats, rng, deterministic=deterministic)
        tr = env.step(state, action, t)
        cols["states"].append(state)
        cols["actions"].append(action)
        cols["means"].append(stats.mean)
        cols["stds"].append(stats.std)
        cols["rewards"].append(tr.reward)
        state = tr.next_state
        if tr.terminal or t + 1 >= T:
            break
    return Episode(**{k: np.array(v) for k, v in cols.items()}, iteration=iteration)


def train_leave_one_out(model, memory: ReplayMemory, epochs: int, opt_state: nn.OptimizerState, *,
                        order_rng, context_rng, z_rng=None, max_context_points=256, initial_split=4):
    """Predict each episode's improved means from all other episodes.

    One optimizer step per (epoch, held-out episode). Returns
    ``(model, opt_state, trace)`` with ``trace`` a list of
    ``(epoch, unit, loss)``.
    """
    units = memory.units(initial_split)
    trace = []
    if len(units) < 2:
        log.warning("leave-one-out training needs two episodes; skipping")
        return model, opt_state, trace
    for epoch in range(epochs):
        for m in order_rng.permutation(len(units)):
            context, target = leave_one_out(memory, int(m), initial_split)
            context = subsample(context, max_context_points, context_rng)
            loss, grad = model.loss_and_grad(context, target, z_rng)
            values, opt_state = nn.optimizer_step(model.flat(), grad, opt_state)
            model = model.with_flat(values)
            trace.append((epoch, int(m), float(loss)))
    return model, opt_state, trace


def _percentiles(returns):
    r = np.asarray(returns, dtype=np.float64)
    return float(np.mean(r)), float(np.percentile(r, 20)), float(np.percentile(r, 80))


class _Agent:
    """Shared bookkeeping: env, streams, value baseline and evaluation."""

    def __init__(self, config: RunConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.env = make_env(config.env)
        self.spec = self.env.spec
        self.rngs = make_streams(seed)
        self.k = 0
        self.sigma = np.full(self.spec.action_dim, float(config.sigma))
        self.sigma_min = config.sigma_min_frac * self.spec.action_range
        self.eval_seeds = [int(s) for s in self.rngs["eval"].integers(0, 2 ** 31, config.eval_episodes)]
        self.value_net = improve.ValueNet.create(self.spec.state_dim, config.value_hidden, self.rngs["init"])
        self.value_opt = nn.OptimizerState.create(self.value_net.params.size, config.value_lr)
        self._value_history = []

    def _env_seed(self) -> int:
        return int(self.rngs["env"].integers(0, 2 ** 31))

    def _fit_value(self, episodes):
        """Fit the baseline on ``episodes`` plus earlier ones, up to ``value_window`` in total."""
        self._value_history = (self._value_history + list(episodes))[-self.config.value_window:]
        episodes = self._value_history
        states = np.concatenate([e.states for e in episodes])
        q = np.concatenate([e.returns for e in episodes])
        self.value_net, self.value_opt, _ = improve.fit_value(
            self.value_net, states, q, self.config.value_epochs, self.value_opt)

    def evaluate(self, policy_fn, seeds=None) -> list[float]:
        seeds = self.eval_seeds if seeds is None else seeds
        return [rollout(self.env, policy_fn, self.config.horizon, s, deterministic=True).episode_return
                for s in seeds]

    def _state(self) -> dict:
        config = self.config.to_dict()
        for name in ("hidden", "value_hidden"):
            config[name] = list(config[name])
        return {"algo": self.config.algo, "seed": self.seed, "k": self.k, "sigma": self.sigma.tolist(),
                "config": config}

    def run(self, iterations=None):
        for _ in range(self.config.iterations if iterations is None else iterations):
            yield self.iterate()

    def _record(self, episodes, eval_returns, eta, losses, model_hash, started) -> IterationRecord:
        mean, p20, p80 = _percentiles(eval_returns)
        return IterationRecord(
            k=self.k,
            episode_return=float(np.mean([e.episode_return for e in episodes])),
            eval_mean=mean, eval_p20=p20, eval_p80=p80, eval_returns=tuple(eval_returns),
            eta=float(eta), sigma=float(np.mean(self.sigma)), train_loss=tuple(losses),
            model_hash=model_hash, wall_clock=time.perf_counter() - started,
        )


class ImelAgent(_Agent):
    """IMeL with either interpolator; ``config.algo`` picks NP or MKI."""

    def __init__(self, config: RunConfig, seed: int):
        if config.algo not in ("imel-np", "imel-mki"):
            raise ConfigError(f"ImelAgent cannot run {config.algo!r}")
        super().__init__(config, seed)
        spec = self.spec
        init_rng = self.rngs["init"]
        if config.algo == "imel-np":
            self.model = NpModel.create(spec.state_dim, spec.action_dim, config.np_r_dim, config.np_z_dim,
                                        config.hidden, init_rng)
        else:
            self.model = MkiModel.create(spec.state_dim, config.mki_z_dim or None, config.hidden, init_rng,
                                         config.mki_normalize)
        self.opt = nn.OptimizerState.create(self.model.flat().size, config.learning_rate, config.optimizer)
        sigma0 = config.sigma0 or config.sigma
        self.memory = initial_context(spec, config.initial_context, config.mu0, sigma0, init_rng)
        self.memory.capacity = config.capacity or None

    def policy(self, context: PointSet | None = None):
        """Behavior policy: interpolation over ``context``.

        The default context is the whole memory, or a subsample of
        ``act_context_points`` points when that is nonzero.
        """
        if context is None:
            limit = self.config.act_context_points or self.memory.total_points
            context = sample_context(self.memory, limit, self.rngs["context"])
        predict = self.model.predictor(context)
        use_np_sigma = self.config.algo == "imel-np" and self.config.np_sigma

        def policy_fn(state):
            mean, std = predict(state)
            if use_np_sigma:
                return GaussianStats(mean, np.maximum(std, self.sigma_min))
            return GaussianStats(mean, self.sigma)
        return policy_fn

    def iterate(self) -> IterationRecord:
        started = time.perf_counter()
        cfg = self.config
        self.k += 1
        self.model, self.opt, trace = train_leave_one_out(
            self.model, self.memory, cfg.train_epochs, self.opt,
            order_rng=self.rngs["train_order"], context_rng=self.rngs["context"], z_rng=self.rngs["z"],
            max_context_points=cfg.max_context_points, initial_split=cfg.initial_split)
        model_hash = params_hash(self.model.flat())
        policy_fn = self.policy()

        episodes, etas = [], []
        icfg = cfg.improve_config()
        for _ in range(cfg.episodes_per_iteration):
            ep = rollout(self.env, policy_fn, cfg.horizon, self._env_seed(), self.rngs["policy"], iteration=self.k)
            ep, eta = improve.annotate_episode(ep, self.value_net, icfg)
            episodes.append(ep)
            etas.append(eta)
        if cfg.update_sigma:
            step_sigmas = np.concatenate([
                improve.improved_sigma(e.stds, e.means, e.actions, eta) for e, eta in zip(episodes, etas)])
            self.sigma = improve.aggregate_sigma(step_sigmas, self.sigma_min)
        self._fit_value(episodes)
        for ep in episodes:
            self.memory.push(ep)

        eval_returns = self.evaluate(policy_fn)
        return self._record(episodes, eval_returns, np.mean(etas), [t[2] for t in trace], model_hash, started)

    # -- checkpoints --------------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        dump_memory(self.memory, d / "memory.bin")
        save_model(self.model, d / "model.snap")
        save_value_net(self.value_net, d / "value.snap")
        (d / "state.json").write_text(json.dumps(
            self._state(), indent=1))

    def load(self, directory) -> "ImelAgent":
        d = Path(directory)
        self.memory = load_memory(d / "memory.bin")
        self.model = load_model(d / "model.snap")
        self.value_net = load_value_net(d / "value.snap")
        state = json.loads((d / "state.json").read_text())
        self.k = state["k"]
        self.sigma = np.array(state["sigma"])
        return self


class ReinforceAgent(_Agent):
    """Gaussian-policy REINFORCE with the same baseline, GAE and sample budget."""

    def __init__(self, config: RunConfig, seed: int):
        super().__init__(config, seed)
        net = nn.mlp([self.spec.state_dim, *config.hidden, self.spec.action_dim], self.rngs["init"])
        # Shrink the output layer so the initial mean is near zero everywhere,
        # the same starting point as IMeL's initial context (mu0 = 0).
        values = net.values.copy()
        w, b = net.layers(values)[-1]
        w *= 0.01
        self.policy_net = net.replace(values)
        self.opt = nn.OptimizerState.create(self.policy_net.size, config.reinforce_lr, config.optimizer)

    def policy(self):
        params = self.policy_net

        def policy_fn(state):
            return GaussianStats(nn.forward(params, state), self.sigma)
        return policy_fn

    def iterate(self) -> IterationRecord:
        started = time.perf_counter()
        cfg = self.config
        self.k += 1
        model_hash = params_hash(self.policy_net.values)
        policy_fn = self.policy()
        icfg = cfg.improve_config()
        episodes = []
        for _ in range(cfg.episodes_per_iteration):
            ep = rollout(self.env, policy_fn, cfg.horizon, self._env_seed(), self.rngs["policy"], iteration=self.k)
            q = improve.mc_returns(ep.rewards, icfg.gamma, icfg.literal_returns)
            adv = improve.advantages(ep.states, ep.rewards, self.value_net, icfg)
            ep.annotate(q, adv, ep.means)
            episodes.append(ep)
        states = np.concatenate([e.states for e in episodes])
        actions = np.concatenate([e.actions for e in episodes])
        adv = np.concatenate([e.advantages for e in episodes])
        losses = []
        for _ in range(cfg.reinforce_steps):
            mu, cache = nn.forward_with_cache(self.policy_net, states)
            score = (actions - mu) / self.sigma ** 2
            losses.append(float(-np.mean(adv * np.sum(-0.5 * ((actions - mu) / self.sigma) ** 2, axis=1))))
            upstream = -(adv[:, None] * score) / len(adv)
            grad, _ = nn.backward(self.policy_net, states, upstream, cache)
            self.policy_net, self.opt = nn.optimizer_step(self.policy_net, grad, self.opt)
        self._fit_value(episodes)
        eval_returns = self.evaluate(policy_fn)
        return self._record(episodes, eval_returns, 0.0, losses, model_hash, started)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        nn.save_snapshot(d / "model.snap", {"policy": self.policy_net}, meta={"type": "reinforce"})
        save_value_net(self.value_net, d / "value.snap")
        (d / "state.json").write_text(json.dumps(
            self._state(), indent=1))

    def load(self, directory) -> "ReinforceAgent":
        d = Path(directory)
        nets, _, _ = nn.load_snapshot(d / "model.snap")
        self.policy_net = nets["policy"]
        self.value_net = load_value_net(d / "value.snap")
        state = json.loads((d / "state.json").read_text())
        self.k = state["k"]
        self.sigma = np.array(state["sigma"])
        return self


def make_agent(config: RunConfig, seed: int):
    if config.algo == "reinforce":
        return ReinforceAgent(config, seed)
    return ImelAgent(config, seed)


def load_agent(directory):
    """Rebuild an agent, including its configuration, from a checkpoint directory."""
    state = json.loads((Path(directory) / "state.json").read_text())
    config = RunConfig(**state["config"])
    return make_agent(config, state["seed"]).load(directory)


def reinforce_baseline_run(config: RunConfig, seed: int = 0) -> list[IterationRecord]:
    return list(ReinforceAgent(config.replace(algo="reinforce"), seed).run())


# -- model snapshots -------------------------------------------------------

def save_model(model, path) -> None:
    if isinstance(model, NpModel):
        meta = {"type": "np", "x_dim": model.x_dim, "y_dim": model.y_dim, "z_dim": model.z_dim}
        nn.save_snapshot(path, model.networks(), meta=meta)
    else:
        nn.save_snapshot(path, model.networks(), {"kernel_factor": model.kernel_factor},
                         meta={"type": "mki", "normalize": model.normalize})


def load_model(path):
    nets, arrays, meta = nn.load_snapshot(path)
    if meta.get("type") == "np":
        return NpModel(nets["encoder"], nets["latent"], nets["decoder"], meta["x_dim"], meta["y_dim"], meta["z_dim"])
    if meta.get("type") == "mki":
        return MkiModel(nets["features"], arrays["kernel_factor"], meta["normalize"])
    raise ValueError(f"{path}: unknown model type {meta.get('type')!r}")


def save_value_net(net: improve.ValueNet, path) -> None:
    nn.save_snapshot(path, {"value": net.params}, meta={"shift": net.shift, "scale": net.scale})


def load_value_net(path) -> improve.ValueNet:
    nets, _, meta = nn.load_snapshot(path)
    return improve.ValueNet(nets["value"], meta["shift"], meta["scale"])
