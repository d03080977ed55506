"""Experiment configuration and multi-seed orchestration.

Configuration files are TOML with one table per module. Every key is typed
by its default; unknown sections or keys are rejected with the offending
name. Environment variables ``IMEL_<SECTION>_<KEY>`` (upper case) override
file values, and explicit command-line flags override both.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agent import ALGORITHMS, RunConfig, make_agent
from .curves import aggregate_curves, render_svg, write_csv, write_records_csv
from .errors import ConfigError

ENV_PREFIX = "IMEL_"

# file section -> {file key: RunConfig field}
SECTIONS = {
    "env": {"name": "env", "horizon": "horizon"},
    "agent": {
        "algo": "algo", "iterations": "iterations", "sigma": "sigma",
        "episodes_per_iteration": "episodes_per_iteration", "eval_episodes": "eval_episodes",
        "train_epochs": "train_epochs", "learning_rate": "learning_rate", "optimizer": "optimizer",
        "hidden": "hidden",
    },
    "improve": {
        "gamma": "gamma", "lam": "lam", "epsilon": "epsilon", "use_gae": "use_gae",
        "update_sigma": "update_sigma", "literal_returns": "literal_returns",
        "sigma_min_frac": "sigma_min_frac", "value_epochs": "value_epochs", "value_lr": "value_lr",
        "value_hidden": "value_hidden", "value_window": "value_window",
    },
    "memory": {
        "capacity": "capacity", "initial_context": "initial_context", "mu0": "mu0", "sigma0": "sigma0",
        "max_context_points": "max_context_points",
        "act_context_points": "act_context_points", "initial_split": "initial_split",
    },
    "interp": {
        "np_r_dim": "np_r_dim", "np_z_dim": "np_z_dim", "np_sigma": "np_sigma",
        "mki_z_dim": "mki_z_dim", "mki_normalize": "mki_normalize",
    },
    "reinforce": {"lr": "reinforce_lr", "steps": "reinforce_steps"},
}
EXPERIMENT_KEYS = ("seeds", "out", "algos", "checkpoint_interval", "workers")


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs/default"
    algos: tuple = ("imel-mki",)
    checkpoint_interval: int = 0
    workers: int = 1

    def __post_init__(self):
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("experiment.seeds must be nonempty")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("experiment.seeds contains duplicates")
        object.__setattr__(self, "seeds", seeds)
        algos = tuple(self.algos)
        bad = [a for a in algos if a not in ALGORITHMS]
        if not algos or bad:
            raise ConfigError(f"experiment.algos must be a nonempty subset of {ALGORITHMS}, got {list(algos)}")
        object.__setattr__(self, "algos", algos)
        if self.checkpoint_interval < 0:
            raise ConfigError("experiment.checkpoint_interval must be >= 0")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")

    def to_sections(self) -> dict:
        """Nested dict in file layout, suitable for a config snapshot."""
        values = self.run.to_dict()
        out = {sec: {key: _plain(values[name]) for key, name in keys.items()} for sec, keys in SECTIONS.items()}
        out["experiment"] = {"seeds": list(self.seeds), "out": str(self.out), "algos": list(self.algos),
                             "checkpoint_interval": self.checkpoint_interval, "workers": self.workers}
        return out


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


_DEFAULT_RUN = RunConfig()
_DEFAULT_EXP = {"seeds": [0], "out": "", "algos": [""], "checkpoint_interval": 0, "workers": 1}


def _coerce(where: str, value, default):
    """Check ``value`` against the type of ``default``."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, (tuple, list)):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        inner = default[0] if len(default) else 0
        return [_coerce(f"{where}[{i}]", v, inner) for i, v in enumerate(value)]
    raise ConfigError(f"{where}: unsupported value {value!r}")


def _apply(sections: dict, run: dict, exp: dict, origin: str) -> None:
    for sec, table in sections.items():
        if sec == "experiment":
            if not isinstance(table, dict):
                raise ConfigError(f"{origin}: [experiment] must be a table")
            for key, value in table.items():
                if key not in EXPERIMENT_KEYS:
                    raise ConfigError(f"{origin}: unknown key 'experiment.{key}'")
                exp[key] = _coerce(f"experiment.{key}", value, _DEFAULT_EXP[key])
            continue
        if sec not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section '{sec}'")
        if not isinstance(table, dict):
            raise ConfigError(f"{origin}: [{sec}] must be a table")
        for key, value in table.items():
            if key not in SECTIONS[sec]:
                raise ConfigError(f"{origin}: unknown key '{sec}.{key}'")
            name = SECTIONS[sec][key]
            run[name] = _coerce(f"{sec}.{key}", value, getattr(_DEFAULT_RUN, name))


def _parse_env_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def env_overrides(environ=None) -> dict:
    """Collect ``IMEL_<SECTION>_<KEY>`` variables into a section dict.

    Variables whose section part is not a config section (for example the
    build switches) are ignored; an unknown key inside a known section is
    an error.
    """
    environ = os.environ if environ is None else environ
    known = {**{s: SECTIONS[s] for s in SECTIONS}, "experiment": dict.fromkeys(EXPERIMENT_KEYS)}
    out: dict = {}
    for var in sorted(environ):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        for sec in known:
            if rest.startswith(sec + "_"):
                key = rest[len(sec) + 1:]
                if key not in known[sec]:
                    raise ConfigError(f"environment variable {var}: unknown key '{sec}.{key}'")
                out.setdefault(sec, {})[key] = _parse_env_value(environ[var])
                break
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Defaults, then the TOML file, then environment, then ``overrides`` (same layout)."""
    run: dict = {}
    exp: dict = {}
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        _apply(data, run, exp, str(path))
    _apply(env_overrides(environ), run, exp, "environment")
    if overrides:
        _apply(overrides, run, exp, "command line")
    try:
        run_config = RunConfig(**run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if "algos" not in exp:
        exp["algos"] = [run_config.algo]
    return ExperimentConfig(run=run_config, **exp)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for sec, table in config.to_sections().items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in table.items())
        lines.append("")
    return "\n".join(lines)


def prepare_output(out) -> Path:
    """Create ``out`` and check that it is writable."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run_seed(config: RunConfig, seed: int, checkpoint_dir=None, checkpoint_interval=0):
    """Run one replica; returns ``(records, timings)``."""
    agent = make_agent(config, seed)
    records, timings = [], []
    for record in agent.run():
        records.append(record)
        timings.append(record.wall_clock)
        if checkpoint_dir is not None and checkpoint_interval and record.k % checkpoint_interval == 0:
            agent.save(Path(checkpoint_dir) / f"k{record.k:06d}")
    if checkpoint_dir is not None:
        agent.save(Path(checkpoint_dir) / "final")
    return records, timings


def _run_seed_job(args):
    return run_seed(*args)


def run_experiment(config: ExperimentConfig, algo: str | None = None, out=None, log=print) -> dict:
    """Run every seed of one algorithm and write its artifacts to ``out``.

    Writes ``metrics.csv`` (aggregated curve), ``records_seed<s>.csv`` per
    seed, ``timings.csv`` (wall clock, excluded from the deterministic
    files), ``config.toml`` and ``curve.svg``. Returns ``{seed: records}``.
    """
    algo = algo or config.algos[0]
    out = prepare_output(out if out is not None else config.out)
    run = config.run.replace(algo=algo)
    (out / "config.toml").write_text(dump_config(ExperimentConfig(
        run=run, seeds=config.seeds, out=str(out), algos=(algo,),
        checkpoint_interval=config.checkpoint_interval, workers=config.workers)), encoding="utf-8")
    jobs = [(run, s, out / "checkpoints" / f"seed{s}", config.checkpoint_interval) for s in config.seeds]
    started = time.perf_counter()
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_seed_job(job))
            log(f"{algo} seed {job[1]}: final eval mean {results[-1][0][-1].eval_mean:.4g}")
    per_seed = {s: res[0] for s, res in zip(config.seeds, results)}
    for s, records in per_seed.items():
        write_records_csv(records, out / f"records_seed{s}.csv")
    with open(out / "timings.csv", "w", encoding="utf-8") as fh:
        fh.write("seed,k,wall_clock\n")
        for s, (records, timings) in zip(config.seeds, results):
            for r, t in zip(records, timings):
                fh.write(f"{s},{r.k},{t!r}\n")
    curves = aggregate_curves(per_seed)
    write_csv(curves, out / "metrics.csv")
    render_svg({algo: curves}, out / "curve.svg", title=f"{algo} on {run.env}")
    log(f"{algo}: {len(config.seeds)} seeds in {time.perf_counter() - started:.1f}s -> {out / 'metrics.csv'}")
    return per_seed
