"""Command-line entry point: ``imel train|eval|plot|compare|selftest``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import selftest
from .agent import ALGORITHMS, load_agent
from .curves import read_csv, render_svg
from .errors import ImelError
from .harness import load_config, run_experiment


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _overrides(args) -> dict:
    exp, agent = {}, {}
    if getattr(args, "seeds", None) is not None:
        exp["seeds"] = args.seeds
    if getattr(args, "out", None) is not None:
        exp["out"] = str(args.out)
    if getattr(args, "algo", None) is not None:
        agent["algo"] = args.algo[0]
        exp["algos"] = list(args.algo)
    if getattr(args, "iterations", None) is not None:
        agent["iterations"] = args.iterations
    if getattr(args, "workers", None) is not None:
        exp["workers"] = args.workers
    out = {}
    if exp:
        out["experiment"] = exp
    if agent:
        out["agent"] = agent
    return out


def _add_run_flags(p):
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--algo", action="append", choices=ALGORITHMS,
                   help="algorithm (repeat for compare)")
    p.add_argument("--iterations", type=int, help="iterations K per seed")
    p.add_argument("--workers", type=int, help="parallel seed replicas")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imel", description="Improved-memories policy learning experiments")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("train", help="run one algorithm over the configured seeds")
    _add_run_flags(p)

    p = sub.add_parser("compare", help="run several algorithms, or overlay existing metrics CSVs")
    _add_run_flags(p)
    p.add_argument("csv", nargs="*", type=Path, help="metrics.csv files to overlay instead of training")
    p.add_argument("--labels", help="comma-separated legend labels for the CSV files")

    p = sub.add_parser("eval", help="roll out a saved checkpoint deterministically")
    p.add_argument("checkpoint", type=Path, help="checkpoint directory (contains state.json)")
    p.add_argument("--seeds", type=_seed_list, help="env start seeds (default: the run's eval seeds)")

    p = sub.add_parser("plot", help="render a metrics CSV as SVG")
    p.add_argument("csv", type=Path)
    p.add_argument("--out", type=Path, help="SVG path (default: curve.svg next to the CSV)")
    p.add_argument("--title", default="")

    sub.add_parser("selftest", help="run the built-in property checks")
    return parser


def cmd_train(args) -> int:
    config = load_config(args.config, _overrides(args))
    run_experiment(config, config.algos[0], config.out)
    return 0


def cmd_compare(args) -> int:
    out = args.out or Path("compare.svg")
    if args.csv:
        labels = args.labels.split(",") if args.labels else [p.parent.name or p.stem for p in args.csv]
        if len(labels) != len(args.csv):
            raise ImelError("--labels must name every CSV")
        svg = out if out.suffix == ".svg" else out / "compare.svg"
        svg.parent.mkdir(parents=True, exist_ok=True)
        render_svg({lab: read_csv(p) for lab, p in zip(labels, args.csv)}, svg, title="comparison")
        print(f"wrote {svg}")
        return 0
    config = load_config(args.config, _overrides(args))
    root = Path(config.out)
    curves = {}
    for algo in config.algos:
        run_experiment(config, algo, root / algo)
        curves[algo] = read_csv(root / algo / "metrics.csv")
    render_svg(curves, root / "compare.svg", title=f"comparison on {config.run.env}")
    print(f"wrote {root / 'compare.svg'}")
    return 0


def cmd_eval(args) -> int:
    agent = load_agent(args.checkpoint)
    returns = np.array(agent.evaluate(agent.policy(), seeds=args.seeds))
    print(f"{agent.config.algo} k={agent.k} episodes={len(returns)} mean={returns.mean():.6g} "
          f"p20={np.percentile(returns, 20):.6g} p80={np.percentile(returns, 80):.6g}")
    return 0


def cmd_plot(args) -> int:
    svg = args.out or args.csv.with_name("curve.svg")
    render_svg({args.csv.parent.name or "run": read_csv(args.csv)}, svg, title=args.title)
    print(f"wrote {svg}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest.run() else 1


COMMANDS = {"train": cmd_train, "compare": cmd_compare, "eval": cmd_eval, "plot": cmd_plot,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ImelError, OSError, ValueError) as exc:
        print(f"imel {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
