"""Calibration runs behind the desk-scale learning check.

Usage: python benchmarks/calibrate_learning.py [--algo imel-mki] [--seeds 0,1,2,3,4]
                                                [--iterations K] [--set key=value ...]

For every seed it prints the first-10 and last-10 mean eval return, the
improvement in pooled standard deviations, and the wall-clock time. These
are the numbers the acceptance threshold (>= 3 pooled SD on >= 3 of 5
seeds) was set against.
"""

import argparse
import ast
import time

import numpy as np

from imel.agent import RunConfig, make_agent

DEFAULT_K = {"imel-mki": 150, "imel-np": 200, "reinforce": 150}


def improvement(eval_means):
    ev = np.asarray(eval_means, dtype=np.float64)
    first, last = ev[:10], ev[-10:]
    pooled = np.sqrt((first.var(ddof=1) + last.var(ddof=1)) / 2.0)
    return first.mean(), last.mean(), (last.mean() - first.mean()) / pooled


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--algo", default="imel-mki", choices=sorted(DEFAULT_K))
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a RunConfig field, e.g. --set sigma=0.3")
    args = parser.parse_args()
    overrides = {}
    for item in args.set:
        key, _, raw = item.partition("=")
        try:
            overrides[key] = ast.literal_eval(raw)
        except (ValueError, SyntaxError):
            overrides[key] = raw
    config = RunConfig(algo=args.algo, iterations=args.iterations or DEFAULT_K[args.algo], **overrides)
    passed = 0
    seeds = [int(s) for s in args.seeds.split(",")]
    for seed in seeds:
        started = time.perf_counter()
        evals = [r.eval_mean for r in make_agent(config, seed).run()]
        first, last, z = improvement(evals)
        passed += z >= 3.0
        print(f"{args.algo} seed {seed}: first10 {first:9.1f} last10 {last:9.1f} "
              f"z {z:6.2f} ({time.perf_counter() - started:.0f}s)", flush=True)
    print(f"{args.algo}: {passed}/{len(seeds)} seeds improved by >= 3 pooled SD")


if __name__ == "__main__":
    main()
