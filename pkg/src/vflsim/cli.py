"""Command-line entry point: `run` a scenario config, `mi-chain` an exact
Markov-chain check, or `list-tasks`.

Exit codes: 0 success, 1 validation/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .data import builtin_task_specs
from .errors import ConfigError, DataError, FormatError, VflError
from .harness import load_scenario, run_scenario, write_report
from .infotheory import MarkovChainSpec, chain_mi_sequence, random_chain

_CHAIN_TOL = 1e-10


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vflsim",
                                     description="Desk-scale VFL simulator and attack/defense harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config (TOML); 'demo' runs the bundled scenario")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the base seed")
    run.add_argument("--out", default=None, help="override the report path")
    run.add_argument("--format", choices=("csv", "json"), default=None)

    chain = sub.add_parser("mi-chain", help="exact MI check on a Markov chain spec (JSON)")
    chain.add_argument("chain_file")

    sub.add_parser("list-tasks", help="print the built-in task reassignment specs")
    return parser


def _load_chains(path) -> list:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"chain file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e
    if "random" in raw:
        r = raw["random"]
        try:
            return [random_chain(int(r.get("seed", 0)) + i, int(r.get("branches", 2)),
                                 int(r.get("alphabet", 4)), int(r.get("bottom_depth", 3)),
                                 int(r.get("top_depth", 2)))
                    for i in range(int(r.get("count", 1)))]
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid random chain recipe: {e}") from e
    try:
        return [MarkovChainSpec(
            [np.asarray(p) for p in raw["inputs"]],
            [[np.asarray(m) for m in mats] for mats in raw["branches"]],
            np.asarray(raw["lump"]),
            [np.asarray(m) for m in raw.get("top", [])],
            np.asarray(raw["label"]),
        )]
    except KeyError as e:
        raise ConfigError(f"chain file missing key {e}") from e


def check_chain(chain: MarkovChainSpec, tol: float = _CHAIN_TOL) -> tuple:
    """Verify branch monotonicity, the lumping bound, and top monotonicity.

    Returns (sequences, list of violation messages)."""
    seq = chain_mi_sequence(chain)
    problems = []
    for i, branch in enumerate(seq.branches):
        for j, (a, b) in enumerate(zip(branch, branch[1:])):
            if a > b + tol:
                problems.append(f"branch {i} stage {j}: {a:.12f} > {b:.12f}")
        if branch[-1] > seq.top[0] + tol:
            problems.append(f"branch {i} terminal exceeds the lumping point")
    for j, (a, b) in enumerate(zip(seq.top, seq.top[1:])):
        if a > b + tol:
            problems.append(f"top stage {j}: {a:.12f} > {b:.12f}")
    return seq, problems


def _cmd_run(args) -> int:
    path = args.config
    if path == "demo":
        path = resources.files("vflsim").joinpath("configs/demo.toml")
    cfg = load_scenario(path)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.format is not None:
        cfg.format = args.format
    report = run_scenario(cfg)
    out = Path(cfg.out)
    if not out.suffix:
        out = out.with_suffix(f".{cfg.format}")
    write_report(report, out, cfg.format)
    agg = report.aggregate
    print(f"{cfg.name}: {cfg.repetitions} repetition(s), "
          f"MTA {agg['mta']['mean']} ± {agg['mta']['std']} -> {out}")
    for name, a in agg["attacks"].items():
        print(f"  {name}: raw {a['raw']['mean']} ± {a['raw']['std']}, "
              f"lift {a['lift']['mean']} ± {a['lift']['std']}")
    return 0


def _cmd_mi_chain(args) -> int:
    chains = _load_chains(args.chain_file)
    failures = 0
    for i, chain in enumerate(chains):
        seq, problems = check_chain(chain)
        for b, branch in enumerate(seq.branches):
            print(f"chain {i} branch {b}: " + " ".join(f"{v:.6f}" for v in branch))
        print(f"chain {i} top:      " + " ".join(f"{v:.6f}" for v in seq.top))
        if problems:
            failures += 1
            for p in problems:
                print(f"chain {i} VIOLATION: {p}", file=sys.stderr)
        else:
            print(f"chain {i}: all inequalities hold within {_CHAIN_TOL}")
    if failures:
        print(f"{failures}/{len(chains)} chains violated the inequalities", file=sys.stderr)
        return 2
    return 0


def _cmd_list_tasks(args) -> int:
    for kind in ("mnist-like-10", "generic-C"):
        print(f"{kind}:")
        for spec in builtin_task_specs(kind, 10):
            print(f"  {spec.name}: {spec.c_orig} -> {spec.c_new} classes, "
                  f"mapping {list(spec.mapping)}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "mi-chain":
            return _cmd_mi_chain(args)
        return _cmd_list_tasks(args)
    except (ConfigError, FormatError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except VflError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
