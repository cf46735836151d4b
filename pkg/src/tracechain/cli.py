"""Command-line entry point.

Subcommands reproduce the four experiments plus arbitrary configured
runs:

    tracechain decentrality --out results/ --reps 10 --height 10000
    tracechain robustness   --out results/ --p 0.1,0.2,0.3
    tracechain attack       --out results/ --attack fake_contacts
    tracechain storage      --out results/ --hours 200
    tracechain simulate     --out results/ --config run.cfg --seed 7

Flags override environment variables (``TRACECHAIN_<KEY>``, dots spelled
as double underscores), which override the config file, which overrides
the built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ATTACK_FAKE_CONTACTS, ATTACK_MALICIOUS_WITNESS, ConfigError, build_config
from .experiments import (
    DEFAULT_ROBUSTNESS_HOURS,
    DEFAULT_ROBUSTNESS_P,
    ExperimentSpec,
    cmd_attack,
    cmd_decentrality,
    cmd_robustness,
    cmd_simulate,
    cmd_storage,
)


def _env_default(name: str, fallback):
    raw = os.environ.get(f"TRACECHAIN_{name.upper()}")
    if raw is None:
        return fallback
    return type(fallback)(raw) if fallback is not None else raw


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=_env_default("config", None),
                        help="flat key = value config file")
    parser.add_argument("--out", default=_env_default("out", "results"),
                        help="output directory for CSV files")
    parser.add_argument("--reps", type=int, default=_env_default("reps", 10),
                        help="number of repetitions (seeds)")
    parser.add_argument("--seed", type=int, default=_env_default("seed", 0),
                        help="base seed; run i uses seed + i")
    parser.add_argument("--workers", type=int, default=_env_default("workers", 1),
                        help="parallel worker processes for repetitions")
    parser.add_argument("--mode", choices=["bdct", "dpos"], default=None)
    parser.add_argument("--height", type=int, default=None,
                        help="target chain height (blocks)")
    parser.add_argument("--hours", type=float, default=None,
                        help="simulated duration in hours")
    parser.add_argument("--no-witness", action="store_true",
                        help="disable the witness role")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracechain", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "decentrality", "robustness", "attack", "storage"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "robustness":
            p.add_argument("--p", default=",".join(str(x) for x in DEFAULT_ROBUSTNESS_P),
                           help="comma-separated failure rates")
        if name == "attack":
            p.add_argument("--attack", dest="attack_strategy",
                           choices=[ATTACK_FAKE_CONTACTS, ATTACK_MALICIOUS_WITNESS],
                           default=None, help="run a single strategy (default: both)")
            p.add_argument("--colluders", type=int, default=10)
    return parser


def _config_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {"seed": args.seed}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.height is not None:
        overrides["height"] = args.height
    if args.hours is not None:
        overrides["hours"] = args.hours
    if args.no_witness:
        overrides["witness_enabled"] = "false"
    return overrides


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExperimentSpec(out_dir=args.out, repetitions=args.reps,
                          seed_base=args.seed, config_path=args.config,
                          workers=args.workers)
    overrides = _config_overrides(args)
    try:
        if args.command == "decentrality":
            config = build_config(args.config, overrides, defaults={"height": 10_000})
            cmd_decentrality(spec, config)
        elif args.command == "robustness":
            p_values = tuple(float(x) for x in args.p.split(",") if x.strip())
            if any(not 0 <= p <= 1 for p in p_values):
                raise ConfigError("failure rates must lie in [0, 1]")
            config = build_config(args.config, overrides,
                                  defaults={"hours": DEFAULT_ROBUSTNESS_HOURS})
            witness_modes = (False,) if args.no_witness else (True, False)
            cmd_robustness(spec, config, p_values, witness_modes)
        elif args.command == "attack":
            config = build_config(args.config, overrides, defaults={"height": 5_000})
            strategies = ((args.attack_strategy,) if args.attack_strategy
                          else (ATTACK_FAKE_CONTACTS, ATTACK_MALICIOUS_WITNESS))
            cmd_attack(spec, config, strategies, colluder_count=args.colluders)
        elif args.command == "storage":
            config = build_config(args.config, overrides, defaults={"hours": 200.0})
            cmd_storage(spec, config)
        else:
            config = build_config(args.config, overrides, defaults={"hours": 2.0})
            cmd_simulate(spec, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report the failing run and exit nonzero
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
