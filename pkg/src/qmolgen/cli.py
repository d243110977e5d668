"""Command-line interface.

Subcommands: train, generate, bench, decode, report. Config comes from a
YAML file (--config) with dotted-path overrides (--set key.path=value).
Exit codes: 0 ok, 2 config error, 3 capacity error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import CapacityError, ConfigError, FormatError, NumericalError
from .pipeline import (
    report_bench,
    report_history,
    run_bench,
    run_decode,
    run_generate,
    run_train,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmolgen",
        description="Quantum-circuit molecular generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="override a config key")
        p.add_argument("--output-dir", help="shorthand for --set output_dir=...")

    p_train = sub.add_parser("train", help="optimize circuit parameters")
    add_common(p_train)
    p_train.add_argument("--resume", action="store_true",
                         help="continue from an existing history.jsonl (bo only)")

    p_gen = sub.add_parser("generate", help="sample molecules with trained parameters")
    add_common(p_gen)
    p_gen.add_argument("--params", required=True,
                       help="params file (best_params.json or a JSON list)")

    p_bench = sub.add_parser("bench", help="runtime scaling benchmark")
    add_common(p_bench)

    p_dec = sub.add_parser("decode", help="decode a saved shot batch")
    add_common(p_dec)
    p_dec.add_argument("--batch", required=True, help="batch file (JSONL or binary)")

    p_rep = sub.add_parser("report", help="emit plot-ready CSVs from run artifacts")
    p_rep.add_argument("--history", help="history.jsonl from train")
    p_rep.add_argument("--bench", help="bench.csv from bench")
    p_rep.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            wrote = []
            if args.history:
                wrote.append(str(report_history(args.history, args.out)))
            if args.bench:
                wrote.extend(str(p) for p in report_bench(args.bench, args.out))
            if not wrote:
                raise ConfigError("report needs --history and/or --bench")
            print(json.dumps({"wrote": wrote}))
            return 0

        overrides = list(args.overrides)
        if args.output_dir:
            overrides.append(f"output_dir={args.output_dir}")
        cfg = load_config(args.config, overrides)

        if args.command == "train":
            result = run_train(cfg, resume=args.resume)
        elif args.command == "generate":
            result = run_generate(cfg, args.params)
        elif args.command == "bench":
            result = run_bench(cfg)
            result = result["summary"]
        elif args.command == "decode":
            result = run_decode(cfg, args.batch)
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown command {args.command}")
        print(json.dumps(result, sort_keys=True, default=str))
        return 0
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
