"""Command line entry point: ``stopmean run|sweep|trace|summary|preset``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness

log = logging.getLogger("stopmean")


def _config(args) -> harness.ExperimentConfig:
    if args.preset:
        return harness.preset(args.preset)
    if not args.config:
        raise harness.ConfigError("give --config or --preset")
    return harness.ExperimentConfig.load(args.config)


def _cmd_run(args) -> int:
    cfg = _config(args)
    results = harness.run(cfg, Path(args.out))
    deepest = [r.deepest_level for r in results]
    print(f"{len(results)} replicate(s), {sum(len(r.records) for r in results)} rows, "
          f"deepest level {min(deepest)}..{max(deepest)} -> {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.workers:
        cfg = harness.replace(cfg, workers=args.workers)
    report = harness.sweep(cfg, args.seeds, Path(args.out))
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_trace(args) -> int:
    pattern = [p.strip() for p in args.pattern.split(",") if p.strip()]
    quant, exact = harness.trace_pattern(pattern, args.levels)
    print("variant,n,lambda_n,m_n")
    for c in quant:
        print(f"quantized,{c.n},{c.lam},{c.m!r}")
    for c in exact:
        print(f"exact,{c.n},{c.lam},{c.m!r}")
    return 0


def _cmd_summary(args) -> int:
    report = harness.summary_from_dir(args.inp)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_preset(args) -> int:
    print(json.dumps(harness.preset(args.name).to_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stopmean", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the seeds of one config")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(harness.PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run N seeds and aggregate")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(harness.PRESETS))
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("trace", help="print completions on a periodic replay pattern")
    p.add_argument("--pattern", required=True, help="comma separated values, e.g. 0,1,0")
    p.add_argument("--levels", type=int, required=True)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("summary", help="aggregate an output directory")
    p.add_argument("--in", dest="inp", required=True)
    p.set_defaults(func=_cmd_summary)

    p = sub.add_parser("preset", help="print a preset config as JSON")
    p.add_argument("name", choices=sorted(harness.PRESETS))
    p.set_defaults(func=_cmd_preset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (harness.ConfigError, harness.BudgetExhausted, harness.InvariantViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # e.g. unparsable trace pattern
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
