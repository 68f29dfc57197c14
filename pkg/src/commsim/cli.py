"""Command line interface.

Subcommands:

* ``commsim run <config.json>``: run an experiment over its repeat seeds.
* ``commsim sweep <config.json> --axis ...``: sweep step-size multipliers,
  worker counts or algorithms.
* ``commsim verify <suite>``: run a property suite; exit 0 iff all pass.
* ``commsim estimate <spec.json>``: Monte-Carlo compressor factor report.
* ``commsim report <dir-or-csv>``: render figures from trace CSVs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .algorithms import DivergenceError
from .harness import ConfigError, cmd_estimate, cmd_run, cmd_sweep, parse_config
from .verification import SUITES, cmd_verify


def _load_config(path, axis=None):
    cfg = parse_config(Path(path).read_text(encoding="utf-8"))
    if axis is not None:
        sweep = dict(cfg.sweep or {})
        if sweep.get("axis", axis) != axis:
            sweep = {}
        sweep["axis"] = axis
        if axis == "gamma_multiplier":
            sweep.setdefault("gamma_exponents", None)
            if sweep["gamma_exponents"] is None:
                sweep.pop("gamma_exponents")
        cfg.sweep = sweep
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="commsim",
        description="Simulator and benchmark harness for distributed "
                    "optimization under lossy bidirectional compression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")

    p_sweep = sub.add_parser("sweep", help="sweep an axis of a config")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", default=None,
                         choices=["gamma_multiplier", "n", "algorithm"],
                         help="override the sweep axis from the config")

    p_verify = sub.add_parser("verify", help="run a property suite")
    p_verify.add_argument("suite", choices=sorted(SUITES) + ["all"])

    p_est = sub.add_parser("estimate", help="estimate compressor factors")
    p_est.add_argument("spec", help="path to a compressor spec JSON")

    p_rep = sub.add_parser("report", help="render figures from trace CSVs")
    p_rep.add_argument("target", help="run directory or trace CSV")
    p_rep.add_argument("--out", default=None, help="figure output directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            rows, paths = cmd_run(_load_config(args.config))
            for path in paths:
                print(path)
            return 0
        if args.command == "sweep":
            cfg = _load_config(args.config, axis=args.axis)
            if cfg.sweep is None:
                print("error: config has no sweep section and no --axis given",
                      file=sys.stderr)
                return 2
            rows, best = cmd_sweep(cfg)
            reached = sum(1 for r in rows if str(r.get("status")) == "reached")
            print(f"{len(rows)} runs, {reached} reached the target")
            if best:
                print(f"best point: {best}")
            return 0
        if args.command == "verify":
            results = cmd_verify(args.suite)
            for res in results:
                print(res.line())
            failed = [r for r in results if not r.passed]
            print(f"{len(results) - len(failed)}/{len(results)} checks passed")
            return 0 if not failed else 1
        if args.command == "estimate":
            report = cmd_estimate(Path(args.spec).read_text(encoding="utf-8"))
            print(json.dumps(report, indent=2, sort_keys=True))
            return 0
        if args.command == "report":
            from .report import render_report
            for path in render_report(args.target, args.out):
                print(path)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
