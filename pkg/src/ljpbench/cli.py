"""Command-line entry point.

Subcommands: index, sample, run, simulate, knn, verify, report.  Every
command takes a config file; ``--set section.key=value`` flags override
individual config keys.  Exit code 0 on success; failures print a
machine-readable JSON error record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config
from .runner import (
    run_index,
    run_knn,
    run_matrix,
    run_report,
    run_sample,
    run_simulation,
    run_verification,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ljpbench",
        description="Retrieval-augmented charge-prediction evaluation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, needs_config: bool = True) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        if needs_config:
            cmd.add_argument("--config", required=True, help="path to the YAML/JSON config")
            cmd.add_argument(
                "--set",
                dest="overrides",
                action="append",
                default=[],
                metavar="KEY=VALUE",
                help="override a config key, e.g. --set run.output_dir=out",
            )
            cmd.add_argument("--output-dir", help="shorthand for --set run.output_dir=...")
        return cmd

    add("index", "build and persist the BM25 training index")
    add("sample", "materialize balanced corpus splits")
    add("run", "execute the question-form x shots evaluation matrix")
    add("simulate", "sweep simulated IR capabilities and T/F patterns")
    add("knn", "BM25 Precision@1 and tuned kNN baseline")
    add("verify", "per-charge yes/no verification")
    report = add("report", "regenerate CSV reports from a run bundle", needs_config=False)
    report.add_argument("run_dir", help="path to a completed runs/<run-id> directory")
    return parser


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like section.key=value, got {pair!r}")
        overrides[key] = value
    return overrides


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            bundle = run_report(args.run_dir)
            print(bundle)
            return 0
        overrides = _parse_overrides(args.overrides)
        if args.output_dir:
            overrides["run.output_dir"] = args.output_dir
        config = load_config(args.config, overrides)
        if args.command == "index":
            print(run_index(config))
        elif args.command == "sample":
            print(run_sample(config))
        elif args.command == "run":
            print(run_matrix(config))
        elif args.command == "simulate":
            print(run_simulation(config))
        elif args.command == "knn":
            results = run_knn(config)
            print(json.dumps(
                {k: results[k] for k in ("p_at_1", "best_k", "knn_accuracy")},
                ensure_ascii=False,
            ))
        elif args.command == "verify":
            print(run_verification(config))
        return 0
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        record = {"error": str(exc), "type": type(exc).__name__}
        print(json.dumps(record, ensure_ascii=False), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
