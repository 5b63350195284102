"""Command-line entry point: ``bba attack|metrics|oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from .harness import DatasetError, aggregate_path, compute_metrics, read_rows, run_benchmark


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bba", description="Blockwise Bayesian attacks on categorical sequences")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    attack = sub.add_parser("attack", help="attack every instance of a dataset")
    attack.add_argument("--dataset", required=True)
    attack.add_argument("--config", required=True)
    attack.add_argument("--out", required=True)
    attack.add_argument("--workers", type=int, default=1)
    attack.add_argument("--seed", type=int, default=None)

    metrics = sub.add_parser("metrics", help="recompute aggregates from a results file")
    metrics.add_argument("--in", dest="path", required=True)

    oracle = sub.add_parser("oracle", help="exhaustive minimum-perturbation search")
    oracle.add_argument("--dataset", required=True)
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--out", required=True)
    oracle.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "attack":
            report = run_benchmark(args.dataset, args.config, args.out, workers=args.workers, seed=args.seed)
        elif args.command == "oracle":
            report = run_benchmark(args.dataset, args.config, args.out, workers=args.workers, method="oracle")
        else:
            print(json.dumps(asdict(compute_metrics(read_rows(args.path))), sort_keys=True))
            return 0
    except (DatasetError, ValueError, OSError) as exc:
        print(f"bba: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(asdict(report.metrics), sort_keys=True))
    print(f"rows: {args.out}  aggregate: {aggregate_path(args.out)}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
