"""Command line entry point: ``dualcd run --config <file>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import DualCDError


def _bool(s: str) -> bool:
    return s.lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualcd", description="Open-environment cognitive diagnosis experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="flat YAML/JSON key-value config")
    run.add_argument("--scenario", choices=["standard", "unseen_student", "unseen_exercise", "unseen_concept"])
    run.add_argument("--cdm", choices=["simplecd", "concept_dim", "latent_dim"])
    run.add_argument("--encoder", choices=["MLP", "GCN", "GAT", "GT"])
    run.add_argument("--dim", type=int)
    run.add_argument("--mask-ratio", type=float, dest="mask_ratio")
    run.add_argument("--test-size", type=float, dest="test_size")
    run.add_argument("--seed", type=int)
    run.add_argument("--repetitions", type=int)
    run.add_argument("--offline", action="store_const", const=True, default=None,
                     help="never call network backends; cache misses fail")
    run.add_argument("--out")

    stats = sub.add_parser("stats", help="print dataset statistics as JSON")
    stats.add_argument("--logs", required=True)
    stats.add_argument("--q", required=True)
    stats.add_argument("--min-logs", type=int, default=None, dest="min_logs",
                       help="keep only students with more than this many logs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            from .harness import ExperimentConfig, run_experiment

            cfg = ExperimentConfig.from_file(args.config).with_overrides(
                scenario=args.scenario, cdm=args.cdm, encoder=args.encoder, dim=args.dim,
                mask_ratio=args.mask_ratio, test_size=args.test_size, seed=args.seed,
                repetitions=args.repetitions, offline=args.offline, out=args.out,
            )
            result = run_experiment(cfg)
            sys.stdout.write((result.outdir / "report.txt").read_text(encoding="utf-8"))
        else:
            from .data import compute_stats, filter_min_activity, load_dataset

            d = load_dataset(args.logs, args.q)
            if args.min_logs is not None:
                d = filter_min_activity(d, args.min_logs)
            print(json.dumps(compute_stats(d).to_table_row(), indent=2))
    except DualCDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
