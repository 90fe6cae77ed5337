"""
`experiment` verb: run a preset study end to end and write its tables and summary.
"""

import logging
import time

from commands.common import add_config_arguments, artifacts_for, handles_errors, provenance_for, resolve_config
from models.records import RunSummary
from services.experiment_service import run_experiment
from utils.errors import EXIT_OK

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("experiment", help="run a preset study (train, sample, evaluate)")
    add_config_arguments(parser)
    parser.add_argument("--workers", type=int, help="parallel worker processes over seeds")
    parser.set_defaults(func=run)


@handles_errors
def run(args) -> int:
    started = time.perf_counter()
    if args.workers:
        args.overrides.append(f"study.workers={args.workers}")
    cfg, cfg_hash = resolve_config(args)
    artifacts = artifacts_for(cfg)
    provenance = provenance_for(cfg, cfg_hash, cfg.seeds[0] if len(cfg.seeds) == 1 else None)
    provenance["seeds"] = len(cfg.seeds)

    results = run_experiment(cfg, artifacts, provenance)
    if not cfg.strict:
        results["elapsed"] = time.perf_counter() - started
    summary = RunSummary(command="experiment", preset=cfg.preset, provenance=provenance, results=results)
    path = artifacts.write_json("summary.json", summary)
    print(f"Summary: {path}")
    return EXIT_OK
