"""
`eval` verb: MMD between two sample files, or parameter error tables from replicate estimates.
"""

import json
import logging
from pathlib import Path

import numpy as np

from commands.common import handles_errors
from config.presets import preset_tree
from config import settings
from models.configs import MixtureSpec, MmdConfig
from services.artifact_service import ArtifactService
from services.eval_service import mmd, mmd_permutation_test, mmd_squared, param_error_table
from services.schedule_service import make_rng
from services.score_model_service import MixtureParams
from utils.errors import EXIT_INPUT_ERROR, EXIT_OK, CommandError, InputFormatError
from utils.provenance import file_hash, git_describe

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("eval", help="evaluate samples or parameter estimates")
    verbs = parser.add_subparsers(dest="eval_command", required=True)

    mmd_parser = verbs.add_parser("mmd", help="multi-bandwidth MMD between two sample CSVs")
    mmd_parser.add_argument("samples_x")
    mmd_parser.add_argument("samples_y")
    mmd_parser.add_argument("--bandwidths", type=float, nargs="+", default=list(settings.DEFAULT_BANDWIDTHS))
    mmd_parser.add_argument("--estimator", choices=["biased_v", "unbiased_u"], default="biased_v")
    mmd_parser.add_argument("--standardize", action="store_true")
    mmd_parser.add_argument("--permutations", type=int, default=0, help="permutation test size (0 = skip)")
    mmd_parser.add_argument("--seed", type=int, default=0)
    mmd_parser.add_argument("--output", help="write the JSON result here")
    mmd_parser.set_defaults(func=run_mmd)

    table_parser = verbs.add_parser("table", help="MAE / std-error table from replicate estimates")
    table_parser.add_argument("estimates", help="CSV with one replicate per row, columns named like mu11, sigma1, omega1")
    truth = table_parser.add_mutually_exclusive_group(required=True)
    truth.add_argument("--truth", help="mixture_oracle checkpoint holding the true parameters")
    truth.add_argument("--preset", help="take the true mixture from a preset")
    table_parser.add_argument("--method", default="")
    table_parser.add_argument("--n", type=int, help="sample size each replicate was fitted on")
    table_parser.add_argument("--output", help="write the table CSV here")
    table_parser.set_defaults(func=run_table)


@handles_errors
def run_mmd(args) -> int:
    cfg = MmdConfig(bandwidths=args.bandwidths, estimator=args.estimator, standardize=args.standardize)
    X = ArtifactService.read_samples(args.samples_x)
    Y = ArtifactService.read_samples(args.samples_y)
    result = {
        "mmd": mmd(X, Y, cfg),
        "mmd_squared": mmd_squared(X, Y, cfg),
        "estimator": cfg.estimator,
        "bandwidths": cfg.bandwidths,
        "standardize": cfg.standardize,
        "n_x": int(X.shape[0]),
        "n_y": int(Y.shape[0]),
        "provenance": {"git_describe": git_describe(), "x_hash": file_hash(args.samples_x),
                       "y_hash": file_hash(args.samples_y), "seed": args.seed},
    }
    if args.permutations:
        test = mmd_permutation_test(X, Y, cfg, args.permutations, make_rng(args.seed))
        result["permutation_test"] = {"null_mean": test.null_mean, "null_std": test.null_std,
                                      "p_value": test.p_value, "permutations": test.permutations}
    print(json.dumps(result, indent=2, sort_keys=True))
    if args.output:
        output = Path(args.output)
        ArtifactService(output.parent).write_json(output.name, result)
    return EXIT_OK


def _truth(args) -> MixtureParams:
    if args.truth:
        record = ArtifactService.load_checkpoint(args.truth)
        if record.mixture is None:
            raise CommandError(EXIT_INPUT_ERROR, f"{args.truth} is not a mixture checkpoint")
        return MixtureParams.from_spec(record.mixture)
    tree = preset_tree(args.preset)
    if "data" not in tree:
        raise CommandError(EXIT_INPUT_ERROR, f"preset '{args.preset}' defines no mixture")
    return MixtureParams.from_spec(MixtureSpec.model_validate(tree["data"]["mixture"]))


@handles_errors
def run_table(args) -> int:
    truth = _truth(args)
    provenance, header, rows = ArtifactService.read_csv(args.estimates)
    names = truth.param_names()
    missing = [name for name in names if name not in header]
    if missing:
        raise InputFormatError(f"estimates file lacks columns {', '.join(missing)}")
    columns = [header.index(name) for name in names]
    fitted = []
    for number, row in enumerate(rows, start=1):
        try:
            vector = np.array([float(row[i]) for i in columns])
        except ValueError as exc:
            raise InputFormatError(f"non-numeric estimate: {exc}", row=number) from exc
        fitted.append(MixtureParams.from_param_vector(vector, truth.K, truth.dim))
    table = param_error_table(fitted, truth, method=args.method, n=args.n)
    for row in table:
        print(f"{row.param:<8} MAE={row.MAE:.4f}  std_error={row.std_error:.4f}  n={row.n}  {row.method}")
    if args.output:
        output = Path(args.output)
        meta = {"git_describe": git_describe(), "estimates_hash": file_hash(args.estimates)}
        meta.update({k: v for k, v in provenance.items() if k in ("config_hash", "seed", "preset")})
        ArtifactService(output.parent).write_param_table(output.name, table, meta)
    return EXIT_OK
