"""
`train` verb: fit an MLP (or a mixture by quasi-MLE) and write checkpoint, telemetry and summary.
"""

import logging
import time

from commands.common import add_config_arguments, artifacts_for, handles_errors, provenance_for, resolve_config
from models.records import CheckpointRecord, RunSummary
from services.schedule_service import forward_sample_batch, sample_time_grids, schedule_from_config, spawn_rngs
from services.score_model_service import GaussianMixtureOracle, MixtureParams, MlpModel, sample_mixture
from services.training_service import fit_mixture_qmle, kmeans_init, train_mlp
from utils.errors import EXIT_OK

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("train", help="train a model on a preset's synthetic data")
    add_config_arguments(parser)
    parser.add_argument("--model", choices=["mlp", "mixture", "oracle"], default="mlp",
                        help="mlp network, quasi-MLE mixture, or the true mixture saved without fitting")
    parser.add_argument("--save-trajectories", type=int, default=0, metavar="K",
                        help="also write K forward trajectories as JSON lines")
    parser.set_defaults(func=run)


def _record(model, schedule, cfg_hash: str) -> CheckpointRecord:
    if isinstance(model, GaussianMixtureOracle):
        return model.to_record(schedule).model_copy(update={"config_hash": cfg_hash})
    return model.to_record(schedule, cfg_hash)


@handles_errors
def run(args) -> int:
    """Train per config; the first seed is used."""
    started = time.perf_counter()
    cfg, cfg_hash = resolve_config(args)
    seed = cfg.seeds[0]
    sched = schedule_from_config(cfg.schedule)
    truth = MixtureParams.from_spec(cfg.data.mixture)
    data_rng, init_rng, train_rng, path_rng = spawn_rngs(seed, 4)
    data = sample_mixture(truth, cfg.data.n_train, data_rng)

    artifacts = artifacts_for(cfg)
    provenance = provenance_for(cfg, cfg_hash, seed)
    schedule = sched.to_config()
    results = {"model": args.model, "objective": cfg.train.objective, "n_train": cfg.data.n_train}

    def save(step, model):
        artifacts.save_checkpoint(f"checkpoints/step_{step:06d}", _record(model, schedule, cfg_hash))

    if args.model == "oracle":
        final = GaussianMixtureOracle(truth)
        fit = None
    elif args.model == "mixture":
        init = kmeans_init(data, truth.K, init_rng)
        fit = fit_mixture_qmle(data, init, sched, cfg.train, train_rng, K=truth.K, checkpoint=save)
        final = GaussianMixtureOracle(fit.theta)
    else:
        model0 = MlpModel.initialize(truth.dim, cfg.model.width, cfg.model.rank, seed=seed)
        fit = train_mlp(data, model0, sched, cfg.train, train_rng, checkpoint=save)
        final = fit.model

    checkpoint = artifacts.save_checkpoint("model", _record(final, schedule, cfg_hash))
    results["checkpoint"] = checkpoint.name

    if fit is not None:
        artifacts.write_telemetry("loss.csv", fit.telemetry, strict=cfg.strict, provenance=provenance)
        results.update(steps=fit.steps, final_loss=float(fit.loss_history[-1]), barrier_count=fit.barrier_count)
        if not cfg.strict:
            results["wall_time"] = fit.wall_time

    if args.save_trajectories:
        k = min(args.save_trajectories, data.shape[0])
        grids = sample_time_grids(k, cfg.train.N_transitions, sched.T, path_rng)
        batch = forward_sample_batch(data[:k], grids, sched, path_rng)
        results["trajectories"] = artifacts.write_trajectories("trajectories.jsonl", batch.trajectories()).name

    if not cfg.strict:
        results["elapsed"] = time.perf_counter() - started
    summary = RunSummary(command="train", preset=cfg.preset, provenance=provenance, results=results)
    path = artifacts.write_json("summary.json", summary)
    logger.info(f"training summary written to {path}")
    print(f"Checkpoint: {checkpoint}")
    return EXIT_OK
