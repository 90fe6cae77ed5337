"""
Preset studies run by the `experiment` verb.

- MMD study (1D presets): train LM (per N and rank) and SM networks per seed,
  sample at every step count in the sweep and score against held-out data.
- Parameter-estimation study: quasi-MLE of the 2D mixture with LM and SM per
  replicate and sample size, reported as parameter error tables.
- Oracle sampler check: sample with the analytic score and Hessian.

Seeds are independent; with workers > 1 they run in a process pool.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from itertools import groupby
from typing import Any, Callable, Dict, List, Sequence

import numpy as np

from models.configs import ExperimentConfig
from models.records import ParamErrorRow
from services.artifact_service import ArtifactService
from services.eval_service import mmd, paired_sign_test, param_error_table
from services.sampler_service import run_sampler
from services.schedule_service import NoiseSchedule, schedule_from_config, spawn_rngs
from services.score_model_service import GaussianMixtureOracle, MixtureParams, MlpModel, sample_mixture
from services.training_service import fit_mixture_qmle, kmeans_init, match_components, train_mlp
from utils.debug import debug

logger = logging.getLogger(__name__)

MMD_FIELDS = ["seed", "method", "N", "rank", "steps", "mmd", "clamp_count", "final_loss"]
TRAIN_STREAM, SAMPLE_STREAM = 1, 2


def _map_seeds(worker: Callable, seeds: Sequence[int], workers: int) -> List[Any]:
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, seeds))
    return [worker(seed) for seed in seeds]


def _run_streams(seed: int, purpose: int, *key: int) -> np.random.Generator:
    # keyed by seed and purpose, never by position in the sweep: every run replays the same draws
    return spawn_rngs([seed, purpose, *key], 1)[0]


def _sample_steps(model, sched: NoiseSchedule, cfg: ExperimentConfig, baseline: str, n: int, seed: int,
                  reference: np.ndarray):
    for steps in cfg.study.steps_values:
        sampler_cfg = cfg.sampler.model_copy(update={"steps": steps, "baseline": baseline})
        result = run_sampler(n, model, sched, sampler_cfg, _run_streams(seed, SAMPLE_STREAM, steps))
        yield steps, mmd(result.samples, reference, cfg.eval), result.clamp_count


def mmd_seed_rows(cfg: ExperimentConfig, seed: int) -> List[Dict[str, Any]]:
    """All (method, N, rank, steps) rows for one seed."""
    sched = schedule_from_config(cfg.schedule)
    truth = MixtureParams.from_spec(cfg.data.mixture)
    data_rng, eval_rng = spawn_rngs(seed, 2)
    data = sample_mixture(truth, cfg.data.n_train, data_rng)
    reference = sample_mixture(truth, cfg.data.n_eval, eval_rng)
    rows: List[Dict[str, Any]] = []

    runs = []
    for method in cfg.study.methods:
        if method == "lm":
            ranks = cfg.study.ranks or [cfg.model.rank]
            runs += [(method, N, rank) for N in cfg.study.N_values for rank in ranks]
        else:
            runs.append((method, cfg.train.N_transitions, cfg.model.rank))

    for method, N, rank in runs:
        train_cfg = cfg.train.model_copy(update={"objective": method, "N_transitions": N})
        model0 = MlpModel.initialize(truth.dim, cfg.model.width, rank, seed=seed)
        fit = train_mlp(data, model0, sched, train_cfg, _run_streams(seed, TRAIN_STREAM))
        # score-matching networks carry no trained Hessian head
        baseline = cfg.sampler.baseline if method == "lm" else "score_only"
        for steps, value, clamps in _sample_steps(fit.model, sched, cfg, baseline, cfg.data.n_eval,
                                                  seed, reference):
            rows.append({"seed": seed, "method": method, "N": N, "rank": rank, "steps": steps, "mmd": value,
                         "clamp_count": clamps, "final_loss": float(fit.loss_history[-1])})
        logger.info(f"seed {seed}: {method} N={N} rank={rank} trained in {fit.steps} steps")

    if cfg.study.oracle_samples and truth.family == "gaussian":
        oracle = GaussianMixtureOracle(truth)
        for steps, value, clamps in _sample_steps(oracle, sched, cfg, "lm", cfg.study.oracle_samples,
                                                  seed, reference):
            rows.append({"seed": seed, "method": "oracle", "N": 0, "rank": truth.dim, "steps": steps,
                         "mmd": value, "clamp_count": clamps, "final_loss": 0.0})
    return rows


def _mmd_summary(rows: List[Dict[str, Any]]) -> Dict[str, Any]:
    def key(row):
        return row["method"], row["N"], row["rank"], row["steps"]

    means = []
    for (method, N, rank, steps), group in groupby(sorted(rows, key=key), key=key):
        values = [r["mmd"] for r in group]
        means.append({"method": method, "N": N, "rank": rank, "steps": steps, "mean_mmd": float(np.mean(values)),
                      "std_mmd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0, "seeds": len(values)})

    comparisons = []
    lm_rows = [r for r in rows if r["method"] == "lm"]
    sm_rows = [r for r in rows if r["method"] == "sm"]
    if lm_rows and sm_rows:
        best_n = max(r["N"] for r in lm_rows)
        rank = min(r["rank"] for r in lm_rows if r["N"] == best_n)
        for steps in sorted({r["steps"] for r in rows}):
            lm = {r["seed"]: r["mmd"] for r in lm_rows
                  if r["N"] == best_n and r["rank"] == rank and r["steps"] == steps}
            sm = {r["seed"]: r["mmd"] for r in sm_rows if r["steps"] == steps}
            seeds = sorted(set(lm) & set(sm))
            test = paired_sign_test([lm[s] for s in seeds], [sm[s] for s in seeds])
            comparisons.append({"steps": steps, "lm_N": best_n, "lm_wins": test.wins, "sm_wins": test.losses,
                                "ties": test.ties, "p_value": test.p_value})
    return {"means": means, "lm_vs_sm": comparisons}


def run_mmd_study(cfg: ExperimentConfig, artifacts: ArtifactService, provenance: Dict[str, Any]) -> Dict[str, Any]:
    per_seed = _map_seeds(partial(mmd_seed_rows, cfg), cfg.seeds, cfg.study.workers)
    rows = [row for seed_rows in per_seed for row in seed_rows]
    artifacts.write_csv("mmd_long.csv", MMD_FIELDS, ([r[f] for f in MMD_FIELDS] for r in rows), provenance)
    return _mmd_summary(rows)


def paramest_seed(cfg: ExperimentConfig, seed: int) -> Dict[str, Dict[int, List[float]]]:
    """Matched parameter vectors per method and sample size for one replicate."""
    sched = schedule_from_config(cfg.schedule)
    truth = MixtureParams.from_spec(cfg.data.mixture)
    estimates: Dict[str, Dict[int, List[float]]] = {method: {} for method in cfg.study.methods}
    for n in cfg.study.sample_sizes:
        data_rng, init_rng = spawn_rngs([seed, n], 2)
        data = sample_mixture(truth, n, data_rng)
        init = kmeans_init(data, truth.K, init_rng)
        for method in cfg.study.methods:
            train_cfg = cfg.train.model_copy(update={"objective": method})
            # paired design: every method replays the same training stream
            stream = spawn_rngs([seed, n, 1], 1)[0]
            fit = fit_mixture_qmle(data, init, sched, train_cfg, stream, K=truth.K)
            estimates[method][n] = match_components(fit.theta, truth).param_vector().tolist()
    debug.print(f"replicate {seed} done")
    return estimates


def run_paramest_study(cfg: ExperimentConfig, artifacts: ArtifactService,
                       provenance: Dict[str, Any]) -> Dict[str, Any]:
    truth = MixtureParams.from_spec(cfg.data.mixture)
    replicates = _map_seeds(partial(paramest_seed, cfg), cfg.seeds, cfg.study.workers)
    names = truth.param_names()
    tables: Dict[str, Dict[int, List[ParamErrorRow]]] = {}
    all_rows: List[ParamErrorRow] = []

    for method in cfg.study.methods:
        tables[method] = {}
        for n in cfg.study.sample_sizes:
            vectors = [rep[method][n] for rep in replicates]
            artifacts.write_csv(f"estimates_{method}_n{n}.csv", ["seed"] + names,
                                ([seed] + vec for seed, vec in zip(cfg.seeds, vectors)), provenance)
            fitted = [MixtureParams.from_param_vector(v, truth.K, truth.dim) for v in vectors]
            rows = param_error_table(fitted, truth, method=method, n=n)
            artifacts.write_param_table(f"table_{method}_n{n}.csv", rows, provenance)
            tables[method][n] = rows
            all_rows += rows
    artifacts.write_param_table("param_errors.csv", all_rows, provenance)

    summary: Dict[str, Any] = {"tables": [r.model_dump() for r in all_rows], "lm_vs_sm": [], "consistency": []}
    target = truth.param_vector()
    mean_params = [name for name in names if name.startswith("mu")]
    if "lm" in tables and "sm" in tables:
        for n in cfg.study.sample_sizes:
            lm = np.abs(np.array([rep["lm"][n] for rep in replicates]) - target)
            sm = np.abs(np.array([rep["sm"][n] for rep in replicates]) - target)
            for i, name in enumerate(names):
                test = paired_sign_test(lm[:, i], sm[:, i])
                summary["lm_vs_sm"].append({"param": name, "n": n, "lm_MAE": float(lm[:, i].mean()),
                                            "sm_MAE": float(sm[:, i].mean()), "p_value": test.p_value})
    sizes = sorted(cfg.study.sample_sizes)
    if "lm" in tables and len(sizes) > 1:
        small, large = tables["lm"][sizes[0]], tables["lm"][sizes[-1]]
        for a, b in zip(small, large):
            if a.param in mean_params:
                summary["consistency"].append({"param": a.param, f"MAE_n{sizes[0]}": a.MAE,
                                               f"MAE_n{sizes[-1]}": b.MAE, "decreasing": b.MAE < a.MAE})
    return summary


def oracle_sampler_check(cfg: ExperimentConfig, artifacts: ArtifactService,
                         provenance: Dict[str, Any]) -> Dict[str, Any]:
    """Sample with the analytic score/Hessian of the configured mixture and compare moments."""
    sched = schedule_from_config(cfg.schedule)
    truth = MixtureParams.from_spec(cfg.data.mixture)
    oracle = GaussianMixtureOracle(truth)
    sample_rng, ref_rng = spawn_rngs(cfg.seeds[0], 2)
    n = cfg.study.oracle_samples or cfg.data.n_eval
    result = run_sampler(n, oracle, sched, cfg.sampler, sample_rng)
    reference = sample_mixture(truth, n, ref_rng)
    artifacts.write_samples("oracle_samples.csv", result.samples, provenance)
    target_mean = truth.weights @ truth.means
    return {
        "n": n,
        "steps": cfg.sampler.steps,
        "mean_error": float(np.linalg.norm(result.samples.mean(axis=0) - target_mean)),
        "cov_error": float(np.linalg.norm(np.atleast_2d(np.cov(result.samples, rowvar=False))
                                          - np.atleast_2d(np.cov(reference, rowvar=False)))),
        "mmd": mmd(result.samples, reference, cfg.eval),
        "clamp_count": result.clamp_count,
    }


STUDIES: Dict[str, Callable[[ExperimentConfig, ArtifactService, Dict[str, Any]], Dict[str, Any]]] = {
    "mixture1d_gauss": run_mmd_study,
    "mixture1d_t3": run_mmd_study,
    "mixture2d_paramest": run_paramest_study,
    "oracle_sampler_check": oracle_sampler_check,
    "custom": run_mmd_study,
}


def run_experiment(cfg: ExperimentConfig, artifacts: ArtifactService, provenance: Dict[str, Any]) -> Dict[str, Any]:
    """Dispatch the preset's study and return its summary results."""
    study = STUDIES[cfg.preset]
    logger.info(f"running {study.__name__} for preset {cfg.preset} over {len(cfg.seeds)} seeds")
    return study(cfg, artifacts, provenance)
