"""
`sample` verb: draw samples from a checkpoint, one CSV per sampling-step setting.
"""

import logging

from commands.common import handles_errors
from config import settings
from models.configs import SamplerConfig
from services.artifact_service import ArtifactService
from services.sampler_service import run_sampler
from services.schedule_service import make_rng, schedule_from_config
from services.score_model_service import model_from_record
from utils.errors import EXIT_INPUT_ERROR, EXIT_OK, CommandError
from utils.provenance import file_hash, provenance_header

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("sample", help="generate samples from a checkpoint")
    parser.add_argument("--checkpoint", required=True, help="checkpoint JSON (mlp or mixture_oracle)")
    parser.add_argument("--n", type=int, default=1000, help="number of samples")
    parser.add_argument("--steps", type=int, nargs="+", help="sampling steps; several values give one file each")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--baseline", choices=["lm", "score_only"], default="lm")
    parser.add_argument("--final-step", choices=["mean_only", "noisy"], default="mean_only")
    parser.add_argument("--clamp-eps", type=float, default=settings.CLAMP_EPS)
    parser.add_argument("--output-dir", default=settings.OUTPUT_DIR)
    parser.set_defaults(func=run)


@handles_errors
def run(args) -> int:
    if args.n < 0:
        raise CommandError(EXIT_INPUT_ERROR, f"--n must be non-negative, got {args.n}")
    record = ArtifactService.load_checkpoint(args.checkpoint)
    model = model_from_record(record)
    sched = schedule_from_config(record.schedule)
    steps_values = args.steps or [sched.T]
    for steps in steps_values:
        if not 1 <= steps <= sched.T:
            raise CommandError(EXIT_INPUT_ERROR,
                               f"checkpoint/schedule mismatch: {steps} steps but the schedule has T={sched.T}")

    artifacts = ArtifactService(args.output_dir)
    checkpoint_hash = file_hash(args.checkpoint)
    for steps in steps_values:
        cfg = SamplerConfig(steps=steps, baseline=args.baseline, final_step=args.final_step, clamp_eps=args.clamp_eps)
        result = run_sampler(args.n, model, sched, cfg, make_rng(args.seed))
        provenance = provenance_header(record.config_hash or checkpoint_hash, args.seed)
        provenance.update(steps=steps, model_checkpoint_hash=checkpoint_hash, clamp_count=result.clamp_count,
                          baseline=args.baseline)
        path = artifacts.write_samples(f"samples_steps{steps}.csv", result.samples.reshape(args.n, model.dim),
                                       provenance)
        print(f"Wrote {args.n} samples ({steps} steps) to {path}")
    return EXIT_OK
