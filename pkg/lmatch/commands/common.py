"""
Shared helpers for CLI commands: config resolution, provenance and error translation.
"""

import functools
import logging
from typing import Any, Callable, Dict

from config.presets import load_experiment_config
from models.configs import ExperimentConfig
from services.artifact_service import ArtifactService
from utils.errors import (
    EXIT_DIVERGED,
    EXIT_INPUT_ERROR,
    CommandError,
    ConfigError,
    InputFormatError,
    LmatchError,
    TrainingDivergedError,
)
from utils.provenance import config_hash, provenance_header

logger = logging.getLogger(__name__)


def handles_errors(func: Callable[..., int]) -> Callable[..., int]:
    """Translate domain exceptions into CommandError with the matching exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> int:
        try:
            return func(*args, **kwargs)
        except CommandError:
            raise
        except TrainingDivergedError as exc:
            raise CommandError(EXIT_DIVERGED, str(exc)) from exc
        except (ConfigError, InputFormatError) as exc:
            raise CommandError(EXIT_INPUT_ERROR, str(exc)) from exc
        except (LmatchError, ValueError) as exc:
            raise CommandError(EXIT_INPUT_ERROR, f"{type(exc).__name__}: {exc}") from exc

    return wrapper


def add_config_arguments(parser):
    """--config/--preset/--set/--seed/--output-dir, shared by train and experiment."""
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--preset", help="preset name (overrides the config's preset key)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                        help="override a config value, e.g. --set train.lr=0.01")
    parser.add_argument("--seed", type=int, help="run with this single seed")
    parser.add_argument("--output-dir", help="directory for artifacts")
    parser.add_argument("--strict", action="store_true", help="strict-deterministic mode")


def resolve_config(args) -> tuple[ExperimentConfig, str]:
    """Validated config and the hash of the merged tree it came from."""
    overrides = list(args.overrides)
    if getattr(args, "strict", False):
        overrides.append("strict=true")
    cfg, tree = load_experiment_config(args.config, args.preset, overrides, args.seed, args.output_dir)
    return cfg, config_hash(tree)


def provenance_for(cfg: ExperimentConfig, cfg_hash: str, seed: int) -> Dict[str, Any]:
    header = provenance_header(cfg_hash, seed)
    header["preset"] = cfg.preset
    return header


def artifacts_for(cfg: ExperimentConfig) -> ArtifactService:
    return ArtifactService(cfg.output_dir)
