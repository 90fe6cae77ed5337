"""
Experiment presets and the config loader: preset tree <- user file <- command-line overrides.
"""

import copy
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from pydantic import ValidationError

from models.configs import ExperimentConfig
from utils.errors import ConfigError

_TWO_MODES = {"weights": [0.5, 0.5], "means": [[-10.0], [10.0]], "scales": [1.0, 1.0]}

PRESETS: Dict[str, Dict[str, Any]] = {
    "mixture1d_gauss": {
        "schedule": {"kind": "linear", "T": 1000},
        "data": {"mixture": dict(_TWO_MODES, family="gaussian"), "n_train": 1000, "n_eval": 2000},
        "model": {"width": 128, "rank": 1},
        "train": {"objective": "lm", "epochs": 300, "batch_size": 128, "N_transitions": 8},
        "sampler": {"steps": 1000},
        "study": {"methods": ["lm", "sm"], "N_values": [2, 3, 8], "steps_values": [5, 10, 20, 50, 1000]},
        "seeds": list(range(50)),
    },
    "mixture1d_t3": {
        "schedule": {"kind": "linear", "T": 1000},
        "data": {"mixture": dict(_TWO_MODES, family="student_t", df=3.0), "n_train": 1000, "n_eval": 2000},
        "model": {"width": 128, "rank": 1},
        "train": {"objective": "lm", "epochs": 300, "batch_size": 128, "N_transitions": 8},
        "sampler": {"steps": 1000},
        "study": {"methods": ["lm", "sm"], "N_values": [2, 3, 8], "steps_values": [5, 10, 20, 50, 1000]},
        "seeds": list(range(50)),
    },
    "mixture2d_paramest": {
        "schedule": {"kind": "linear", "T": 1000},
        "data": {
            "mixture": {
                "weights": [1.0 / 3.0, 2.0 / 3.0],
                "means": [[1.0, 2.0], [-1.0, -3.0]],
                "scales": [math.sqrt(0.3), math.sqrt(0.6)],
                "family": "gaussian",
            },
            "n_train": 100,
        },
        "train": {"objective": "lm", "epochs": 300, "batch_size": 200, "lr": 1e-2, "N_transitions": 8},
        "study": {"methods": ["lm", "sm"], "sample_sizes": [100, 200]},
        "seeds": list(range(500)),
    },
    "oracle_sampler_check": {
        "schedule": {"kind": "linear", "T": 1000},
        "data": {"mixture": {"weights": [1.0], "means": [[0.0, 0.0]], "scales": [1.0]}, "n_eval": 10000},
        "sampler": {"steps": 100},
        "study": {"oracle_samples": 10000},
        "seeds": [0],
    },
    "custom": {"seeds": [0]},
}


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base; non-dict values replace."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(tree: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply `dotted.path=value` assignments; values are parsed as JSON when possible."""
    result = copy.deepcopy(tree)
    for item in overrides:
        path, sep, raw = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"override '{item}' must look like dotted.path=value")
        keys = path.split(".")
        node = result
        for key in keys[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigError("cannot descend into a non-object value", field_path=path)
            node = child
        node[keys[-1]] = _parse_value(raw)
    return result


def preset_tree(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(PRESETS)}", field_path="preset")
    return copy.deepcopy(PRESETS[name])


def load_config_file(path: str | Path) -> Dict[str, Any]:
    try:
        tree = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return tree


def build_config(tree: Dict[str, Any]) -> ExperimentConfig:
    """Validate a merged tree, reporting the first failing field path."""
    try:
        config = ExperimentConfig.model_validate(tree)
    except ValidationError as exc:
        error = exc.errors()[0]
        field_path = ".".join(str(part) for part in error["loc"]) or None
        raise ConfigError(error["msg"], field_path=field_path) from exc
    if config.strict and not config.train.lm.strict:
        lm = config.train.lm.model_copy(update={"strict": True})
        config = config.model_copy(update={"train": config.train.model_copy(update={"lm": lm})})
    return config


def load_experiment_config(path: Optional[str | Path] = None, preset: Optional[str] = None,
                           overrides: Iterable[str] = (), seed: Optional[int] = None,
                           output_dir: Optional[str] = None) -> tuple[ExperimentConfig, Dict[str, Any]]:
    """Resolve presets and overrides into a validated config plus the merged tree it came from."""
    user = load_config_file(path) if path else {}
    name = preset or user.get("preset")
    if name is None:
        raise ConfigError("a preset is required (config key or --preset)", field_path="preset")
    tree = deep_merge(preset_tree(name), user)
    tree["preset"] = name
    tree = apply_overrides(tree, overrides)
    if seed is not None:
        tree["seeds"] = [seed]
    if output_dir is not None:
        tree["output_dir"] = output_dir
    return build_config(tree), tree
