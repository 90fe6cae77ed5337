"""
Provenance helpers: config hashes, file hashes and the source revision.
"""

import hashlib
import json
import subprocess
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict


def canonical_json(payload: Any) -> str:
    """Serialize with sorted keys and no whitespace so hashes are stable."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload: Dict[str, Any]) -> str:
    """Short SHA-256 of a config tree."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:16]


def file_hash(path: str | Path) -> str:
    """Short SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()[:16]


@lru_cache(maxsize=1)
def git_describe() -> str:
    """`git describe --always --dirty` of the working tree, or 'unknown'."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    if result.returncode != 0:
        return "unknown"
    return result.stdout.strip() or "unknown"


def provenance_header(cfg_hash: str, seed: int | None) -> Dict[str, Any]:
    """The {git-describe, config hash, seed} triple carried by every output."""
    return {"git_describe": git_describe(), "config_hash": cfg_hash, "seed": seed}
