"""
Artifact service for writing and reading run outputs: CSV tables with
provenance comments, schema-versioned JSON, checkpoints and trajectory files.
"""

import csv
import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from models.records import CheckpointRecord, ParamErrorRow, TelemetryRow, TrajectoryRecord
from services.schedule_service import Trajectory
from utils.debug import debug
from utils.errors import DimensionError, InputFormatError

logger = logging.getLogger(__name__)


def _format(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


class ArtifactService:
    """Service for the files a run leaves behind in its output directory."""

    CSV_COMMENT = "#"
    CHECKPOINT_SUFFIX = ".ckpt.json"

    def __init__(self, output_dir: str | Path):
        """Initialize the artifact service rooted at output_dir."""
        self.output_dir = Path(output_dir)
        self._ensure_output_directory()

    def _ensure_output_directory(self):
        """Ensure the output directory exists."""
        os.makedirs(self.output_dir, exist_ok=True)

    def path(self, name: str) -> Path:
        """Location of an artifact; nested names create their directories."""
        target = self.output_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    # --- CSV --------------------------------------------------------------------

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]],
                  provenance: Optional[Dict[str, Any]] = None) -> Path:
        """Write a CSV whose leading `# key: value` lines carry provenance."""
        buffer = io.StringIO()
        for key, value in (provenance or {}).items():
            buffer.write(f"{self.CSV_COMMENT} {key}: {value}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])
        target = self.path(name)
        target.write_text(buffer.getvalue(), encoding="utf-8")
        debug.print(f"wrote {target}")
        return target

    def write_samples(self, name: str, samples: np.ndarray, provenance: Optional[Dict[str, Any]] = None) -> Path:
        """One sample per row; columns x1..xd."""
        samples = np.atleast_2d(samples)
        header = [f"x{j + 1}" for j in range(samples.shape[1])]
        return self.write_csv(name, header, samples.tolist(), provenance)

    def write_telemetry(self, name: str, rows: Sequence[TelemetryRow], strict: bool = False,
                        provenance: Optional[Dict[str, Any]] = None) -> Path:
        """Loss curve CSV; wall time is left out in strict mode."""
        fields = ["step", "loss", "grad_norm", "barrier_count"] + ([] if strict else ["wall_ms"])
        return self.write_csv(name, fields, ([getattr(r, f) for f in fields] for r in rows), provenance)

    def write_param_table(self, name: str, rows: Sequence[ParamErrorRow],
                          provenance: Optional[Dict[str, Any]] = None) -> Path:
        """Parameter error table; std_error is the cross-replicate standard deviation."""
        meta = dict(provenance or {})
        meta["std_error_convention"] = "cross-replicate sample standard deviation (ddof=1)"
        fields = list(ParamErrorRow.model_fields)
        return self.write_csv(name, fields, ([getattr(r, f) for f in fields] for r in rows), meta)

    @staticmethod
    def read_csv(path: str | Path) -> tuple[Dict[str, str], List[str], List[List[str]]]:
        """Return (provenance, header, rows) of a CSV written by write_csv."""
        provenance: Dict[str, str] = {}
        header: Optional[List[str]] = None
        rows: List[List[str]] = []
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise InputFormatError(f"cannot read {path}: {exc}") from exc
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            if line.startswith(ArtifactService.CSV_COMMENT):
                key, _, value = line[1:].partition(":")
                provenance[key.strip()] = value.strip()
                continue
            record = next(csv.reader([line]))
            if header is None:
                header = record
            else:
                if len(record) != len(header):
                    raise InputFormatError(f"expected {len(header)} fields, found {len(record)}", row=number)
                rows.append(record)
        if header is None:
            raise InputFormatError(f"{path} has no header row")
        return provenance, header, rows

    @classmethod
    def read_samples(cls, path: str | Path) -> np.ndarray:
        """Numeric sample matrix from a CSV; malformed rows report their line number."""
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise InputFormatError(f"cannot read {path}: {exc}") from exc
        header: Optional[List[str]] = None
        data: List[List[float]] = []
        for number, line in enumerate(lines, start=1):
            if not line.strip() or line.startswith(cls.CSV_COMMENT):
                continue
            fields = next(csv.reader([line]))
            if header is None:
                header = fields
                continue
            if len(fields) != len(header):
                raise InputFormatError(f"expected {len(header)} fields, found {len(fields)}", row=number)
            try:
                values = [float(v) for v in fields]
            except ValueError as exc:
                raise InputFormatError(f"non-numeric value: {exc}", row=number) from exc
            if not all(np.isfinite(values)):
                raise InputFormatError("non-finite value", row=number)
            data.append(values)
        if header is None:
            raise InputFormatError(f"{path} has no header row")
        if not data:
            return np.empty((0, len(header)))
        return np.asarray(data, dtype=np.float64)

    # --- JSON -------------------------------------------------------------------

    def write_json(self, name: str, payload: BaseModel | Dict[str, Any]) -> Path:
        """Pretty JSON with sorted keys."""
        data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
        target = self.path(name)
        target.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        debug.print(f"wrote {target}")
        return target

    def save_checkpoint(self, name: str, record: CheckpointRecord) -> Path:
        if not name.endswith(self.CHECKPOINT_SUFFIX):
            name = f"{name}{self.CHECKPOINT_SUFFIX}"
        return self.write_json(name, record)

    @staticmethod
    def load_checkpoint(path: str | Path) -> CheckpointRecord:
        """Parse and validate a checkpoint file."""
        try:
            return CheckpointRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputFormatError(f"cannot read checkpoint {path}: {exc}") from exc
        except ValidationError as exc:
            raise InputFormatError(f"invalid checkpoint {path}: {exc.errors()[0]['msg']}") from exc

    # --- trajectories -----------------------------------------------------------

    def write_trajectories(self, name: str, paths: Sequence[Trajectory]) -> Path:
        """One JSON object per line."""
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as handle:
            for path in paths:
                handle.write(path.to_record().model_dump_json() + "\n")
        return target

    @staticmethod
    def read_trajectories(path: str | Path) -> List[Trajectory]:
        paths: List[Trajectory] = []
        with open(path, encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    paths.append(Trajectory.from_record(TrajectoryRecord.model_validate_json(line)))
                except (ValidationError, ValueError) as exc:
                    raise InputFormatError(str(exc), row=number) from exc
        if len({p.dim for p in paths}) > 1:
            raise DimensionError("trajectories in one file must share d")
        return paths
