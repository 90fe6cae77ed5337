import numpy as np
import pytest

from models.records import ParamErrorRow, TelemetryRow
from services.artifact_service import ArtifactService
from services.schedule_service import forward_sample_batch, sample_time_grids
from services.score_model_service import GaussianMixtureOracle
from utils.errors import InputFormatError


@pytest.fixture
def artifacts(tmp_path):
    return ArtifactService(tmp_path / "out")


class TestCsv:
    def test_provenance_and_float_precision(self, artifacts):
        value = 0.1 + 0.2
        path = artifacts.write_csv("table.csv", ["a", "b"], [[1, value]], {"config_hash": "abc", "seed": 4})
        provenance, header, rows = ArtifactService.read_csv(path)
        assert provenance == {"config_hash": "abc", "seed": "4"}
        assert header == ["a", "b"]
        assert float(rows[0][1]) == value

    def test_samples_round_trip(self, artifacts, rng):
        samples = rng.standard_normal((5, 3))
        path = artifacts.write_samples("samples.csv", samples, {"seed": 1})
        assert path.read_text().splitlines()[1] == "x1,x2,x3"
        np.testing.assert_array_equal(ArtifactService.read_samples(path), samples)

    def test_header_only_samples(self, artifacts):
        path = artifacts.write_samples("empty.csv", np.empty((0, 2)))
        assert ArtifactService.read_samples(path).shape == (0, 2)

    @pytest.mark.parametrize("body, row", [("x1,x2\n1,2\n3\n", 3), ("x1\n1\nabc\n", 3), ("x1\n# note\n1\nnan\n", 4)])
    def test_malformed_rows_report_line(self, tmp_path, body, row):
        path = tmp_path / "bad.csv"
        path.write_text(body)
        with pytest.raises(InputFormatError) as excinfo:
            ArtifactService.read_samples(path)
        assert excinfo.value.row == row
        assert f"row {row}" in str(excinfo.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputFormatError):
            ArtifactService.read_samples(tmp_path / "missing.csv")

    def test_telemetry_columns(self, artifacts):
        rows = [TelemetryRow(step=1, loss=0.5, grad_norm=2.0, barrier_count=0, wall_ms=3.0)]
        _, strict_header, _ = ArtifactService.read_csv(artifacts.write_telemetry("strict.csv", rows, strict=True))
        _, header, _ = ArtifactService.read_csv(artifacts.write_telemetry("loose.csv", rows))
        assert "wall_ms" not in strict_header
        assert header[-1] == "wall_ms"

    def test_param_table_records_convention(self, artifacts):
        rows = [ParamErrorRow(param="mu11", MAE=0.1, std_error=0.2, n=100, method="lm")]
        provenance, header, body = ArtifactService.read_csv(artifacts.write_param_table("t.csv", rows))
        assert "ddof=1" in provenance["std_error_convention"]
        assert header == ["param", "MAE", "std_error", "n", "method"]
        assert body[0][0] == "mu11"


class TestCheckpoints:
    def test_round_trip(self, artifacts, linear_schedule, paramest_truth):
        record = GaussianMixtureOracle(paramest_truth).to_record(linear_schedule.to_config())
        path = artifacts.save_checkpoint("model", record)
        assert path.name == "model.ckpt.json"
        assert ArtifactService.load_checkpoint(path) == record

    def test_nested_names(self, artifacts, linear_schedule, small_mlp):
        path = artifacts.save_checkpoint("checkpoints/step_000010", small_mlp.to_record(linear_schedule.to_config()))
        assert path.parent.name == "checkpoints"

    def test_invalid_checkpoint(self, tmp_path):
        path = tmp_path / "bad.ckpt.json"
        path.write_text('{"kind": "tree"}')
        with pytest.raises(InputFormatError):
            ArtifactService.load_checkpoint(path)


class TestTrajectories:
    def test_round_trip(self, artifacts, linear_schedule, rng):
        batch = forward_sample_batch(rng.standard_normal((3, 2)), sample_time_grids(3, 4, 1000, rng),
                                     linear_schedule, rng)
        path = artifacts.write_trajectories("paths.jsonl", batch.trajectories())
        loaded = ArtifactService.read_trajectories(path)
        assert len(loaded) == 3
        np.testing.assert_array_equal(loaded[1].states, batch.states[1])
        np.testing.assert_array_equal(loaded[2].grid.points, batch.grids[2])

    def test_bad_line(self, tmp_path):
        path = tmp_path / "paths.jsonl"
        path.write_text('{"dim": 1, "grid": [0, 5], "states": [0.0, 1.0], "noises": [0.5]}\n{"dim": 1}\n')
        with pytest.raises(InputFormatError) as excinfo:
            ArtifactService.read_trajectories(path)
        assert excinfo.value.row == 2
