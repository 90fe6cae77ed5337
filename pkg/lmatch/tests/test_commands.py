import json

import numpy as np
import pytest

from main import main
from services.artifact_service import ArtifactService
from services.score_model_service import GaussianMixtureOracle, MixtureParams

TINY_TRAIN = [
    "--set", "schedule.T=50", "--set", "sampler.steps=50", "--set", "data.n_train=32",
    "--set", "model.width=8", "--set", "train.epochs=2", "--set", "train.batch_size=16",
    "--set", "train.N_transitions=3",
]


@pytest.fixture
def oracle_checkpoint(tmp_path):
    out = tmp_path / "oracle"
    assert main(["train", "--preset", "oracle_sampler_check", "--model", "oracle", "--set", "schedule.T=50",
                 "--set", "sampler.steps=20", "--output-dir", str(out)]) == 0
    return out / "model.ckpt.json"


class TestTrain:
    def test_missing_field_names_path(self, tmp_path, capsys):
        code = main(["train", "--preset", "custom", "--output-dir", str(tmp_path)])
        assert code == 2
        assert "data" in capsys.readouterr().err

    def test_unknown_override_key(self, tmp_path, capsys):
        code = main(["train", "--preset", "mixture1d_gauss", "--set", "train.lrate=1", "--output-dir", str(tmp_path)])
        assert code == 2
        assert "train.lrate" in capsys.readouterr().err

    def test_strict_runs_are_byte_identical(self, tmp_path):
        args = ["train", "--preset", "mixture1d_gauss", "--seed", "7", "--strict", "--output-dir", str(tmp_path)]
        assert main(args + TINY_TRAIN) == 0
        first = (tmp_path / "summary.json").read_bytes()
        checkpoint = (tmp_path / "model.ckpt.json").read_bytes()
        assert main(args + TINY_TRAIN) == 0
        assert (tmp_path / "summary.json").read_bytes() == first
        assert (tmp_path / "model.ckpt.json").read_bytes() == checkpoint
        summary = json.loads(first)
        assert "wall_time" not in summary["results"]
        assert summary["results"]["steps"] == 4
        _, header, rows = ArtifactService.read_csv(tmp_path / "loss.csv")
        assert "wall_ms" not in header and len(rows) == 4

    def test_checkpoints_and_trajectories(self, tmp_path):
        code = main(["train", "--preset", "mixture1d_gauss", "--seed", "1", "--output-dir", str(tmp_path),
                     "--set", "train.checkpoint_every=2", "--save-trajectories", "3"] + TINY_TRAIN)
        assert code == 0
        assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == [
            "step_000002.ckpt.json", "step_000004.ckpt.json"]
        assert len(ArtifactService.read_trajectories(tmp_path / "trajectories.jsonl")) == 3

    def test_mixture_fit(self, tmp_path):
        code = main(["train", "--preset", "mixture2d_paramest", "--model", "mixture", "--seed", "0",
                     "--output-dir", str(tmp_path), "--set", "schedule.T=50", "--set", "sampler.steps=50",
                     "--set", "train.epochs=2",
                     "--set", "data.n_train=40"])
        assert code == 0
        record = ArtifactService.load_checkpoint(tmp_path / "model.ckpt.json")
        assert record.kind == "mixture_oracle" and len(record.mixture.weights) == 2


class TestSample:
    def test_zero_samples_write_header_only(self, oracle_checkpoint, tmp_path):
        out = tmp_path / "samples"
        assert main(["sample", "--checkpoint", str(oracle_checkpoint), "--n", "0", "--steps", "10",
                     "--output-dir", str(out)]) == 0
        path = out / "samples_steps10.csv"
        lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
        assert lines == ["x1,x2"]
        assert ArtifactService.read_samples(path).shape == (0, 2)

    def test_samples_per_step_setting(self, oracle_checkpoint, tmp_path):
        out = tmp_path / "samples"
        assert main(["sample", "--checkpoint", str(oracle_checkpoint), "--n", "50", "--steps", "5", "50",
                     "--seed", "3", "--output-dir", str(out)]) == 0
        provenance, _, rows = ArtifactService.read_csv(out / "samples_steps50.csv")
        assert len(rows) == 50
        assert provenance["steps"] == "50" and "model_checkpoint_hash" in provenance
        assert ArtifactService.read_samples(out / "samples_steps5.csv").shape == (50, 2)

    def test_steps_beyond_schedule(self, oracle_checkpoint, tmp_path, capsys):
        code = main(["sample", "--checkpoint", str(oracle_checkpoint), "--steps", "51", "--output-dir", str(tmp_path)])
        assert code == 2
        assert "checkpoint/schedule mismatch" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path):
        assert main(["sample", "--checkpoint", str(tmp_path / "nope.json")]) == 2


class TestEval:
    def test_identical_files(self, tmp_path, rng, capsys):
        path = ArtifactService(tmp_path).write_samples("x.csv", rng.standard_normal((40, 2)))
        assert main(["eval", "mmd", str(path), str(path), "--output", str(tmp_path / "mmd.json")]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["mmd"] == 0.0
        assert json.loads((tmp_path / "mmd.json").read_text())["n_x"] == 40

    def test_permutation_option(self, tmp_path, rng, capsys):
        artifacts = ArtifactService(tmp_path)
        x = artifacts.write_samples("x.csv", rng.standard_normal((30, 1)))
        y = artifacts.write_samples("y.csv", rng.standard_normal((30, 1)) + 3.0)
        assert main(["eval", "mmd", str(x), str(y), "--permutations", "19"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["permutation_test"]["p_value"] == pytest.approx(0.05)

    def test_malformed_row(self, tmp_path, capsys):
        good = ArtifactService(tmp_path).write_samples("x.csv", np.zeros((3, 2)))
        bad = tmp_path / "bad.csv"
        bad.write_text("x1,x2\n0,0\n1\n")
        assert main(["eval", "mmd", str(good), str(bad)]) == 2
        assert "row 3" in capsys.readouterr().err

    def test_table_from_preset(self, tmp_path, paramest_truth):
        names = paramest_truth.param_names()
        base = paramest_truth.param_vector()
        estimates = ArtifactService(tmp_path).write_csv(
            "estimates.csv", ["seed"] + names, [[0] + list(base + 0.1), [1] + list(base - 0.1)])
        output = tmp_path / "table.csv"
        assert main(["eval", "table", str(estimates), "--preset", "mixture2d_paramest", "--method", "lm",
                     "--n", "100", "--output", str(output)]) == 0
        _, header, rows = ArtifactService.read_csv(output)
        mae = [float(r[header.index("MAE")]) for r in rows]
        np.testing.assert_allclose(mae, 0.1, rtol=1e-9)

    def test_table_from_checkpoint(self, tmp_path, linear_schedule, paramest_truth):
        artifacts = ArtifactService(tmp_path)
        truth = artifacts.save_checkpoint("truth", GaussianMixtureOracle(paramest_truth).to_record(
            linear_schedule.to_config()))
        rows = [[0] + list(paramest_truth.param_vector())] * 2
        estimates = artifacts.write_csv("estimates.csv", ["seed"] + paramest_truth.param_names(), rows)
        assert main(["eval", "table", str(estimates), "--truth", str(truth)]) == 0

    def test_table_missing_columns(self, tmp_path):
        estimates = ArtifactService(tmp_path).write_csv("e.csv", ["seed", "mu11"], [[0, 1.0], [1, 1.0]])
        assert main(["eval", "table", str(estimates), "--preset", "mixture2d_paramest"]) == 2


class TestCheck:
    def test_all_checks_pass(self, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        assert main(["check", "--output", str(report_path)]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "max conditional-moment deviation" in out
        report = json.loads(report_path.read_text())
        assert report["passed"] and report["max_moment_deviation"] < 1e-10

    @pytest.mark.slow
    def test_injected_fault_fails(self, capsys):
        assert main(["check", "--fault", "smw_sign"]) == 1
        assert "FAIL  smw_quadratic" in capsys.readouterr().out


class TestExperiment:
    def test_tiny_mmd_study(self, tmp_path):
        code = main(["experiment", "--preset", "mixture1d_gauss", "--seed", "0", "--output-dir", str(tmp_path),
                     "--set", "study.N_values=[2]", "--set", "study.steps_values=[5]",
                     "--set", "study.oracle_samples=0", "--set", "data.n_eval=50"] + TINY_TRAIN)
        assert code == 0
        _, header, rows = ArtifactService.read_csv(tmp_path / "mmd_long.csv")
        methods = sorted(r[header.index("method")] for r in rows)
        assert methods == ["lm", "sm"]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["command"] == "experiment"

    def test_tiny_paramest_study(self, tmp_path):
        code = main(["experiment", "--preset", "mixture2d_paramest", "--output-dir", str(tmp_path),
                     "--set", "seeds=[0,1]", "--set", "study.sample_sizes=[20,40]", "--set", "schedule.T=50",
                     "--set", "sampler.steps=50", "--set", "train.epochs=1"])
        assert code == 0
        _, header, rows = ArtifactService.read_csv(tmp_path / "param_errors.csv")
        assert len(rows) == 2 * 2 * len(MixtureParams([0.5, 0.5], [[0, 0], [1, 1]], [1, 1]).param_names())
        assert (tmp_path / "estimates_lm_n20.csv").exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert len(summary["results"]["consistency"]) == 4
