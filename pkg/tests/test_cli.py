# Tests for the command line (run / check / sample)
import json

import pytest
import yaml
from click.testing import CliRunner

from main import cli
from services.output_service import read_pgm


@pytest.fixture
def runner():
    return CliRunner()


def write_config(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def svgd_config(tmp_path, **svgd):
    settings = {"num_particles": 20, "iterations": 20, "trace_every": 5}
    settings.update(svgd)
    return write_config(tmp_path / "svgd.yaml", {
        "name": "cli-svgd",
        "mode": "svgd",
        "seed": 1,
        "target": {"family": "gaussian", "mean": [0.0, 1.0], "var": 1.0},
        "svgd": settings,
    })


def amortize_config(tmp_path):
    return write_config(tmp_path / "amortize.yaml", {
        "name": "cli-amortize",
        "mode": "amortize",
        "seed": 2,
        "target": {"family": "gaussian", "mean": [1.0], "var": 1.0},
        "amortize": {"iterations": 5, "batch_size": 10, "noise_dim": 2, "eval_samples": 20,
                     "generator": {"hidden": [4], "init_std": 0.5}},
    })



def steingan_config(tmp_path, **steingan):
    settings = {"iterations": 6, "batch_size": 12, "noise_dim": 3, "trace_every": 1, "checkpoint_every": 3,
                "walk_steps": 4, "num_samples": 5,
                "generator": {"hidden": [6], "out_activation": "sigmoid", "init_std": 0.3},
                "energy": {"kind": "joint", "code_dim": 3, "encoder_hidden": [6], "decoder_hidden": [6],
                           "decoder_out_activation": "sigmoid", "init_std": 0.3}}
    settings.update(steingan)
    return write_config(tmp_path / "steingan.yaml", {
        "name": "cli-steingan",
        "mode": "steingan",
        "seed": 3,
        "dataset": {"kind": "glyphs", "n": 40, "num_classes": 3},
        "steingan": settings,
    })

class TestRun:

    def test_svgd_run_writes_artifacts(self, runner, tmp_path):
        """An svgd run leaves every artifact in the run directory."""
        out = tmp_path / "run"
        result = runner.invoke(cli, ["run", svgd_config(tmp_path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        for name in ["config.yaml", "trace.csv", "particles.csv", "checkpoint.json", "metrics.prom", "run.log",
                     "summary.json"]:
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mode"] == "svgd"
        assert (out / "trace.csv").read_text().splitlines()[0].startswith("iteration,mean_0,mean_1")

    def test_runs_are_byte_identical(self, runner, tmp_path):
        """Two runs of one config write identical files."""
        config = svgd_config(tmp_path)
        runner.invoke(cli, ["run", config, "--out", str(tmp_path / "a")])
        runner.invoke(cli, ["run", config, "--out", str(tmp_path / "b")])
        for name in ["trace.csv", "particles.csv"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override(self, runner, tmp_path):
        """--seed replaces the config seed."""
        config = svgd_config(tmp_path)
        runner.invoke(cli, ["run", config, "--out", str(tmp_path / "a")])
        result = runner.invoke(cli, ["run", config, "--out", str(tmp_path / "b"), "--seed", "9"])
        assert result.exit_code == 0, result.output
        assert "seed: 9" in (tmp_path / "b" / "config.yaml").read_text()
        assert (tmp_path / "a" / "particles.csv").read_text() != (tmp_path / "b" / "particles.csv").read_text()

    def test_existing_run_dir_needs_overwrite(self, runner, tmp_path):
        """A used run directory needs --overwrite."""
        config = svgd_config(tmp_path)
        out = str(tmp_path / "run")
        assert runner.invoke(cli, ["run", config, "--out", out]).exit_code == 0
        assert runner.invoke(cli, ["run", config, "--out", out]).exit_code == 4
        assert runner.invoke(cli, ["run", config, "--out", out, "--overwrite"]).exit_code == 0

    def test_config_error_exit_code(self, runner, tmp_path):
        """Config errors exit 2 and name the key."""
        result = runner.invoke(cli, ["run", svgd_config(tmp_path, bogus=1), "--out", str(tmp_path / "run")])
        assert result.exit_code == 2
        assert "svgd.bogus" in result.output
        assert not (tmp_path / "run").exists()

    def test_divergence_exit_code(self, runner, tmp_path):
        """Diverging particles exit 3."""
        config = write_config(tmp_path / "diverge.yaml", {
            "mode": "svgd",
            "target": {"family": "gaussian", "mean": [0.0], "var": 1e-6},
            "svgd": {"num_particles": 1, "step": 1.0, "iterations": 10,
                     "init": {"mean": 1.0, "std": 0.1}},
        })
        result = runner.invoke(cli, ["run", config, "--out", str(tmp_path / "run")])
        assert result.exit_code == 3

    def test_missing_config_file(self, runner, tmp_path):
        """Missing config file exits 2."""
        result = runner.invoke(cli, ["run", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "run")])
        assert result.exit_code == 2

    def test_steingan_run_writes_walk_strip(self, runner, tmp_path):
        """Each class gets one row of walk_steps + 1 glyph tiles."""
        out = tmp_path / "run"
        result = runner.invoke(cli, ["run", steingan_config(tmp_path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert read_pgm(out / "random_walk.pgm").shape == (3 * 8, 5 * 8)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["random_walk"].endswith("random_walk.pgm")
        assert (out / "checkpoint_iter000003.json").exists()

    def test_resume_continues_steingan_run(self, runner, tmp_path):
        """A run resumed from its iteration-3 checkpoint retraces the original tail."""
        config = steingan_config(tmp_path)
        full = tmp_path / "full"
        assert runner.invoke(cli, ["run", config, "--out", str(full)]).exit_code == 0

        tail = tmp_path / "tail"
        result = runner.invoke(cli, ["run", config, "--out", str(tail),
                                     "--resume", str(full / "checkpoint_iter000003.json")])
        assert result.exit_code == 0, result.output
        full_rows = (full / "trace.csv").read_text().splitlines()
        tail_rows = (tail / "trace.csv").read_text().splitlines()
        assert tail_rows[0] == full_rows[0]
        assert tail_rows[1:] == full_rows[4:]
        assert (tail / "random_walk.pgm").read_bytes() == (full / "random_walk.pgm").read_bytes()

    def test_resume_needs_steingan_config(self, runner, tmp_path):
        """Only steingan runs accept a checkpoint to resume from."""
        config = steingan_config(tmp_path)
        runner.invoke(cli, ["run", config, "--out", str(tmp_path / "gan")])
        result = runner.invoke(cli, ["run", svgd_config(tmp_path), "--out", str(tmp_path / "run"),
                                     "--resume", str(tmp_path / "gan" / "checkpoint_iter000003.json")])
        assert result.exit_code == 5


class TestSample:

    def test_sample_from_amortize_checkpoint(self, runner, tmp_path):
        """sample writes a CSV and refuses to clobber it."""
        out = tmp_path / "run"
        assert runner.invoke(cli, ["run", amortize_config(tmp_path), "--out", str(out)]).exit_code == 0
        checkpoint = str(out / "checkpoint.json")

        result = runner.invoke(cli, ["sample", checkpoint, "--n", "7", "--seed", "3"])
        assert result.exit_code == 0, result.output
        lines = (out / "sample_seed3.csv").read_text().splitlines()
        assert lines[0] == "x0"
        assert len(lines) == 8

        assert runner.invoke(cli, ["sample", checkpoint, "--n", "7", "--seed", "3"]).exit_code == 4
        again = runner.invoke(cli, ["sample", checkpoint, "--n", "7", "--seed", "3", "--overwrite"])
        assert again.exit_code == 0
        assert (out / "sample_seed3.csv").read_text().splitlines() == lines

    def test_label_on_unconditional_generator(self, runner, tmp_path):
        """A label for an unconditional generator exits 5."""
        out = tmp_path / "run"
        runner.invoke(cli, ["run", amortize_config(tmp_path), "--out", str(out)])
        result = runner.invoke(cli, ["sample", str(out / "checkpoint.json"), "--n", "2", "--label", "1"])
        assert result.exit_code == 5

    def test_svgd_checkpoint_has_no_generator(self, runner, tmp_path):
        """Sampling an svgd checkpoint exits 5."""
        out = tmp_path / "run"
        runner.invoke(cli, ["run", svgd_config(tmp_path), "--out", str(out)])
        result = runner.invoke(cli, ["sample", str(out / "checkpoint.json"), "--n", "2"])
        assert result.exit_code == 5

    def test_missing_checkpoint(self, runner, tmp_path):
        """Missing checkpoint exits 4."""
        result = runner.invoke(cli, ["sample", str(tmp_path / "nope.json"), "--n", "2"])
        assert result.exit_code == 4


class TestCheck:

    def test_check_passes(self, runner, tmp_path):
        """check prints a passing table and writes checks.json."""
        result = runner.invoke(cli, ["check", "--out", str(tmp_path / "checks")])
        assert result.exit_code == 0, result.output
        assert "overall: passed" in result.output
        data = json.loads((tmp_path / "checks" / "checks.json").read_text())
        assert data["status"] == "passed"

    def test_bad_environment(self, runner, monkeypatch):
        """Malformed environment variables exit 2."""
        monkeypatch.setenv("STEINFORGE_DEFAULT_SEED", "minus-one")
        result = runner.invoke(cli, ["check"])
        assert result.exit_code == 2
        assert "STEINFORGE_DEFAULT_SEED" in result.output
