import json

import numpy as np
import pytest

from blindmimo import cli
from blindmimo.detector import matrix_from_csv
from blindmimo.harness import (
    ExperimentConfig,
    run_experiment,
    run_gradient_check,
    run_sweep,
    trial_seed,
)
from blindmimo.likelihood import gradient_laplacian
from blindmimo.optimizer import OptimizerConfig, Trajectory
from blindmimo.signal_model import ConfigError, ScenarioConfig

FAST = OptimizerConfig(total_iterations=400)


def small_config(tmp_path, **kw):
    base = dict(
        scenario=ScenarioConfig(4, [2, 2], 120, seed=11),
        optimizer=FAST,
        trials=3,
        output_dir=tmp_path / "out",
    )
    base.update(kw)
    return ExperimentConfig(**base)


def write_config(path, cfg: ExperimentConfig):
    path.write_text(json.dumps(cfg.to_dict(), indent=2))
    return path


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = small_config(tmp_path)
        again = ExperimentConfig.load(write_config(tmp_path / "c.json", cfg))
        assert again == cfg

    def test_minimal_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"scenario": {"num_antennas": 2, "cell_user_counts": [2],
                                              "coherence_block": 10}}))
        cfg = ExperimentConfig.load(p)
        assert cfg.trials == 1 and cfg.optimizer == OptimizerConfig()

    @pytest.mark.parametrize("patch", [
        {"extra": 1},
        {"trials": 0},
        {"emit": ["rho_csv", "png"]},
        {"optimizer": {"lr": 0.1}},
        {"scenario": {"num_antennas": 2, "cell_user_counts": [2], "coherence_block": 4}},
    ])
    def test_rejects(self, tmp_path, patch):
        data = small_config(tmp_path).to_dict()
        data.update(patch)
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)


class TestRunExperiment:
    def test_artifacts(self, tmp_path):
        cfg = small_config(tmp_path)
        summary = run_experiment(cfg)
        out = cfg.output_dir
        assert sorted(p.name for p in out.iterdir()) == sorted(
            ["summary.json"] + [f"trial_{i:03d}_{k}.csv" for i in range(3) for k in ("rho", "trajectory")])
        for i in range(3):
            rho = matrix_from_csv((out / f"trial_{i:03d}_rho.csv").read_text())
            assert rho.shape == (4, 4) and np.all(rho >= 0)
            traj = Trajectory.from_csv((out / f"trial_{i:03d}_trajectory.csv").read_text())
            assert len(traj) == 40
        data = json.loads((out / "summary.json").read_text())
        assert data["n_trials"] == 3 and data["n_failed"] == 0
        assert data["trial_seeds"] == [trial_seed(11, i) for i in range(3)]
        assert summary.wall_clock_seconds and len(summary.wall_clock_seconds) == 3
        assert "wall_clock_seconds" not in data

    def test_summary_consistency(self, tmp_path):
        summary = run_experiment(small_config(tmp_path))
        per_trial = [np.mean(m) for m in summary.matched]
        assert summary.mean_matched == pytest.approx(np.mean(per_trial), abs=1e-12)
        flat = np.concatenate(summary.matched)
        assert summary.min_matched == flat.min() and summary.max_matched == flat.max()
        cell0 = np.mean([np.mean(m[:2]) for m in summary.matched])
        assert summary.per_cell_means[0] == pytest.approx(cell0, abs=1e-12)

    def test_emit_subset(self, tmp_path):
        cfg = small_config(tmp_path, emit={"summary_json"}, trials=1)
        run_experiment(cfg)
        assert [p.name for p in cfg.output_dir.iterdir()] == ["summary.json"]

    def test_deterministic_bytes(self, tmp_path):
        a = small_config(tmp_path, output_dir=tmp_path / "a", trials=2)
        b = a.replace(output_dir=tmp_path / "b")
        run_experiment(a)
        run_experiment(b, workers=2)
        names = sorted(p.name for p in a.output_dir.iterdir())
        assert names == sorted(p.name for p in b.output_dir.iterdir())
        for name in names:
            assert (a.output_dir / name).read_bytes() == (b.output_dir / name).read_bytes()

    def test_failures_recorded(self, tmp_path, monkeypatch):
        import blindmimo.harness as harness
        from blindmimo.optimizer import OptimizationError

        real = harness.detect

        def sometimes(Y, cfg, truth, rng):
            if Y.entries[0, 0] > 0:
                raise OptimizationError("forced")
            return real(Y, cfg, truth, rng)

        monkeypatch.setattr(harness, "detect", sometimes)
        summary = run_experiment(small_config(tmp_path, trials=6))
        assert 0 < summary.n_failed < 6
        ok = [m for m in summary.matched if m is not None]
        assert len(ok) == 6 - summary.n_failed
        assert summary.mean_matched == pytest.approx(np.mean([np.mean(m) for m in ok]))
        assert all("forced" in f["reason"] for f in summary.failures)


class TestSweep:
    def test_paired_and_table(self, tmp_path):
        cfg = small_config(tmp_path, trials=2)
        summaries = run_sweep(cfg, [60, 240])
        assert [s.config.scenario.coherence_block for s in summaries] == [60, 240]
        assert summaries[0].trial_seeds == summaries[1].trial_seeds
        lines = (cfg.output_dir / "sweep.csv").read_text().splitlines()
        assert lines[0] == "T,mean_matched,min_matched"
        assert [int(l.split(",")[0]) for l in lines[1:]] == [60, 240]
        assert (cfg.output_dir / "T60" / "summary.json").exists()

    def test_single(self, tmp_path):
        cfg = small_config(tmp_path, trials=1)
        (s,) = run_sweep(cfg, [120])
        direct = run_experiment(cfg.replace(output_dir=tmp_path / "direct"))
        assert s.to_json() == direct.to_json()

    def test_rejects_short_block(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep(small_config(tmp_path), [8])


class TestGradientCheck:
    def test_passes(self):
        report = run_gradient_check(4, 16, 20, seed=0)
        assert len(report.errors) == 20
        assert report.passed and report.max_error <= 1e-5

    def test_empty(self):
        report = run_gradient_check(4, 16, 0)
        assert report.errors == [] and report.passed

    def test_negative_control(self):
        bad = lambda B, Y: gradient_laplacian(B, Y) + 1e-3
        assert not run_gradient_check(4, 16, 3, gradient=bad).passed


class TestCLI:
    def test_grad_check(self, capsys):
        assert cli.main(["grad-check", "--K", "4", "--T", "16", "--n", "20"]) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True

    def test_grad_check_corrupted(self, capsys):
        assert cli.main(["grad-check", "--n", "3", "--corrupt-gradient"]) == 2

    def test_simulate_overrides(self, tmp_path, capsys):
        cfg = small_config(tmp_path, trials=1)
        path = write_config(tmp_path / "c.json", cfg)
        out = tmp_path / "override"
        assert cli.main(["simulate", "--config", str(path), "--seed", "5", "--out", str(out)]) == 0
        data = json.loads((out / "summary.json").read_text())
        assert data["config"]["scenario"]["seed"] == 5
        assert data["trial_seeds"] == [trial_seed(5, 0)]
        assert "trials=1" in capsys.readouterr().out

    def test_sweep(self, tmp_path):
        path = write_config(tmp_path / "c.json", small_config(tmp_path, trials=1))
        assert cli.main(["sweep", "--config", str(path), "--T", "60,120"]) == 0
        assert (tmp_path / "out" / "sweep.csv").exists()

    def test_sweep_rejects_T(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", small_config(tmp_path))
        assert cli.main(["sweep", "--config", str(path), "--T", "8"]) == 1
        assert not (tmp_path / "out").exists()

    def test_config_errors(self, tmp_path):
        assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["simulate", "--config", str(bad)]) == 1
        bad.write_text(json.dumps({"scenario": {"num_antennas": 3, "cell_user_counts": [2],
                                                "coherence_block": 50}}))
        assert cli.main(["simulate", "--config", str(bad)]) == 1

    def test_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        path = write_config(tmp_path / "c.json", small_config(tmp_path, trials=1))
        assert cli.main(["simulate", "--config", str(path), "--out", str(blocker / "sub")]) == 3
