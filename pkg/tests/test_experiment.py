import json
import os
import pickle
from types import SimpleNamespace

import numpy as np
import pytest

from meanfield import bundle, experiment
from meanfield.errors import CollisionDetected, ConfigInvalid, UnsupportedDimensionError
from meanfield.experiment import (
    ExperimentConfig,
    convergence_study,
    eta_schedule,
    evaluate_gates,
    run_experiment,
    simulate_one,
    verify_bundle,
)
from utils.utils import load_bundle_schema

SMALL = dict(horizon=0.25, delta=0.01, stages=2, track_boxes=4, shell_anchors=2)


class TestExperimentConfig:
    def test_rejects_bad_fields(self):
        with pytest.raises(ConfigInvalid) as excinfo:
            ExperimentConfig(ns=(256, 64), alpha=1.2, kappa=1)
        assert len(excinfo.value.messages) == 3

    def test_hash_ignores_output_dir(self):
        assert ExperimentConfig(output_dir="a").config_hash() == ExperimentConfig(output_dir="b").config_hash()
        assert ExperimentConfig(alpha=0.4).config_hash() != ExperimentConfig().config_hash()

    def test_dict_has_resolved_beta(self):
        payload = ExperimentConfig(dim=2).as_dict()
        assert payload["beta"] == pytest.approx(1.25)
        assert payload["ns"] == [64]
        json.dumps(payload)


class TestEtaSchedule:
    def test_geometric_stages(self):
        schedule = eta_schedule(0.0625, 2, 1.0)
        assert [stage.index for stage in schedule] == [0, 1, 2]
        assert schedule[0].inner == 0.0625
        assert schedule[0].outer == pytest.approx(0.25)
        assert schedule[1].outer == pytest.approx(0.25 * np.sqrt(2))
        assert schedule[-1].outer == pytest.approx(0.0625**0.25)
        assert (schedule[0].t_start, schedule[0].t_end) == (0.0, 0.5)
        assert (schedule[2].t_start, schedule[2].t_end) == (0.5, 1.0)
        for previous, stage in zip(schedule[1:], schedule[2:]):
            assert stage.inner == previous.outer


class TestGates:
    def test_violations_sorted_by_time_then_gate(self):
        record = SimpleNamespace(
            epsilon=0.01,
            dim=2,
            beta=1.25,
            t=np.array([0.0, 0.5, 1.0]),
            m=np.array([1.0, 1.0, 1.0]),
            K=np.array([1.0, 1.0, 3.0]),
            Ebar=np.zeros(3),
            dEbar=np.array([0.0, 100.0, 0.0]),
        )
        stage = {"fitted_C": 5.0, "t_end": 0.5, "stretched_boxes": 1, "no_stretch_horizon": 0.2, "horizon": 0.5}
        violations = evaluate_gates(record, 0.5, [stage], stages=1)
        assert [(v["time"], v["name"]) for v in violations] == [
            (pytest.approx(0.3), "g5_no_stretch"),
            (0.5, "g1_separation"),
            (0.5, "g4_linf_constant"),
            (1.0, "g2_position_smallness"),
        ]

    def test_quiet_record_passes(self):
        record = SimpleNamespace(
            epsilon=0.01, dim=2, beta=1.25, t=np.array([0.0]), m=np.ones(1), K=np.ones(1), Ebar=np.zeros(1), dEbar=np.zeros(1)
        )
        assert evaluate_gates(record, 0.5, [], stages=4) == []

    def test_gates_run_in_two_dimensions(self):
        outcome = simulate_one(ExperimentConfig(ns=(16,), dim=2, **SMALL), 16)
        assert outcome.gates_applicable
        assert outcome.collision is None
        assert outcome.fconv is None
        times = [v["time"] for v in outcome.gate_violations]
        assert times == sorted(times)


class TestRunExperiment:
    def test_bundle(self, catalog):
        config = ExperimentConfig(ns=(64, 256), **SMALL)
        result = run_experiment(config, output_dir=str(catalog))
        for name in (bundle.DIAGNOSTICS_FILE, bundle.SHELLS_FILE, bundle.TRACKING_FILE, bundle.SUMMARY_FILE):
            assert os.path.isfile(os.path.join(result.bundle_dir, name))

        summary = bundle.read_json(os.path.join(result.bundle_dir, bundle.SUMMARY_FILE))
        assert set(load_bundle_schema()["summary.json"]["keys"]) <= set(summary)
        assert summary["gates_applicable"] is False
        assert [run["N"] for run in summary["runs"]] == [64, 256]
        assert summary["empirical_N_tilde"] == 64
        assert result.collisions == []
        assert len(summary["stages"]["64"]) == 3
        assert set(summary["fconv_by_N"]) == {"64", "256"}
        assert all(np.isfinite(value) and value >= 0 for value in summary["fconv_by_N"].values())
        assert all(
            {"drift_violations", "det_violations"} <= set(stage) for stages in summary["stages"].values() for stage in stages
        )

        rows = bundle.read_table(os.path.join(result.bundle_dir, bundle.DIAGNOSTICS_FILE))
        assert {row["N"] for row in rows} == {64.0, 256.0}
        shells = bundle.read_json(os.path.join(result.bundle_dir, bundle.SHELLS_FILE))
        assert len(shells["64"]) == 2

    def test_reruns_are_reproducible(self, catalog):
        config = ExperimentConfig(ns=(64,), **SMALL)
        first = run_experiment(config, output_dir=str(catalog / "a"), catalog=False)
        second = run_experiment(config, output_dir=str(catalog / "b"), catalog=False)
        for name in (bundle.DIAGNOSTICS_FILE, bundle.SUMMARY_FILE):
            with open(os.path.join(first.bundle_dir, name)) as a, open(os.path.join(second.bundle_dir, name)) as b:
                assert a.read() == b.read()

    def test_verify(self, catalog):
        result = run_experiment(ExperimentConfig(ns=(64,), **SMALL), output_dir=str(catalog), catalog=False)
        report = verify_bundle(result.bundle_dir)
        assert report.checked > 0
        assert not any("bracket" in violation for violation in report.violations)
        assert len(report.violations) <= result.invariant_violations

        path = os.path.join(result.bundle_dir, bundle.TRACKING_FILE)
        records = bundle.read_jsonl(path)
        tampered = [dict(records[0], step=0, count=5), dict(records[0], step=1, count=4)]
        bundle.write_jsonl(path, tampered)
        report = verify_bundle(result.bundle_dir)
        assert not report.ok
        assert any("count fell" in violation for violation in report.violations)


class TestConvergenceStudy:
    def test_study(self, tmp_path):
        config = ExperimentConfig(
            ns=(16, 64), horizon=0.125, delta=0.01, oracle_nx=64, oracle_nv=64, oracle_checkpoints=(0.0625, 0.125)
        )
        result = convergence_study(config, output_dir=str(tmp_path))
        assert len(result.rows) == 4
        assert all(row["weak_distance"] >= 0 and row["fconv"] >= 0 for row in result.rows)
        assert set(result.summary["fconv_by_N"]) == {"16", "64"}
        assert set(result.summary["decay_exponents"]) == {"weak_distance", "fconv"}
        assert result.summary["oracle"]["dt"] == pytest.approx(0.125)
        assert os.path.isfile(os.path.join(result.bundle_dir, bundle.CONVERGENCE_FILE))
        density = bundle.read_grid_density(os.path.join(result.bundle_dir, bundle.ORACLE_DIR), "f_t0.125")
        assert density.mass == pytest.approx(1.0)

    def test_one_dimension_only(self, tmp_path):
        with pytest.raises(UnsupportedDimensionError):
            convergence_study(ExperimentConfig(dim=2), output_dir=str(tmp_path))

    def test_collided_run_stops_the_study(self, tmp_path, monkeypatch):
        real_run = experiment.run

        def collided_run(*args, **kwargs):
            traj = real_run(*args, **kwargs)
            traj.failure = CollisionDetected(0, 1, 1e-9, time=traj.end_time)
            return traj

        monkeypatch.setattr(experiment, "run", collided_run)
        config = ExperimentConfig(ns=(16,), horizon=0.125, delta=0.01, oracle_nx=32, oracle_nv=32)
        with pytest.raises(CollisionDetected):
            convergence_study(config, output_dir=str(tmp_path))


def test_collision_survives_pickling():
    # runs come back from worker processes pickled
    error = pickle.loads(pickle.dumps(CollisionDetected(3, 7, 1e-6, time=0.25)))
    assert (error.i, error.j, error.distance, error.time) == (3, 7, 1e-6, 0.25)
    assert "Particles 3 and 7 collided at t=0.25" in str(error)
