import json
import logging
import os

from meanfield import experiment
from meanfield.errors import CollisionDetected, ConfigInvalid, NonFiniteStateError, NormConditionsViolated
from meanfield.handlers import command_handlers
from meanfield.handlers.command_handlers import EXIT_COLLISION, EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, exit_code_for
from meanfield.main import build_parser, main

CONFIG = "RUN_N=64\nRUN_T=0.25\nKERNEL_DELTA=0.01\nETA_STAGES=2\nTRACK_BOXES=4\nSHELL_ANCHORS=2\n"


def _write(tmp_path, text):
    path = tmp_path / "experiment.env"
    path.write_text(text)
    return str(path)


def test_parser_wires_every_verb():
    parser = build_parser()
    for argv in (["simulate", "x.env"], ["converge", "x.env", "--output", "out"], ["verify", "b"], ["print-schema"]):
        assert callable(parser.parse_args(argv).handler)


def test_bad_config_exits_with_config_code(tmp_path, capsys):
    path = _write(tmp_path, "KERNEL_ALPHA=2\nMYSTERY=1\n")
    assert main(["simulate", path]) == EXIT_CONFIG
    out = capsys.readouterr().out
    assert "MYSTERY: unknown key" in out


def test_simulate_then_verify(catalog, capsys):
    path = _write(catalog, CONFIG)
    code = main(["simulate", path, "--output", str(catalog / "bundles")])
    assert code in (EXIT_OK, EXIT_INVARIANT)
    out = capsys.readouterr().out
    assert "Gates are only evaluated for d >= 2" in out
    bundles = os.listdir(catalog / "bundles")
    assert len(bundles) == 1 and bundles[0].endswith("-simulate")
    assert main(["verify", str(catalog / "bundles" / bundles[0])]) in (EXIT_OK, EXIT_INVARIANT)


def test_converge_prints_decay(tmp_path, capsys):
    path = _write(tmp_path, "RUN_N=16,64\nRUN_T=0.125\nKERNEL_DELTA=0.01\nORACLE_NX=64\nORACLE_NV=64\n")
    assert main(["converge", path, "--output", str(tmp_path / "bundles")]) == EXIT_OK
    assert "Decay in N" in capsys.readouterr().out


def test_converge_refuses_2d(tmp_path, capsys):
    path = _write(tmp_path, "RUN_DIM=2\n")
    assert main(["converge", path, "--output", str(tmp_path)]) == EXIT_CONFIG
    assert "UnsupportedDimensionError" in capsys.readouterr().out


def test_print_schema(capsys):
    assert main(["print-schema"]) == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert "tracking.jsonl" in schema


def test_exit_code_for_each_failure():
    assert exit_code_for(CollisionDetected(0, 1, 0.0, time=0.0)) == EXIT_COLLISION
    assert exit_code_for(NonFiniteStateError("velocity overflow", time=0.5)) == EXIT_COLLISION
    assert exit_code_for(NormConditionsViolated("diagonal", -0.1)) == EXIT_INVARIANT
    assert exit_code_for(ConfigInvalid(["RUN_N: bad"])) == EXIT_CONFIG


def test_simulate_collision_exits_with_collision_code(tmp_path, capsys, monkeypatch):
    def collide(config, output_dir=None):
        raise CollisionDetected(0, 1, 0.0, time=0.0)

    monkeypatch.setattr(command_handlers, "run_experiment", collide)
    assert main(["simulate", _write(tmp_path, CONFIG)]) == EXIT_COLLISION
    assert "CollisionDetected" in capsys.readouterr().out


def test_simulate_norm_failure_exits_with_invariant_code(tmp_path, monkeypatch):
    def violate(config, output_dir=None):
        raise NormConditionsViolated("off_diagonal", -0.2)

    monkeypatch.setattr(command_handlers, "run_experiment", violate)
    assert main(["simulate", _write(tmp_path, CONFIG)]) == EXIT_INVARIANT


def test_converge_stops_on_a_collided_run(tmp_path, capsys, monkeypatch):
    real_run = experiment.run

    def collided_run(*args, **kwargs):
        traj = real_run(*args, **kwargs)
        traj.failure = CollisionDetected(2, 3, 1e-9, time=traj.end_time)
        return traj

    monkeypatch.setattr(experiment, "run", collided_run)
    path = _write(tmp_path, "RUN_N=16\nRUN_T=0.125\nKERNEL_DELTA=0.01\nORACLE_NX=32\nORACLE_NV=32\n")
    assert main(["converge", path, "--output", str(tmp_path / "bundles")]) == EXIT_COLLISION
    assert "Particles 2 and 3 collided" in capsys.readouterr().out


def test_verify_missing_bundle(tmp_path, capsys):
    assert main(["verify", str(tmp_path / "nowhere")]) == EXIT_CONFIG
    assert "not found" in capsys.readouterr().out


def test_logging_disabled_leaves_no_log_file():
    handlers = logging.getLogger().handlers
    assert not any(isinstance(handler, logging.FileHandler) for handler in handlers)
