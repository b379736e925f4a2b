import pytest

from config.config import DESK_MAX_N
from meanfield.forces import ATTRACTIVE
from utils.utils import (
    CONFIG_KEYS,
    get_message,
    load_bundle_schema,
    load_experiment_config,
    parse_experiment_config,
)


class TestParseExperimentConfig:
    def test_defaults(self):
        ok, config = parse_experiment_config({})
        assert ok
        assert config.ns == (64,)
        assert config.resolved_beta() == 1.0

    def test_full_config(self):
        ok, config = parse_experiment_config(
            {
                "DENSITY_KIND": "two-stream",
                "RUN_N": "256, 1024",
                "RUN_DIM": "2",
                "KERNEL_ALPHA": "0.4",
                "KERNEL_SIGN": "attractive",
                "DIAG_SHORT_TIME": "no",
                "ORACLE_WIDTHS": "0.1,0.2,0.3",
            }
        )
        assert ok
        assert config.density.kind == "two-stream"
        assert config.ns == (256, 1024)
        assert config.dim == 2
        assert config.sign == ATTRACTIVE
        assert not config.short_time
        assert config.oracle_widths == (0.1, 0.2, 0.3)

    def test_keys_are_case_insensitive(self):
        ok, config = parse_experiment_config({"run_t": "0.5"})
        assert ok
        assert config.horizon == 0.5

    def test_every_message_collected(self):
        ok, messages = parse_experiment_config(
            {"RUN_N": "many", "KERNEL_ALPHA": "1.5", "NOT_A_KEY": "1", "RUN_DIM": "4", "RUN_T": ""}
        )
        assert not ok
        text = "\n".join(messages)
        assert "RUN_N" in text
        assert "NOT_A_KEY: unknown key" in text
        assert "RUN_DIM" in text
        assert "RUN_T: missing value" in text

    def test_validation_after_conversion(self):
        ok, messages = parse_experiment_config({"KERNEL_ALPHA": "1.5", "RUN_N": "1024,64"})
        assert not ok
        assert any(message.startswith("KERNEL_ALPHA") for message in messages)
        assert any(message.startswith("RUN_N") for message in messages)

    def test_large_n_needs_opt_in(self):
        big = str(DESK_MAX_N * 4)
        ok, messages = parse_experiment_config({"RUN_N": big})
        assert not ok
        assert "RUN_ALLOW_LARGE" in messages[0]
        ok, config = parse_experiment_config({"RUN_N": big, "RUN_ALLOW_LARGE": "true"})
        assert ok

    @pytest.mark.parametrize(
        "key,value",
        [("KERNEL_SIGN", "sideways"), ("DENSITY_KIND", "cube"), ("DIAG_SHORT_TIME", "maybe"), ("ORACLE_WIDTHS", "0.1")],
    )
    def test_bad_values(self, key, value):
        ok, messages = parse_experiment_config({key: value})
        assert not ok
        assert messages[0].startswith(key)

    def test_inconsistent_density(self):
        ok, messages = parse_experiment_config({"DENSITY_KIND": "two-stream", "DENSITY_STREAM_WIDTH": "0.9"})
        assert not ok
        assert messages[0].startswith("DENSITY")

    def test_every_key_has_a_converter(self):
        for section, name, convert in CONFIG_KEYS.values():
            assert section in ("density", "experiment")
            assert callable(convert)


def test_load_from_file(tmp_path):
    path = tmp_path / "experiment.env"
    path.write_text("# small run\nRUN_N=16,64\nKERNEL_DELTA=0.01\n")
    ok, config = load_experiment_config(str(path))
    assert ok
    assert config.ns == (16, 64)
    assert config.delta == 0.01


def test_load_missing_file(tmp_path):
    ok, messages = load_experiment_config(str(tmp_path / "missing.env"))
    assert not ok
    assert "no such config file" in messages[0]


def test_messages_and_schema():
    assert get_message("verifyOk", path="b", checked=3) == "Bundle b verified (3 records)"
    schema = load_bundle_schema()
    assert "summary.json" in schema
    assert "N" in schema["diagnostics.csv"]["columns"]
