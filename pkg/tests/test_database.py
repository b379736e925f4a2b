import math

from meanfield.database import (
    add_or_update_run,
    delete_runs_for_config,
    get_runs_for_config,
    get_smallest_passing_n,
    replace_diagnostic_samples,
)


def _add(n, **kwargs):
    defaults = dict(
        config_hash="abc",
        n=n,
        dim=2,
        alpha=0.5,
        epsilon=n ** -0.25,
        horizon=1.0,
        bundle_path="/tmp/bundle",
    )
    defaults.update(kwargs)
    return add_or_update_run(**defaults)


def test_add_then_update_keeps_one_row(catalog):
    first = _add(256, t_obs=0.5)
    second = _add(256, t_obs=0.75)
    assert first == second
    runs = get_runs_for_config("abc")
    assert len(runs) == 1
    assert runs[0]["t_obs"] == 0.75


def test_non_finite_values_stored_as_null(catalog):
    _add(64, t_obs=math.inf)
    assert get_runs_for_config("abc")[0]["t_obs"] is None


def test_samples_are_replaced(catalog):
    run_id = _add(64)
    rows = [{"t": 0.0, "R": 1.0, "K": 1.0, "m": 0.5, "Ebar": 0.0, "dEbar": 0.0}]
    assert replace_diagnostic_samples(run_id, rows * 3) == 3
    assert replace_diagnostic_samples(run_id, rows) == 1
    assert get_runs_for_config("abc")[0]["samples"] == 1


def test_smallest_passing_n(catalog):
    _add(64, gate_violation_time=0.2, gate_violation_name="g1_separation")
    _add(256, collided=True)
    _add(1024)
    _add(4096)
    assert get_smallest_passing_n("abc", 1.0) == 1024
    assert get_smallest_passing_n("abc", 0.1) == 64
    assert get_smallest_passing_n("other", 1.0) is None


def test_short_runs_do_not_pass(catalog):
    _add(64, horizon=0.5)
    assert get_smallest_passing_n("abc", 1.0) is None


def test_delete_cascades_to_samples(catalog):
    run_id = _add(64)
    replace_diagnostic_samples(run_id, [{"t": 0.0}])
    assert delete_runs_for_config("abc") == 1
    assert get_runs_for_config("abc") == []
