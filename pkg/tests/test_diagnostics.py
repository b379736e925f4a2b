import numpy as np
import pytest

from meanfield.diagnostics import (
    CSV_COLUMNS,
    check_beta,
    check_mlinf,
    closest_phase_pair,
    compute_diagnostics,
    default_beta,
    discrete_linf,
    epsilon_sample_indices,
    initial_field_sup,
    lemma4_fit,
    min_phase_separation,
    support_radii,
    theorem1_window,
    windowed_force_avg,
    windowed_force_diff_avg,
)
from meanfield.ensemble import ParticleEnsemble
from meanfield.errors import (
    InvalidBetaError,
    UnsupportedDimensionError,
    WindowMissingError,
    WindowTooCoarseError,
)
from meanfield.forces import ForceKernel
from meanfield.integrator import Trajectory


class TestSupportRadii:
    def test_free_transport_bound(self, free_trajectory):
        radii = support_radii(free_trajectory)
        assert radii.K == pytest.approx(radii.K_linf)
        assert radii.transport_bound_holds

    def test_up_to_outside_run(self, free_trajectory):
        with pytest.raises(WindowMissingError):
            support_radii(free_trajectory, up_to=10.0)


class TestPhaseSeparation:
    def test_closest_pair(self):
        ens = ParticleEnsemble(np.array([0.0, 1.0, 1.1]), np.array([0.0, 0.0, 0.05]))
        i, j, dist = closest_phase_pair(ens)
        assert (i, j) == (1, 2)
        assert dist == pytest.approx(0.15)

    def test_coincident_pair_is_infinite(self):
        ens = ParticleEnsemble(np.array([0.0, 0.0, 1.0]), np.array([0.5, 0.5, 0.0]))
        assert min_phase_separation(ens, 0.1) == float("inf")


class TestWindowedAverages:
    def test_free_transport_has_zero_field(self, free_trajectory):
        result = windowed_force_avg(free_trajectory, free_trajectory.epsilon)
        assert result.value == 0.0
        assert not result.short_horizon

    def test_constant_field_average(self, interacting_trajectory):
        traj = interacting_trajectory
        result = windowed_force_avg(traj, traj.epsilon)
        assert result.value <= traj.field_mags.max() * (1 + 1e-12)
        assert result.value >= traj.field_mags.min()

    def test_window_too_coarse(self, free_trajectory):
        with pytest.raises(WindowTooCoarseError):
            windowed_force_avg(free_trajectory, free_trajectory.dt)

    def test_short_horizon(self, interacting_trajectory):
        traj = interacting_trajectory
        early = windowed_force_avg(traj, traj.epsilon, up_to=traj.times[3])
        assert early.short_horizon

    def test_force_difference_needs_beta_one_in_1d(self, interacting_trajectory):
        traj = interacting_trajectory
        with pytest.raises(UnsupportedDimensionError):
            windowed_force_diff_avg(traj, traj.epsilon, beta=1.0, short_time=False)
        result = windowed_force_diff_avg(traj, traj.epsilon, beta=1.0, short_time=True)
        assert result.value > 0
        assert not result.sampled

    def test_force_difference_sampled_pairs(self, interacting_trajectory):
        traj = interacting_trajectory
        exact = windowed_force_diff_avg(traj, traj.epsilon, 1.0, short_time=True)
        sampled = windowed_force_diff_avg(traj, traj.epsilon, 1.0, pair_budget=50, short_time=True)
        assert sampled.sampled
        assert sampled.value <= exact.value * (1 + 1e-12)


class TestBeta:
    def test_defaults(self):
        assert default_beta(1, 0.5) == 1.0
        assert default_beta(2, 0.5) == pytest.approx(1.25)

    def test_range(self):
        check_beta(2, 0.5, 1.2)
        with pytest.raises(InvalidBetaError):
            check_beta(2, 0.5, 1.6)
        with pytest.raises(InvalidBetaError):
            check_beta(2, 0.5, 1.0)


class TestDiscreteLinf:
    def test_bracket_ordering(self, small_ensemble):
        for scale in (0.05, 0.25, 1.0):
            bracket = discrete_linf(small_ensemble, scale)
            assert bracket.lower <= bracket.upper <= 2.0**2 * bracket.lower * (1 + 1e-12)

    def test_single_cluster(self):
        ens = ParticleEnsemble(np.array([0.0, 0.01, 5.0, 5.01]), np.zeros(4))
        bracket = discrete_linf(ens, 0.1)
        assert bracket.lower == pytest.approx(0.5 / 0.2**2)

    def test_bad_scale(self, small_ensemble):
        with pytest.raises(ValueError):
            discrete_linf(small_ensemble, 0.0)

    def test_mlinf_bound_for_quiet_start(self, small_ensemble):
        eps = small_ensemble.epsilon
        m = min_phase_separation(small_ensemble, eps)
        report = check_mlinf(m, discrete_linf(small_ensemble, eps).upper, 1)
        assert report.holds

    def test_mlinf_collision_is_vacuous(self):
        assert check_mlinf(float("inf"), 1e9, 2).holds

    def test_mlinf_violation_is_reported(self):
        report = check_mlinf(0.01, 1.0, 1)
        assert not report.holds
        assert report.ratio > 1


class TestComputeDiagnostics:
    def test_record_layout(self, interacting_trajectory):
        traj = interacting_trajectory
        record = compute_diagnostics(traj)
        indices = epsilon_sample_indices(traj)
        assert len(record.t) == len(indices)
        assert record.t[0] == 0.0
        assert record.t[-1] == traj.end_time
        assert np.all(np.diff(record.m) >= 0)
        assert np.all(np.diff(record.K) >= 0)
        assert record.eta == pytest.approx(np.sqrt(traj.epsilon))
        rows = record.rows()
        assert set(rows[0]) == set(CSV_COLUMNS)

    def test_brackets_and_mlinf(self, interacting_trajectory):
        record = compute_diagnostics(interacting_trajectory)
        assert np.all(record.linf_eps_lo <= record.linf_eps_hi)
        assert np.all(record.linf_eps_hi <= 4.0 * record.linf_eps_lo * (1 + 1e-12))
        assert record.mlinf[0].holds
        assert record.mlinf_violations == sum(1 for report in record.mlinf if not report.holds)

    def test_initial_field(self, interacting_trajectory):
        assert initial_field_sup(interacting_trajectory) > 0


class TestShortTimeChecks:
    def test_window_covers_short_free_run(self, free_trajectory):
        record = compute_diagnostics(free_trajectory)
        window = theorem1_window(record)
        assert window.T_obs == pytest.approx(record.t[-1])
        assert window.K_ok and window.R_ok

    def test_lemma4_free_transport(self, free_trajectory):
        record = compute_diagnostics(free_trajectory)
        assert lemma4_fit(record) == 0.0

    def test_lemma4_interacting(self, interacting_trajectory):
        record = compute_diagnostics(interacting_trajectory)
        constant = lemma4_fit(record)
        integral = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(record.t) * (record.Ebar[1:] + record.Ebar[:-1]))])
        scale = record.t + record.epsilon * record.Ebar + integral
        growth = record.K - record.K[0]
        assert np.all(growth <= constant * scale + 1e-12)


def _steady(field_vecs, positions, dt=0.01, eps=0.08, steps=16):
    """A recorded run where nothing moves and every particle feels a fixed field."""
    field_vecs = np.asarray(field_vecs, dtype=float)[None].repeat(steps + 1, axis=0)
    positions = np.asarray(positions, dtype=float)[None].repeat(steps + 1, axis=0)
    return Trajectory(
        dt=dt,
        epsilon=eps,
        kernel=ForceKernel(alpha=0.5),
        times=np.arange(steps + 1) * dt,
        positions=positions,
        velocities=np.zeros_like(positions),
        field_mags=np.linalg.norm(field_vecs, axis=2),
        field_vecs=field_vecs,
    )


class TestSteadyFields:
    def test_constant_field_average_is_the_field(self):
        traj = _steady([[0.7], [0.7], [-0.7]], [[0.0], [1.0], [2.0]])
        assert windowed_force_avg(traj, traj.epsilon).value == pytest.approx(0.7)

    def test_short_horizon_average(self):
        traj = _steady([[0.7], [-0.2]], [[0.0], [1.0]], steps=5)
        result = windowed_force_avg(traj, traj.epsilon)
        assert result.short_horizon
        assert result.value == pytest.approx(0.7 * 0.05 / 0.08)

    def test_uniform_field_has_no_difference(self):
        traj = _steady([[0.7], [0.7], [0.7]], [[0.0], [1.0], [2.0]])
        assert windowed_force_diff_avg(traj, traj.epsilon, 1.0, short_time=True).value == 0.0

    def test_difference_hand_values(self):
        pair = _steady([[1.0], [-1.0]], [[0.0], [1.0]])
        assert windowed_force_diff_avg(pair, pair.epsilon, 1.0, short_time=True).value == pytest.approx(2.0 / 1.08)
        triple = _steady([[0.0], [1.0], [1.0]], [[0.0], [1.0], [3.0]])
        result = windowed_force_diff_avg(triple, triple.epsilon, 1.0, short_time=True)
        assert result.value == pytest.approx(1.0 / 1.08)
        assert result.argmax == (0, 1)

    def test_difference_scales_with_the_field(self):
        fields = np.array([[0.3], [-0.1], [0.8]])
        positions = [[0.0], [0.4], [1.5]]
        base = windowed_force_diff_avg(_steady(fields, positions), 0.08, 1.0, short_time=True).value
        scaled = windowed_force_diff_avg(_steady(3.0 * fields, positions), 0.08, 1.0, short_time=True).value
        assert scaled == pytest.approx(3.0 * base)


class TestLinfAgainstExhaustiveSearch:
    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("scale", [0.05, 0.2])
    def test_bracket_contains_the_true_sup(self, seed, scale):
        rng = np.random.default_rng(seed)
        ens = ParticleEnsemble(rng.uniform(-1, 1, 40), rng.uniform(-1, 1, 40))
        points = ens.phase_points
        # some optimal box has its lower edges on particle coordinates
        centers = np.stack(np.meshgrid(points[:, 0] + scale, points[:, 1] + scale, indexing="ij"), axis=-1)
        centers = centers.reshape(-1, 2)
        inside = np.abs(points[None, :, :] - centers[:, None, :]).max(axis=2) <= scale * (1 + 1e-12)
        true_sup = inside.sum(axis=1).max() / ens.n / (2.0 * scale) ** 2
        bracket = discrete_linf(ens, scale)
        assert bracket.lower <= true_sup * (1 + 1e-12)
        assert true_sup <= bracket.upper * (1 + 1e-12)
