import math

import numpy as np
import pytest

from meanfield.ensemble import InitialDensitySpec, ParticleEnsemble, epsilon_scale, quiet_start_init
from meanfield.errors import CollisionDetected, WindowMissingError
from meanfield.forces import ForceKernel
from meanfield.integrator import RecordFlags, run, total_energy, total_momentum, verlet_step


class TestVerletStep:
    def test_free_transport(self):
        ens = ParticleEnsemble(np.array([0.0, 1.0]), np.array([1.0, -2.0]))
        after = verlet_step(ens, 0.5, ForceKernel(alpha=0.5, strength=0.0))
        assert after.positions[:, 0] == pytest.approx([0.5, 0.0])
        assert after.velocities[:, 0] == pytest.approx([1.0, -2.0])

    def test_time_reversible(self, small_ensemble):
        kernel = ForceKernel(alpha=0.5, delta=0.05)
        forward = verlet_step(small_ensemble, 0.01, kernel)
        back = verlet_step(forward, -0.01, kernel)
        assert np.allclose(back.positions, small_ensemble.positions, atol=1e-12)
        assert np.allclose(back.velocities, small_ensemble.velocities, atol=1e-12)

    def test_zero_step(self, small_ensemble, kernel):
        with pytest.raises(ValueError):
            verlet_step(small_ensemble, 0.0, kernel)

    def test_momentum_conserved(self, small_ensemble):
        kernel = ForceKernel(alpha=0.5, delta=0.01)
        ens = small_ensemble
        for _ in range(10):
            ens = verlet_step(ens, 0.01, kernel)
        assert total_momentum(ens) == pytest.approx(total_momentum(small_ensemble), abs=1e-12)


class TestRun:
    def test_grid(self, free_trajectory):
        traj = free_trajectory
        assert traj.dt == pytest.approx(traj.epsilon / 8)
        assert traj.n_samples == math.ceil(0.25 / traj.dt - 1e-9) + 1
        assert traj.end_time >= 0.25 - 1e-12
        assert traj.ok

    def test_free_transport_moves_linearly(self, free_trajectory):
        traj = free_trajectory
        k = traj.n_samples - 1
        expected = traj.positions[0] + traj.times[k] * traj.velocities[0]
        assert np.allclose(traj.positions[k], expected, atol=1e-12)
        assert np.all(traj.field_mags == 0.0)

    def test_energy_drift_is_small(self):
        ens = quiet_start_init(InitialDensitySpec(), 64, seed=0)
        kernel = ForceKernel(alpha=0.5, delta=0.05)
        traj = run(ens, 0.25, kernel, 16)
        energies = [total_energy(traj.snapshot(k), kernel) for k in range(traj.n_samples)]
        assert max(energies) - min(energies) < 1e-3 * abs(energies[0]) + 1e-6

    def test_collision_at_start_raises(self):
        ens = ParticleEnsemble(np.array([0.0, 0.0, 1.0, 2.0]), np.array([0.0, 1.0, 0.0, 1.0]))
        with pytest.raises(CollisionDetected) as excinfo:
            run(ens, 0.1, ForceKernel(alpha=0.5))
        assert excinfo.value.time == 0.0

    def test_collision_later_keeps_partial_trajectory(self):
        # head-on pair with negligible repulsion meets after two steps
        dt = epsilon_scale(1.0, 2, 1) / 4
        ens = ParticleEnsemble(np.array([-2 * dt, 2 * dt]), np.array([1.0, -1.0]))
        kernel = ForceKernel(alpha=0.5, strength=1e-12)
        traj = run(ens, 2.0, kernel, 4, support_radius=1.0)
        assert not traj.ok
        assert isinstance(traj.failure, CollisionDetected)
        assert traj.n_samples == 2
        assert traj.failure.time == pytest.approx(traj.end_time + traj.dt)

    def test_field_vectors_recorded_on_request(self, small_ensemble, kernel):
        without = run(small_ensemble, 0.05, ForceKernel(alpha=0.5, delta=0.01))
        assert without.field_vecs is None
        with_vecs = run(small_ensemble, 0.05, ForceKernel(alpha=0.5, delta=0.01), record=RecordFlags(field_vecs=True))
        assert with_vecs.field_vecs.shape == with_vecs.positions.shape
        assert np.allclose(np.linalg.norm(with_vecs.field_vecs, axis=2), with_vecs.field_mags)

    def test_index_of(self, free_trajectory):
        traj = free_trajectory
        assert traj.index_of(traj.times[5]) == 5
        with pytest.raises(WindowMissingError):
            traj.index_of(traj.dt * 2.5)
        with pytest.raises(WindowMissingError):
            traj.index_of(traj.end_time + 1.0)

    def test_invalid_arguments(self, small_ensemble, kernel):
        with pytest.raises(ValueError):
            run(small_ensemble, 0.0, kernel)
        with pytest.raises(ValueError):
            run(small_ensemble, 0.1, kernel, steps_per_epsilon=1)


class TestConservation:
    def test_momentum_over_unit_time(self, small_ensemble):
        kernel = ForceKernel(alpha=0.5, delta=0.01)
        traj = run(small_ensemble, 1.0, kernel)
        assert traj.ok
        assert traj.end_time >= 1.0 - 1e-12
        start = traj.velocities[0].sum(axis=0)
        drift = np.abs(traj.velocities.sum(axis=1) - start).max()
        assert drift <= 1e-9

    def test_energy_error_is_second_order(self):
        # well separated so the pair potential stays smooth along the run
        ens = ParticleEnsemble(np.array([-0.6, -0.2, 0.2, 0.6]), np.array([0.1, -0.05, 0.05, -0.1]))
        kernel = ForceKernel(alpha=0.5, delta=0.2)
        kappas = [8, 16, 32, 64]
        errors = []
        for kappa in kappas:
            traj = run(ens, 1.0, kernel, kappa, support_radius=1.0)
            energies = np.array([total_energy(traj.snapshot(k), kernel) for k in range(traj.n_samples)])
            errors.append(np.abs(energies - energies[0]).max())
        steps = [epsilon_scale(1.0, 4, 1) / kappa for kappa in kappas]
        order = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert order >= 1.7


class TestTwoBody:
    def test_head_on_pair_turns_around(self):
        # relative motion: w^2 / 2 - 2 sqrt(r) is conserved, so r turns at (3/4)^2
        ens = ParticleEnsemble(np.array([-0.5, 0.5]), np.array([0.5, -0.5]))
        traj = run(ens, 2.0, ForceKernel(alpha=0.5), 64, support_radius=1.0)
        assert traj.ok
        gaps = traj.positions[:, 1, 0] - traj.positions[:, 0, 0]
        assert np.all(gaps > 0)
        assert gaps.min() == pytest.approx(0.5625, abs=2e-3)
        assert np.allclose(traj.positions.sum(axis=1), 0.0, atol=1e-12)
        assert np.allclose(traj.velocities[:, 0], -traj.velocities[:, 1], atol=1e-12)

    def test_equilateral_triangle_stays_equilateral(self):
        angles = np.array([0.5, 0.5 + 2.0 / 3.0, 0.5 + 4.0 / 3.0]) * np.pi
        positions = 0.5 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        ens = ParticleEnsemble(positions, np.zeros((3, 2)))
        traj = run(ens, 0.5, ForceKernel(alpha=0.5), 16, support_radius=1.0)
        assert traj.ok
        for k in range(traj.n_samples):
            x = traj.positions[k]
            sides = [np.linalg.norm(x[0] - x[1]), np.linalg.norm(x[1] - x[2]), np.linalg.norm(x[2] - x[0])]
            assert sides == pytest.approx([sides[0]] * 3, rel=1e-9)
            assert np.allclose(x.sum(axis=0), 0.0, atol=1e-12)
        first = np.linalg.norm(traj.positions[0, 0] - traj.positions[0, 1])
        last = np.linalg.norm(traj.positions[-1, 0] - traj.positions[-1, 1])
        assert last > first
