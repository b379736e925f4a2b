"""Velocity-Verlet integration of the N-body system and trajectory recording."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from meanfield.ensemble import ParticleEnsemble, epsilon_scale
from meanfield.errors import (
    CollisionDetected,
    MeanFieldError,
    NonFiniteStateError,
    WindowMissingError,
)
from meanfield.forces import COLLISION_FRACTION, ForceKernel, pair_potential, self_fields

logger = logging.getLogger(__name__)

# Relative tolerance when matching a requested time to the step grid
GRID_TOL = 1e-9


@dataclass(frozen=True)
class RecordFlags:
    field_vecs: bool = False


@dataclass
class Trajectory:
    """
    Snapshots at t_k = k * dt, k = 0..S, with the field felt by every particle.

    times, positions, velocities, field_mags (and field_vecs when recorded)
    share their first axis.
    """

    dt: float
    epsilon: float
    kernel: ForceKernel
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    field_mags: np.ndarray
    field_vecs: Optional[np.ndarray] = None
    support_radius: Optional[float] = None
    steps_per_epsilon: int = 8
    failure: Optional[MeanFieldError] = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def snapshot(self, k: int) -> ParticleEnsemble:
        return ParticleEnsemble(self.positions[k], self.velocities[k], support_radius=self.support_radius)

    def index_of(self, t: float) -> int:
        """Grid index of time t; raises WindowMissingError if t is off the recorded grid."""
        k = int(round(t / self.dt))
        if k < 0 or k >= self.n_samples or abs(k * self.dt - t) > GRID_TOL * max(1.0, abs(t)) + 1e-12:
            raise WindowMissingError(
                f"t={t:.6g} is not a recorded grid time (dt={self.dt:.6g}, end={self.end_time:.6g})"
            )
        return k

    def indices_between(self, t_start: float, t_end: float) -> np.ndarray:
        slack = GRID_TOL * max(1.0, abs(t_end)) + 1e-12
        return np.flatnonzero((self.times >= t_start - slack) & (self.times <= t_end + slack))


def total_momentum(ens: ParticleEnsemble) -> np.ndarray:
    return ens.velocities.sum(axis=0) / ens.n


def total_energy(ens: ParticleEnsemble, kernel: ForceKernel) -> float:
    """Kinetic plus pair potential energy per particle."""
    kinetic = 0.5 * float(np.sum(ens.velocities**2)) / ens.n
    iu, ju = np.triu_indices(ens.n, k=1)
    dist = np.linalg.norm(ens.positions[iu] - ens.positions[ju], axis=1)
    potential = float(np.sum(pair_potential(dist, kernel))) / ens.n**2
    return kinetic + potential


def _advance(positions, velocities, accel, dt, kernel, collision_radius):
    half = velocities + 0.5 * dt * accel
    new_positions = positions + dt * half
    new_accel = self_fields(new_positions, kernel, collision_radius)
    new_velocities = half + 0.5 * dt * new_accel
    return new_positions, new_velocities, new_accel


def verlet_step(
    ens: ParticleEnsemble, dt: float, kernel: ForceKernel, collision_radius: float = 0.0
) -> ParticleEnsemble:
    """
    One half-kick, drift, half-kick step.

    A negative dt runs the step backwards; for delta > 0 kernels a step of dt
    followed by one of -dt returns the initial state up to rounding.
    """
    if dt == 0:
        raise ValueError("Time step must be non-zero")
    accel = self_fields(ens.positions, kernel, collision_radius)
    positions, velocities, _ = _advance(ens.positions, ens.velocities, accel, dt, kernel, collision_radius)
    return ParticleEnsemble(positions, velocities, support_radius=ens.support_radius)


def run(
    ens0: ParticleEnsemble,
    horizon: float,
    kernel: ForceKernel,
    steps_per_epsilon: int = 8,
    record: Optional[RecordFlags] = None,
    support_radius: Optional[float] = None,
) -> Trajectory:
    """
    Integrate from t = 0 with dt = eps / kappa until the first grid time >= horizon.

    A collision or a non-finite state stops the run; the trajectory recorded
    so far is returned with `failure` set instead of raising.

    Args:
        ens0 (ParticleEnsemble): Initial state.
        horizon (float): Time T to reach.
        kernel (ForceKernel): Interaction kernel.
        steps_per_epsilon (int): kappa, at least 2.
        record (RecordFlags): Which optional per-step arrays to keep.
        support_radius (float, optional): R0 used for eps; defaults to the ensemble's.

    Returns:
        Trajectory: The recorded run.
    """
    if horizon <= 0:
        raise ValueError(f"Horizon must be positive, got {horizon}")
    if steps_per_epsilon < 2:
        raise ValueError(f"Need at least 2 steps per epsilon, got {steps_per_epsilon}")
    record = record or RecordFlags()

    r0 = support_radius or ens0.support_radius or ens0.radius()
    eps = epsilon_scale(r0, ens0.n, ens0.dim)
    dt = eps / steps_per_epsilon
    n_steps = max(1, math.ceil(horizon / dt - GRID_TOL))
    collision_radius = COLLISION_FRACTION * eps if kernel.delta == 0 else 0.0
    logger.info("Running N=%d d=%d eps=%.4g dt=%.4g steps=%d", ens0.n, ens0.dim, eps, dt, n_steps)

    positions, velocities = ens0.positions.copy(), ens0.velocities.copy()
    failure = None
    try:
        accel = self_fields(positions, kernel, collision_radius)
    except CollisionDetected as exc:
        exc.time = 0.0
        raise
    xs, vs, mags = [positions], [velocities], [np.linalg.norm(accel, axis=1)]
    vecs = [accel] if record.field_vecs else None

    for step in range(1, n_steps + 1):
        try:
            positions, velocities, accel = _advance(positions, velocities, accel, dt, kernel, collision_radius)
        except CollisionDetected as exc:
            exc.time = step * dt
            logger.warning("Stopping run: %s", exc)
            failure = exc
            break
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(velocities))):
            failure = NonFiniteStateError(f"Non-finite phase coordinates at step {step}", time=step * dt)
            logger.warning("Stopping run: %s", failure)
            break
        xs.append(positions)
        vs.append(velocities)
        mags.append(np.linalg.norm(accel, axis=1))
        if vecs is not None:
            vecs.append(accel)
        logger.debug("step %d/%d done", step, n_steps)

    return Trajectory(
        dt=dt,
        epsilon=eps,
        kernel=kernel,
        times=np.arange(len(xs)) * dt,
        positions=np.stack(xs),
        velocities=np.stack(vs),
        field_mags=np.stack(mags),
        field_vecs=np.stack(vecs) if vecs is not None else None,
        support_radius=r0,
        steps_per_epsilon=steps_per_epsilon,
        failure=failure,
    )
