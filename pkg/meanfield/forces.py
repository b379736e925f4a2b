"""Singular pairwise kernel x/|x|^(1+alpha), its regularization and the mean fields it induces."""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from meanfield.ensemble import ParticleEnsemble
from meanfield.errors import CollisionDetected, InvalidKernelError, SingularInputError

logger = logging.getLogger(__name__)

REPULSIVE = 1
ATTRACTIVE = -1

# Rows and columns of the pairwise sums are processed in blocks of this size
_BLOCK = 256

# field_exact raises when two particles come closer than this many epsilons
COLLISION_FRACTION = 1e-3


@dataclass(frozen=True)
class ForceKernel:
    """
    F(r) = sign * strength * r / (|r| + delta)^(1 + alpha).

    delta = 0 is the exact singular kernel. strength = 0 gives the F = 0 control.
    """

    alpha: float
    sign: int = REPULSIVE
    delta: float = 0.0
    strength: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidKernelError(
                f"alpha must lie strictly between 0 and 1 (singularity weaker than 1/|x|), got {self.alpha}"
            )
        if self.delta < 0:
            raise InvalidKernelError(f"Regularization must be non-negative, got {self.delta}")
        if self.sign not in (REPULSIVE, ATTRACTIVE):
            raise InvalidKernelError(f"sign must be +1 or -1, got {self.sign}")
        if self.strength < 0:
            raise InvalidKernelError(f"strength must be non-negative, got {self.strength}")

    @property
    def coupling(self) -> float:
        return self.sign * self.strength

    def regularized(self, eps: float) -> "ForceKernel":
        return replace(self, delta=eps)


def pair_force(r: np.ndarray, kernel: ForceKernel) -> np.ndarray:
    """Kernel value at displacement(s) r of shape (..., d)."""
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(r, axis=-1, keepdims=True)
    if kernel.delta == 0 and np.any(dist == 0):
        raise SingularInputError("The exact kernel is undefined at r = 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = (dist + kernel.delta) ** -(1.0 + kernel.alpha)
    factor = np.where(dist == 0, 0.0, factor)
    return kernel.coupling * r * factor


def grad_pair_force(r: np.ndarray, kernel: ForceKernel) -> np.ndarray:
    """Jacobian of pair_force at r, shape (..., d, d)."""
    r = np.asarray(r, dtype=float)
    d = r.shape[-1]
    p = 1.0 + kernel.alpha
    dist = np.linalg.norm(r, axis=-1)
    if kernel.delta == 0 and np.any(dist == 0):
        raise SingularInputError("The exact kernel gradient is undefined at r = 0")
    shifted = dist + kernel.delta
    diagonal = shifted ** -p
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(dist > 0, p / (dist * shifted ** (p + 1.0)), 0.0)
    outer = r[..., :, None] * r[..., None, :]
    jac = diagonal[..., None, None] * np.eye(d) - radial[..., None, None] * outer
    return kernel.coupling * jac


def pair_potential(dist: np.ndarray, kernel: ForceKernel) -> np.ndarray:
    """Potential Phi(|r|) with pair_force = -grad Phi."""
    a, delta = kernel.alpha, kernel.delta
    shifted = np.asarray(dist, dtype=float) + delta
    value = shifted ** (1.0 - a) / (1.0 - a)
    if delta > 0:
        value = value + delta * shifted ** -a / a
    return -kernel.coupling * value


def _field_sum(
    targets: np.ndarray,
    sources: np.ndarray,
    kernel: ForceKernel,
    self_indices: Optional[np.ndarray] = None,
    collision_radius: float = 0.0,
) -> np.ndarray:
    """
    (1/N) sum_j F(target - X_j) for every target row.

    Column blocks are folded into the running total with Kahan compensation,
    always in increasing j order, so the result does not depend on how rows
    are scheduled. For the exact kernel with non-zero strength any non-self
    pair closer than collision_radius (or coincident) raises CollisionDetected.
    """
    m, d = targets.shape
    n = sources.shape[0]
    out = np.empty((m, d))
    exponent = -(1.0 + kernel.alpha)
    for r0 in range(0, m, _BLOCK):
        r1 = min(r0 + _BLOCK, m)
        tgt = targets[r0:r1]
        total = np.zeros_like(tgt)
        comp = np.zeros_like(tgt)
        for c0 in range(0, n, _BLOCK):
            c1 = min(c0 + _BLOCK, n)
            disp = tgt[:, None, :] - sources[None, c0:c1, :]
            dist = np.sqrt(np.einsum("ijk,ijk->ij", disp, disp))
            own = None
            if self_indices is not None:
                own = self_indices[r0:r1, None] == np.arange(c0, c1)[None, :]
            if kernel.delta == 0 and kernel.strength > 0:
                _raise_on_collision(dist, own, collision_radius, r0, c0, self_indices)
            with np.errstate(divide="ignore", invalid="ignore"):
                factor = (dist + kernel.delta) ** exponent
            factor[dist == 0] = 0.0
            if own is not None:
                factor[own] = 0.0
            contrib = np.einsum("ij,ijk->ik", factor, disp)
            y = contrib - comp
            t = total + y
            comp = (t - total) - y
            total = t
        out[r0:r1] = total
    return out * (kernel.coupling / n)


def _raise_on_collision(dist, own, collision_radius, r0, c0, self_indices):
    close = (dist < collision_radius) | (dist == 0)
    if own is not None:
        close &= ~own
    if not np.any(close):
        return
    masked = np.where(close, dist, np.inf)
    a, b = np.unravel_index(np.argmin(masked), masked.shape)
    i = self_indices[r0 + a] if self_indices is not None else r0 + a
    raise CollisionDetected(i, c0 + b, masked[a, b])


def _collision_radius(ens: ParticleEnsemble, kernel: ForceKernel, collision_radius: Optional[float]) -> float:
    if collision_radius is not None:
        return collision_radius
    return COLLISION_FRACTION * ens.epsilon if kernel.delta == 0 else 0.0


def fields_exact(
    ens: ParticleEnsemble, kernel: ForceKernel, collision_radius: Optional[float] = None
) -> np.ndarray:
    """
    E(X_i) = (1/N) sum_{j != i} F(X_i - X_j) for all particles, shape (N, d).

    With the exact kernel a pair closer than COLLISION_FRACTION * eps raises
    CollisionDetected unless another collision_radius is given.
    """
    return self_fields(ens.positions, kernel, _collision_radius(ens, kernel, collision_radius))


def self_fields(positions: np.ndarray, kernel: ForceKernel, collision_radius: float = 0.0) -> np.ndarray:
    n = positions.shape[0]
    return _field_sum(positions, positions, kernel, np.arange(n), collision_radius)


def field_exact(
    ens: ParticleEnsemble, i: int, kernel: ForceKernel, collision_radius: Optional[float] = None
) -> np.ndarray:
    """Field felt by particle i, excluding its own contribution."""
    target = ens.positions[i : i + 1]
    radius = _collision_radius(ens, kernel, collision_radius)
    return _field_sum(target, ens.positions, kernel, np.array([i]), radius)[0]


def field_at(
    ens: ParticleEnsemble, x: np.ndarray, kernel: ForceKernel, collision_radius: float = 0.0
) -> np.ndarray:
    """
    F_N(x) = (1/N) sum_j F(x - X_j) over all N particles.

    Accepts a single point of shape (d,) or points of shape (m, d).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    targets = x[None, :] if single else x
    values = _field_sum(targets, ens.positions, kernel, None, collision_radius)
    return values[0] if single else values


def field_regularized(ens: ParticleEnsemble, x: np.ndarray, eps: float, kernel: ForceKernel) -> np.ndarray:
    """E_eps(x) = (1/N) sum_j (x - X_j) / (|x - X_j| + eps)^(1 + alpha)."""
    if eps <= 0:
        raise ValueError(f"Regularization scale must be positive, got {eps}")
    return field_at(ens, x, kernel.regularized(eps))


def grad_field_regularized(ens: ParticleEnsemble, x: np.ndarray, eps: float, kernel: ForceKernel) -> np.ndarray:
    """Analytic d x d Jacobian of field_regularized at the point x."""
    if eps <= 0:
        raise ValueError(f"Regularization scale must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    jacobians = grad_pair_force(x[None, :] - ens.positions, kernel.regularized(eps))
    return jacobians.sum(axis=0) / ens.n
