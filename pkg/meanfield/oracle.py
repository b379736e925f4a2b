"""
One-dimensional continuum reference: a grid solver for the Vlasov equation
with the same kernel, and the statistics comparing it with a particle run.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import map_coordinates
from scipy.signal import fftconvolve

from meanfield.diagnostics import _running_windowed_sup, epsilon_sample_indices
from meanfield.ensemble import InitialDensitySpec, ParticleEnsemble
from meanfield.errors import MisalignedTimesError, SupportOverflowError, UnsupportedDimensionError
from meanfield.forces import ForceKernel, pair_potential, self_fields
from meanfield.integrator import GRID_TOL, Trajectory

logger = logging.getLogger(__name__)

# Fraction of each grid side that must stay (almost) empty
BUFFER_FRACTION = 0.1

DEFAULT_WIDTHS = (0.1, 0.2, 0.4)

_POINT_BLOCK = 1024


@dataclass(frozen=True)
class GridDensity:
    """f(x, v) >= 0 sampled at the nodes of a uniform tensor grid; node (i, k) stands for its cell."""

    x_nodes: np.ndarray
    v_nodes: np.ndarray
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.x_nodes), len(self.v_nodes)):
            raise ValueError(f"Values {values.shape} do not match the grid ({len(self.x_nodes)}, {len(self.v_nodes)})")
        if np.any(values < 0):
            raise ValueError("A density must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def dx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def dv(self) -> float:
        return float(self.v_nodes[1] - self.v_nodes[0])

    @property
    def cell_area(self) -> float:
        return self.dx * self.dv

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    @property
    def rho(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.dv

    def boundary_mass(self, fraction: float = BUFFER_FRACTION) -> float:
        """Mass in the outer `fraction` band of each side of the grid."""
        nx, nv = self.values.shape
        bx, bv = max(1, int(fraction * nx)), max(1, int(fraction * nv))
        inner = self.values[bx : nx - bx, bv : nv - bv].sum()
        return float((self.values.sum() - inner) * self.cell_area)

    def header(self) -> dict:
        return {
            "nx": len(self.x_nodes),
            "nv": len(self.v_nodes),
            "x_min": float(self.x_nodes[0]),
            "x_max": float(self.x_nodes[-1]),
            "v_min": float(self.v_nodes[0]),
            "v_max": float(self.v_nodes[-1]),
            "time": self.time,
            "dtype": "float64",
            "order": "C",
        }


def grid_density_from_spec(
    spec: InitialDensitySpec,
    nx: int = 128,
    nv: int = 128,
    x_extent: Optional[float] = None,
    v_extent: Optional[float] = None,
) -> GridDensity:
    """
    Sample the product density of `spec` on [-x_extent, x_extent] x [-v_extent, v_extent].

    The default extents leave room for the support to drift for a unit time
    and keep the buffer band empty. Values are rescaled to mass one.
    """
    x_extent = x_extent or 2.0 * (spec.r0_x + spec.r0_v)
    v_extent = v_extent or 2.0 * spec.r0_v
    x_nodes = np.linspace(-x_extent, x_extent, nx)
    v_nodes = np.linspace(-v_extent, v_extent, nv)
    values = spec.position_pdf(x_nodes)[:, None] * spec.velocity_pdf(v_nodes)[None, :]
    grid = GridDensity(x_nodes, v_nodes, values)
    return GridDensity(x_nodes, v_nodes, values / grid.mass)


def grid_density_from_ensemble(ens: ParticleEnsemble, like: GridDensity) -> GridDensity:
    """Cell histogram of the particles on the grid of `like`, as a density of mass one."""
    if ens.dim != 1:
        raise UnsupportedDimensionError("Grid densities are one-dimensional")
    half_x, half_v = 0.5 * like.dx, 0.5 * like.dv
    x_edges = np.append(like.x_nodes - half_x, like.x_nodes[-1] + half_x)
    v_edges = np.append(like.v_nodes - half_v, like.v_nodes[-1] + half_v)
    counts, _, _ = np.histogram2d(ens.positions[:, 0], ens.velocities[:, 0], bins=[x_edges, v_edges])
    return GridDensity(like.x_nodes, like.v_nodes, counts / ens.n / like.cell_area, time=like.time)


def _cell_integrals(offsets: np.ndarray, h: float, kernel: ForceKernel, cut: Optional[float] = None) -> np.ndarray:
    """
    int of F(u) over u in [offset - h/2, offset + h/2], optionally only over |u| >= cut.

    The potential Phi is an even antiderivative of -F, so the integral over
    [a, b] is Phi(|a|) - Phi(|b|).
    """
    lo, hi = offsets - 0.5 * h, offsets + 0.5 * h
    total = pair_potential(np.abs(lo), kernel) - pair_potential(np.abs(hi), kernel)
    if cut is None:
        return total
    inner_lo, inner_hi = np.maximum(lo, -cut), np.minimum(hi, cut)
    overlap = inner_hi > inner_lo
    near = pair_potential(np.abs(inner_lo), kernel) - pair_potential(np.abs(inner_hi), kernel)
    return total - np.where(overlap, near, 0.0)


def field_from_density(
    rho: np.ndarray,
    x_nodes: np.ndarray,
    kernel: ForceKernel,
    at: Optional[np.ndarray] = None,
    cut: Optional[float] = None,
) -> np.ndarray:
    """
    F_inf(x) = int F(x - y) rho(y) dy for rho piecewise constant on the cells.

    Each cell is integrated in closed form through the potential, so the
    singular self-cell needs no special treatment. On the grid the sum is a
    convolution (fftconvolve); at arbitrary points `at` it is summed directly.
    With `cut` only the part |x - y| >= cut is kept.

    Args:
        rho (np.ndarray): Spatial density at x_nodes.
        x_nodes (np.ndarray): Uniform grid.
        kernel (ForceKernel): Pair kernel; alpha < 1 is enforced by ForceKernel itself.
        at (np.ndarray, optional): Evaluation points; defaults to the grid.
        cut (float, optional): Drop the near field |x - y| < cut.

    Returns:
        np.ndarray: Field values at the grid or at `at`.
    """
    rho = np.asarray(rho, dtype=float)
    h = float(x_nodes[1] - x_nodes[0])
    if at is None:
        n = len(x_nodes)
        offsets = np.arange(-(n - 1), n) * h
        weights = _cell_integrals(offsets, h, kernel, cut)
        return fftconvolve(rho, weights)[n - 1 : 2 * n - 1]
    at = np.asarray(at, dtype=float).ravel()
    out = np.empty(len(at))
    for p0 in range(0, len(at), _POINT_BLOCK):
        chunk = at[p0 : p0 + _POINT_BLOCK]
        weights = _cell_integrals(chunk[:, None] - x_nodes[None, :], h, kernel, cut)
        out[p0 : p0 + _POINT_BLOCK] = weights @ rho
    return out


def _advect_x(values: np.ndarray, f: GridDensity, dt: float) -> np.ndarray:
    ix = (f.x_nodes[:, None] - f.v_nodes[None, :] * dt - f.x_nodes[0]) / f.dx
    iv = np.broadcast_to(np.arange(len(f.v_nodes))[None, :], ix.shape)
    return map_coordinates(values, [ix, iv], order=3, mode="constant", cval=0.0)


def _advect_v(values: np.ndarray, f: GridDensity, accel: np.ndarray, dt: float) -> np.ndarray:
    iv = (f.v_nodes[None, :] - accel[:, None] * dt - f.v_nodes[0]) / f.dv
    ix = np.broadcast_to(np.arange(len(f.x_nodes))[:, None], iv.shape)
    return map_coordinates(values, [ix, iv], order=3, mode="constant", cval=0.0)


@dataclass
class OracleSolution:
    """Densities at times[k] = k * dt and the mass drift of each step before renormalization."""

    densities: List[GridDensity]
    times: np.ndarray
    dt: float
    kernel: ForceKernel
    mass_drift: List[float] = field(default_factory=list)

    @property
    def final(self) -> GridDensity:
        return self.densities[-1]

    def at(self, t: float) -> GridDensity:
        k = int(round(t / self.dt))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > GRID_TOL * max(1.0, t) + 1e-12:
            raise MisalignedTimesError(f"t={t:.6g} is not an oracle time (dt={self.dt:.6g})")
        return self.densities[k]

    def field_at(self, t: float, x: np.ndarray) -> np.ndarray:
        """F_inf(t, x), linear in t between oracle steps."""
        if t < -GRID_TOL or t > self.times[-1] * (1 + GRID_TOL) + 1e-12:
            raise MisalignedTimesError(f"t={t:.6g} lies outside the oracle run [0, {self.times[-1]:.6g}]")
        s = min(max(t / self.dt, 0.0), len(self.times) - 1.0)
        k = min(int(math.floor(s)), len(self.times) - 2) if len(self.times) > 1 else 0
        w = s - k
        nodes = self.densities[0].x_nodes
        left = field_from_density(self.densities[k].rho, nodes, self.kernel, at=x)
        if w <= GRID_TOL or len(self.times) == 1:
            return left
        right = field_from_density(self.densities[k + 1].rho, nodes, self.kernel, at=x)
        return (1.0 - w) * left + w * right


def solve(
    f0: GridDensity, T: float, dt: float, kernel: ForceKernel, overflow_tol: float = 1e-6
) -> OracleSolution:
    """
    Strang-split semi-Lagrangian solve of the Vlasov equation up to T.

    Each step is a half x-advection, the field of the current rho, a full
    v-advection and another half x-advection, with cubic interpolation.
    Negative values are clipped and the mass is scaled back to its initial
    value; the drift before that rescaling is recorded. dt is shortened so
    that a whole number of steps reaches T exactly.

    Raises SupportOverflowError when more than `overflow_tol` mass reaches
    the buffer band of the grid.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    steps = max(1, math.ceil(T / dt - GRID_TOL))
    dt = T / steps
    mass0 = f0.mass
    current = f0
    densities, drift = [f0], []
    logger.info("Oracle solve: grid %dx%d, %d steps of %.4g", len(f0.x_nodes), len(f0.v_nodes), steps, dt)
    for step in range(1, steps + 1):
        values = _advect_x(current.values, current, 0.5 * dt)
        rho = values.sum(axis=1) * current.dv
        accel = field_from_density(rho, current.x_nodes, kernel)
        values = _advect_v(values, current, accel, dt)
        values = _advect_x(values, current, 0.5 * dt)
        values = np.clip(values, 0.0, None)
        mass = values.sum() * current.cell_area
        drift.append(float(abs(mass - mass0)))
        current = GridDensity(current.x_nodes, current.v_nodes, values * (mass0 / mass), time=step * dt)
        overflow = current.boundary_mass()
        if overflow > overflow_tol:
            raise SupportOverflowError(
                f"Mass {overflow:.3e} reached the grid buffer at t={step * dt:.4g}; enlarge the grid"
            )
        densities.append(current)
        logger.debug("oracle step %d/%d, drift %.3e", step, steps, drift[-1])
    return OracleSolution(densities=densities, times=np.arange(steps + 1) * dt, dt=dt, kernel=kernel, mass_drift=drift)


def _dictionary_centers(ens: ParticleEnsemble, f: GridDensity, per_axis: int) -> Tuple[np.ndarray, np.ndarray]:
    support = f.values > 0
    xs = f.x_nodes[support.any(axis=1)]
    vs = f.v_nodes[support.any(axis=0)]
    x_lo = min(ens.positions.min(), xs.min() if len(xs) else np.inf)
    x_hi = max(ens.positions.max(), xs.max() if len(xs) else -np.inf)
    v_lo = min(ens.velocities.min(), vs.min() if len(vs) else np.inf)
    v_hi = max(ens.velocities.max(), vs.max() if len(vs) else -np.inf)
    return np.linspace(x_lo, x_hi, per_axis), np.linspace(v_lo, v_hi, per_axis)


def weak_distance(
    ens: ParticleEnsemble,
    f: GridDensity,
    widths: Sequence[float] = DEFAULT_WIDTHS,
    centers_per_axis: int = 9,
) -> float:
    """
    max over a dictionary of test functions of |<mu_N, phi> - <f, phi>|.

    The dictionary holds Gaussians exp(-|z - c|^2 / 2w^2) in phase space, one
    per width and per centre of a lattice over the shared support, each
    scaled by w e^(1/2) to Lipschitz constant one.
    """
    if ens.dim != 1:
        raise UnsupportedDimensionError("The weak distance is computed against a 1D-1V grid density")
    cx, cv = _dictionary_centers(ens, f, centers_per_axis)
    x, v = ens.positions[:, 0], ens.velocities[:, 0]
    worst = 0.0
    for w in widths:
        scale = w * math.exp(0.5)
        # Gaussians factorize, so both pairings are products of 1D profiles
        px = np.exp(-((x[:, None] - cx[None, :]) ** 2) / (2 * w * w))
        pv = np.exp(-((v[:, None] - cv[None, :]) ** 2) / (2 * w * w))
        particles = px.T @ pv / ens.n
        gx = np.exp(-((f.x_nodes[:, None] - cx[None, :]) ** 2) / (2 * w * w))
        gv = np.exp(-((f.v_nodes[:, None] - cv[None, :]) ** 2) / (2 * w * w))
        grid = gx.T @ f.values @ gv * f.cell_area
        worst = max(worst, float(np.abs(particles - grid).max() * scale))
    return worst


def _particle_fields(traj: Trajectory) -> np.ndarray:
    if traj.field_vecs is not None:
        return traj.field_vecs[:, :, 0]
    return np.stack([self_fields(traj.positions[k], traj.kernel)[:, 0] for k in range(traj.n_samples)])


def _check_alignment(traj: Trajectory, solution: OracleSolution):
    if traj.dim != 1:
        raise UnsupportedDimensionError("The oracle is one-dimensional")
    if traj.end_time > solution.times[-1] * (1 + GRID_TOL) + 1e-12:
        raise MisalignedTimesError(
            f"Trajectory ends at {traj.end_time:.6g}, after the oracle's {solution.times[-1]:.6g}"
        )


def force_convergence_stat(
    traj: Trajectory,
    solution: OracleSolution,
    eps: Optional[float] = None,
    sample_indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    sup over particles and eps-windows ending by t of (1/eps) int |F_N(X_i) - F_inf(X_i)| ds,
    at every sampled trajectory time.
    """
    _check_alignment(traj, solution)
    eps = eps or traj.epsilon
    indices = list(sample_indices) if sample_indices is not None else epsilon_sample_indices(traj)
    particle = _particle_fields(traj)
    last = max(indices)
    gap = np.empty((last + 1, traj.n))
    for k in range(last + 1):
        continuum = solution.field_at(float(traj.times[k]), traj.positions[k, :, 0])
        gap[k] = np.abs(particle[k] - continuum)
    return _running_windowed_sup(gap, traj.dt, eps, indices)


@dataclass(frozen=True)
class NearFarSplit:
    cut: float
    near: float
    far: float


def near_far_split(ens: ParticleEnsemble, f: GridDensity, kernel: ForceKernel, cut: float) -> NearFarSplit:
    """
    near: max_i (1/N) sum over j != i with |X_i - X_j| < cut of |F(X_i - X_j)|.
    far: max_i of the particle and continuum fields restricted to |x - y| >= cut.
    """
    if ens.dim != 1:
        raise UnsupportedDimensionError("The near/far split is computed in 1D")
    x = ens.positions[:, 0]
    near = np.zeros(ens.n)
    far_particle = np.zeros(ens.n)
    for r0 in range(0, ens.n, _POINT_BLOCK):
        u = x[r0 : r0 + _POINT_BLOCK, None] - x[None, :]
        dist = np.abs(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            forces = kernel.coupling * u * (dist + kernel.delta) ** -(1.0 + kernel.alpha)
        forces[dist == 0] = 0.0
        close = dist < cut
        near[r0 : r0 + _POINT_BLOCK] = np.abs(np.where(close, forces, 0.0)).sum(axis=1) / ens.n
        far_particle[r0 : r0 + _POINT_BLOCK] = np.where(close, 0.0, forces).sum(axis=1) / ens.n
    far_continuum = field_from_density(f.rho, f.x_nodes, kernel, at=x, cut=cut)
    return NearFarSplit(cut=cut, near=float(near.max()), far=float(np.abs(far_particle - far_continuum).max()))


def weak_form_residual(
    traj: Trajectory,
    solution: OracleSolution,
    center: Tuple[float, float] = (0.0, 0.0),
    width: float = 0.5,
) -> float:
    """
    |<mu_N(T), phi> - <mu_N(0), phi> - int_0^T <mu_N, v d_x phi + F_inf d_v phi> ds|
    for the Gaussian test function phi of the given centre and width.
    """
    _check_alignment(traj, solution)
    cx, cv = center
    values = np.empty(traj.n_samples)
    transport = np.empty(traj.n_samples)
    for k in range(traj.n_samples):
        x, v = traj.positions[k, :, 0], traj.velocities[k, :, 0]
        phi = np.exp(-((x - cx) ** 2 + (v - cv) ** 2) / (2 * width * width))
        dphi_dx = -(x - cx) / width**2 * phi
        dphi_dv = -(v - cv) / width**2 * phi
        accel = solution.field_at(float(traj.times[k]), x)
        values[k] = phi.mean()
        transport[k] = np.mean(v * dphi_dx + accel * dphi_dv)
    return float(abs(values[-1] - values[0] - trapezoid(transport, traj.times)))


def decay_exponent(ns: Sequence[int], values: Sequence[float]) -> float:
    """-slope of log2(value) against log2(N); nan with fewer than two positive values."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log2(ns[keep]), np.log2(values[keep]), 1)
    return float(-slope)
