"""Phase-space state of N identical particles and its quiet-start sampling."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import truncnorm

from meanfield.errors import InvalidDimensionError, UnsupportedDensityError

logger = logging.getLogger(__name__)

SUPPORTED_DIMENSIONS = (1, 2, 3)
DENSITY_KINDS = ("uniform-box", "product-gaussian-truncated", "two-stream")


def epsilon_scale(r0: float, n: int, d: int) -> float:
    """
    Discrete scale of the N-particle problem, R0 / N^(1/2d).

    Args:
        r0 (float): Initial support radius.
        n (int): Particle count, at least 2.
        d (int): Space dimension, one of 1, 2, 3.

    Returns:
        float: The length below which the discrete dynamics cannot resolve anything.
    """
    if d not in SUPPORTED_DIMENSIONS:
        raise InvalidDimensionError(f"Dimension must be one of {SUPPORTED_DIMENSIONS}, got {d}")
    if r0 <= 0:
        raise ValueError(f"Support radius must be positive, got {r0}")
    if n < 2:
        raise ValueError(f"At least two particles are needed, got {n}")
    return r0 / n ** (1.0 / (2 * d))


@dataclass(frozen=True)
class ParticleEnsemble:
    """
    Positions and velocities of N particles of weight 1/N each.

    Arrays are copied on construction and frozen, so an ensemble can be shared
    between readers freely.
    """

    positions: np.ndarray
    velocities: np.ndarray
    support_radius: Optional[float] = None

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        velocities = np.array(self.velocities, dtype=float)
        if positions.ndim == 1:
            positions = positions[:, None]
        if velocities.ndim == 1:
            velocities = velocities[:, None]
        if positions.shape != velocities.shape:
            raise ValueError(
                f"Positions {positions.shape} and velocities {velocities.shape} differ in shape"
            )
        if positions.shape[0] < 2:
            raise ValueError("An ensemble needs at least two particles")
        if positions.shape[1] not in SUPPORTED_DIMENSIONS:
            raise InvalidDimensionError(
                f"Dimension must be one of {SUPPORTED_DIMENSIONS}, got {positions.shape[1]}"
            )
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(velocities))):
            raise ValueError("All phase coordinates must be finite")
        positions.flags.writeable = False
        velocities.flags.writeable = False
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def weight(self) -> float:
        return 1.0 / self.n

    @property
    def phase_points(self) -> np.ndarray:
        """(N, 2d) array of concatenated (x, v)."""
        return np.hstack([self.positions, self.velocities])

    def radius(self, norm: str = "l2") -> float:
        return float(_row_norms(self.positions, norm).max())

    def speed(self, norm: str = "l2") -> float:
        return float(_row_norms(self.velocities, norm).max())

    @property
    def epsilon(self) -> float:
        r0 = self.support_radius if self.support_radius is not None else self.radius()
        return epsilon_scale(r0, self.n, self.dim)


def _row_norms(values: np.ndarray, norm: str) -> np.ndarray:
    if norm == "l2":
        return np.linalg.norm(values, axis=1)
    if norm == "linf":
        return np.abs(values).max(axis=1)
    raise ValueError(f"Unknown norm '{norm}'")


@dataclass(frozen=True)
class InitialDensitySpec:
    """
    Compactly supported product density f0(x, v) of total mass one.

    Every kind is a product of identical one-dimensional marginals in x and
    in v, so it is described by the two marginal quantile functions.
    """

    kind: str = "uniform-box"
    r0_x: float = 1.0
    r0_v: float = 1.0
    sigma_x: float = 0.5
    sigma_v: float = 0.5
    stream_center: float = 0.5
    stream_width: float = 0.25
    jitter: float = 0.0

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise UnsupportedDensityError(
                f"Unknown density kind '{self.kind}', expected one of {DENSITY_KINDS}"
            )
        if self.r0_x <= 0 or self.r0_v <= 0:
            raise ValueError("Support radii must be positive")
        if not 0.0 <= self.jitter <= 0.1:
            raise ValueError("Jitter must lie in [0, 0.1] of a cell width")
        if self.kind == "product-gaussian-truncated" and (self.sigma_x <= 0 or self.sigma_v <= 0):
            raise ValueError("Gaussian widths must be positive")
        if self.kind == "two-stream":
            if self.stream_width <= 0 or self.stream_center < self.stream_width:
                raise ValueError("Streams must have positive width and must not overlap")
            if self.stream_center + self.stream_width > self.r0_v:
                raise ValueError("Streams must lie inside the velocity support")

    def position_quantile(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "product-gaussian-truncated":
            return _truncated_normal(self.r0_x, self.sigma_x).ppf(u)
        return -self.r0_x + 2.0 * self.r0_x * u

    def velocity_quantile(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "product-gaussian-truncated":
            return _truncated_normal(self.r0_v, self.sigma_v).ppf(u)
        if self.kind == "two-stream":
            c, w = self.stream_center, self.stream_width
            u = np.asarray(u, dtype=float)
            return np.where(u < 0.5, -c - w + 4.0 * w * u, c - w + 4.0 * w * (u - 0.5))
        return -self.r0_v + 2.0 * self.r0_v * u

    def position_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "product-gaussian-truncated":
            return _truncated_normal(self.r0_x, self.sigma_x).pdf(x)
        return np.where(np.abs(x) <= self.r0_x, 0.5 / self.r0_x, 0.0)

    def velocity_pdf(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "product-gaussian-truncated":
            return _truncated_normal(self.r0_v, self.sigma_v).pdf(v)
        if self.kind == "two-stream":
            c, w = self.stream_center, self.stream_width
            in_stream = (np.abs(v - c) <= w) | (np.abs(v + c) <= w)
            return np.where(in_stream, 0.25 / w, 0.0)
        return np.where(np.abs(v) <= self.r0_v, 0.5 / self.r0_v, 0.0)

    def analytic_means(self, samples: int = 4096):
        """Means of the x and v marginals, integrated through the quantile functions."""
        u = (np.arange(samples) + 0.5) / samples
        return float(np.mean(self.position_quantile(u))), float(np.mean(self.velocity_quantile(u)))


def _truncated_normal(radius: float, sigma: float):
    return truncnorm(-radius / sigma, radius / sigma, loc=0.0, scale=sigma)


def lattice_side(n: int, d: int) -> int:
    """Largest k with k^(2d) <= n."""
    if d not in SUPPORTED_DIMENSIONS:
        raise InvalidDimensionError(f"Dimension must be one of {SUPPORTED_DIMENSIONS}, got {d}")
    k = max(1, int(round(n ** (1.0 / (2 * d)))))
    while k ** (2 * d) > n:
        k -= 1
    while (k + 1) ** (2 * d) <= n:
        k += 1
    return k


def quiet_start_init(spec: InitialDensitySpec, n: int, seed: int, dim: int = 1) -> ParticleEnsemble:
    """
    Place one particle in each cell of equal f0-mass of a 2d-dimensional lattice.

    Within its x-cell a particle is shifted by (i_v + 1/2) / k of the cell
    width along each axis, i_v its velocity cell index on that axis, and the x
    jitter acts on that finer scale. No two particles then share a position,
    so the exact kernel can be evaluated at t = 0.

    N is padded down to the largest k^(2d) not above the request; the
    returned ensemble's n is the count actually used. Within-cell jitter is
    drawn from a generator seeded with `seed`, so the ensemble is
    reproducible bit for bit.

    Args:
        spec (InitialDensitySpec): Initial density.
        n (int): Requested particle count.
        seed (int): Seed for the jitter.
        dim (int): Space dimension d.

    Returns:
        ParticleEnsemble: The stratified ensemble, support_radius set to spec.r0_x.
    """
    k = lattice_side(n, dim)
    if k < 2:
        raise ValueError(f"N={n} is below the smallest lattice 2^{2 * dim} for d={dim}")
    used = k ** (2 * dim)
    if used != n:
        logger.warning("Padded N down from %d to %d (k=%d per phase axis)", n, used, k)

    cells = np.indices((k,) * (2 * dim)).reshape(2 * dim, -1).T.astype(float)
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-0.5 * spec.jitter, 0.5 * spec.jitter, size=cells.shape)
    u = (cells + 0.5 + offsets) / k
    u[:, :dim] = (cells[:, :dim] + (cells[:, dim:] + 0.5 + offsets[:, :dim]) / k) / k

    positions = spec.position_quantile(u[:, :dim])
    velocities = spec.velocity_quantile(u[:, dim:])
    logger.info("Quiet start: kind=%s N=%d d=%d", spec.kind, used, dim)
    return ParticleEnsemble(positions, velocities, support_radius=spec.r0_x)
