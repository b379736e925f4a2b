"""
Scalar diagnostics of the particle system: support radii R and K, the
phase separation m, windowed force averages, the discrete L-infinity norm
and the checks that tie them together.

Every supremum over a continuum (window starts, box centres) is taken over a
finite set, so recorded values are lower bounds of the continuum quantities
unless stated otherwise.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial import cKDTree

from meanfield.ensemble import ParticleEnsemble
from meanfield.errors import (
    InvalidBetaError,
    TooLargeError,
    UnsupportedDimensionError,
    WindowMissingError,
    WindowTooCoarseError,
)
from meanfield.integrator import GRID_TOL, Trajectory

logger = logging.getLogger(__name__)

# Exact O(N^2) minimum separation is refused above this size
EXACT_PAIR_LIMIT = 32768

DEFAULT_PAIR_BUDGET = 100_000

_BLOCK = 512


@dataclass(frozen=True)
class SupportRadii:
    R: float
    K: float
    R_linf: float
    K_linf: float
    R0: float
    up_to: float

    @property
    def transport_bound_holds(self) -> bool:
        """R(T) <= R(0) + T K(T)."""
        return self.R <= self.R0 + self.up_to * self.K + 1e-12 * max(1.0, self.R)


def _up_to_index(traj: Trajectory, up_to: Optional[float]) -> int:
    if up_to is None:
        return traj.n_samples - 1
    if up_to < 0 or up_to > traj.end_time * (1 + GRID_TOL) + 1e-12:
        raise WindowMissingError(f"up_to={up_to:.6g} lies outside [0, {traj.end_time:.6g}]")
    return int(np.flatnonzero(traj.times <= up_to * (1 + GRID_TOL) + 1e-12)[-1])


def support_radii(traj: Trajectory, up_to: Optional[float] = None) -> SupportRadii:
    """Running sups of |X_i| and |V_i| over the samples up to `up_to`."""
    k = _up_to_index(traj, up_to)
    x = traj.positions[: k + 1]
    v = traj.velocities[: k + 1]
    return SupportRadii(
        R=float(np.linalg.norm(x, axis=2).max()),
        K=float(np.linalg.norm(v, axis=2).max()),
        R_linf=float(np.abs(x).max()),
        K_linf=float(np.abs(v).max()),
        R0=float(np.linalg.norm(x[0], axis=1).max()),
        up_to=float(traj.times[k]),
    )


def support_radii_series(traj: Trajectory) -> Tuple[np.ndarray, np.ndarray]:
    """R(t_k) and K(t_k) as running sups, one value per recorded sample."""
    r = np.maximum.accumulate(np.linalg.norm(traj.positions, axis=2).max(axis=1))
    k = np.maximum.accumulate(np.linalg.norm(traj.velocities, axis=2).max(axis=1))
    return r, k


def initial_field_sup(traj: Trajectory) -> float:
    """E^0, the largest field magnitude at t = 0."""
    return float(traj.field_mags[0].max())


def closest_phase_pair(ens: ParticleEnsemble) -> Tuple[int, int, float]:
    """
    Pair minimising |X_i - X_j| + |V_i - V_j|, by exact blocked scan.

    Returns:
        Tuple[int, int, float]: (i, j, distance) with i < j.
    """
    n = ens.n
    if n > EXACT_PAIR_LIMIT:
        raise TooLargeError(
            f"N={n} exceeds the exact pair limit {EXACT_PAIR_LIMIT}; subsample explicitly"
        )
    x, v = ens.positions, ens.velocities
    best = (0, 1, np.inf)
    for r0 in range(0, n, _BLOCK):
        r1 = min(r0 + _BLOCK, n)
        dx = np.linalg.norm(x[r0:r1, None, :] - x[None, :, :], axis=2)
        dv = np.linalg.norm(v[r0:r1, None, :] - v[None, :, :], axis=2)
        dist = dx + dv
        rows = np.arange(r0, r1)[:, None]
        dist[rows >= np.arange(n)[None, :]] = np.inf
        a, b = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[a, b] < best[2]:
            best = (r0 + int(a), int(b), float(dist[a, b]))
    return best


def min_phase_separation(ens: ParticleEnsemble, eps: float) -> float:
    """m = eps / min_{i != j}(|X_i - X_j| + |V_i - V_j|); +inf for a phase-space collision."""
    _, _, dist = closest_phase_pair(ens)
    if dist == 0:
        logger.warning("Two particles coincide in phase space; m is infinite")
        return float("inf")
    return eps / dist


@dataclass(frozen=True)
class WindowedSup:
    """A sup of window averages over particles (or pairs) and grid window starts."""

    value: float
    argmax: Tuple[int, ...]
    window_start: float
    short_horizon: bool
    sampled: bool = False


def _window_layout(dt: float, length: float):
    steps = length / dt
    full = int(np.floor(steps + GRID_TOL))
    frac = steps - full
    if frac < GRID_TOL:
        frac = 0.0
    return full, frac


def _window_values(samples: np.ndarray, dt: float, length: float, last: int):
    """
    Trapezoid integrals of `samples` over [t_a, t_a + length] for every grid
    start a whose window ends by t_last. Returns (starts, integrals).
    """
    full, frac = _window_layout(dt, length)
    cumulative = cumulative_trapezoid(samples[: last + 1], dx=dt, axis=0, initial=0)
    reach = full + (1 if frac > 0 else 0)
    n_windows = last + 1 - reach
    if n_windows <= 0:
        return np.array([], dtype=int), np.empty((0,) + samples.shape[1:])
    starts = np.arange(n_windows)
    ends = starts + full
    integrals = cumulative[ends] - cumulative[starts]
    if frac > 0:
        left = samples[ends]
        right = left + frac * (samples[ends + 1] - left)
        integrals = integrals + 0.5 * frac * dt * (left + right)
    return starts, integrals


def _windowed_sup(samples: np.ndarray, dt: float, eps: float, last: int) -> Tuple[float, int, int, bool]:
    """(value, column, start index, short_horizon) of the sup over columns and windows."""
    starts, integrals = _window_values(samples, dt, eps, last)
    if len(starts) == 0:
        # Horizon shorter than one window: (1/eps) int_0^T
        total = cumulative_trapezoid(samples[: last + 1], dx=dt, axis=0, initial=0)[-1]
        col = int(np.argmax(total))
        return float(total[col] / eps), col, 0, True
    flat = int(np.argmax(integrals))
    a, col = np.unravel_index(flat, integrals.shape)
    return float(integrals[a, col] / eps), int(col), int(starts[a]), False


def _running_windowed_sup(samples: np.ndarray, dt: float, eps: float, lasts: Sequence[int]) -> np.ndarray:
    """Windowed sup at several horizons t_last, computed from one pass."""
    final = max(lasts)
    full, frac = _window_layout(dt, eps)
    reach = full + (1 if frac > 0 else 0)
    starts, integrals = _window_values(samples, dt, eps, final)
    per_start = integrals.max(axis=1) if len(starts) else np.empty(0)
    running = np.maximum.accumulate(per_start) if len(per_start) else per_start
    cumulative = cumulative_trapezoid(samples[: final + 1], dx=dt, axis=0, initial=0)
    out = np.empty(len(lasts))
    for idx, last in enumerate(lasts):
        n_windows = last + 1 - reach
        if n_windows <= 0:
            out[idx] = cumulative[last].max() / eps
        else:
            out[idx] = running[n_windows - 1] / eps
    return out


def _check_window(traj: Trajectory, eps: float):
    if eps < 2 * traj.dt * (1 - GRID_TOL):
        raise WindowTooCoarseError(
            f"Window eps={eps:.4g} is shorter than two steps (dt={traj.dt:.4g})"
        )


def windowed_force_avg(traj: Trajectory, eps: float, up_to: Optional[float] = None) -> WindowedSup:
    """
    Ebar(T): sup over particles and grid window starts of (1/eps) int_t^{t+eps} |E(X_i)| ds.

    For T < eps the short-horizon form (1/eps) int_0^T is used.
    """
    _check_window(traj, eps)
    last = _up_to_index(traj, up_to)
    value, i, start, short = _windowed_sup(traj.field_mags, traj.dt, eps, last)
    return WindowedSup(value=value, argmax=(i,), window_start=start * traj.dt, short_horizon=short)


def default_beta(d: int, alpha: float) -> float:
    """Midpoint of (1, min(d - alpha, 2d - 3 alpha)); 1 for d = 1."""
    if d == 1:
        return 1.0
    return 0.5 * (1.0 + min(d - alpha, 2 * d - 3 * alpha))


def check_beta(d: int, alpha: float, beta: float, short_time: bool = False) -> None:
    if d == 1:
        if beta == 1.0 and short_time:
            return
        raise UnsupportedDimensionError(
            "For d=1 the interval (1, d - alpha) is empty; use beta=1 with short_time=True "
            "(valid for short-time estimates only)"
        )
    upper = min(d - alpha, 2 * d - 3 * alpha)
    if not 1.0 < beta < upper:
        raise InvalidBetaError(f"beta={beta} must lie in (1, {upper:.4g}) for d={d}, alpha={alpha}")


def _select_pairs(traj: Trajectory, budget: int, seed: int, last: int) -> Tuple[np.ndarray, np.ndarray, bool]:
    n = traj.n
    if n * (n - 1) // 2 <= budget:
        i, j = np.triu_indices(n, k=1)
        return i, j, False
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=budget)
    j = rng.integers(0, n - 1, size=budget)
    j = np.where(j >= i, j + 1, j)
    forced = []
    for k in sorted({0, last}):
        a, b, _ = closest_phase_pair(traj.snapshot(k))
        forced.append((a, b))
    i = np.concatenate([np.array([p[0] for p in forced]), i])
    j = np.concatenate([np.array([p[1] for p in forced]), j])
    pairs = np.unique(np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1], True


def _pair_quotients(traj: Trajectory, i: np.ndarray, j: np.ndarray, eps: float, beta: float, last: int):
    de = np.linalg.norm(traj.field_vecs[: last + 1, i] - traj.field_vecs[: last + 1, j], axis=2)
    dx = np.linalg.norm(traj.positions[: last + 1, i] - traj.positions[: last + 1, j], axis=2)
    return de / (eps**beta + dx)


def _require_field_vecs(traj: Trajectory):
    if traj.field_vecs is None:
        raise ValueError("The trajectory was recorded without field vectors (RecordFlags.field_vecs)")


def windowed_force_diff_avg(
    traj: Trajectory,
    eps: float,
    beta: float,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
    short_time: bool = False,
    seed: int = 0,
    up_to: Optional[float] = None,
) -> WindowedSup:
    """
    dEbar(T): sup over pairs and grid windows of
    (1/eps) int |E(X_i) - E(X_j)| / (eps^beta + |X_i - X_j|) ds.

    All pairs are used while they fit in pair_budget; otherwise the closest
    phase pairs at t = 0 and t = T plus pair_budget random pairs, and the
    result is flagged as sampled.
    """
    _require_field_vecs(traj)
    check_beta(traj.dim, traj.kernel.alpha, beta, short_time)
    _check_window(traj, eps)
    last = _up_to_index(traj, up_to)
    i, j, sampled = _select_pairs(traj, pair_budget, seed, last)
    best = WindowedSup(value=-np.inf, argmax=(0, 1), window_start=0.0, short_horizon=False, sampled=sampled)
    chunk = max(1, 2_000_000 // max(1, last + 1))
    for p0 in range(0, len(i), chunk):
        pi, pj = i[p0 : p0 + chunk], j[p0 : p0 + chunk]
        quotients = _pair_quotients(traj, pi, pj, eps, beta, last)
        value, col, start, short = _windowed_sup(quotients, traj.dt, eps, last)
        if value > best.value:
            best = WindowedSup(
                value=value,
                argmax=(int(pi[col]), int(pj[col])),
                window_start=start * traj.dt,
                short_horizon=short,
                sampled=sampled,
            )
    return best


def windowed_force_diff_series(
    traj: Trajectory,
    eps: float,
    beta: float,
    lasts: Sequence[int],
    pair_budget: int = DEFAULT_PAIR_BUDGET,
    seed: int = 0,
) -> Tuple[np.ndarray, bool]:
    """dEbar at several horizons; beta must already be validated."""
    _require_field_vecs(traj)
    final = max(lasts)
    i, j, sampled = _select_pairs(traj, pair_budget, seed, final)
    out = np.full(len(lasts), -np.inf)
    chunk = max(1, 2_000_000 // max(1, final + 1))
    for p0 in range(0, len(i), chunk):
        quotients = _pair_quotients(traj, i[p0 : p0 + chunk], j[p0 : p0 + chunk], eps, beta, final)
        out = np.maximum(out, _running_windowed_sup(quotients, traj.dt, eps, lasts))
    return out, sampled


@dataclass(frozen=True)
class LinfBracket:
    """lower <= ||mu||_{inf,scale} <= upper, and upper <= 2^(2d) lower."""

    lower: float
    upper: float
    scale: float


def discrete_linf(ens: ParticleEnsemble, scale: float) -> LinfBracket:
    """
    Two-sided bracket on the sup over boxes B_inf((x, v), scale) of mass / (2 scale)^(2d).

    lower uses boxes centred at particles. The lattice bound multiplies the
    fullest half-open cell of side 2*scale by 2^(2d) (a box meets at most that
    many cells). A box also splits into 2^(2d) orthants of side `scale`, each
    inside the particle-centred box of any particle it holds, so 2^(2d)*lower
    is an upper bound too; upper is the smaller of the two.
    """
    if scale <= 0:
        raise ValueError(f"Scale must be positive, got {scale}")
    points = ens.phase_points
    dims = points.shape[1]
    volume = (2.0 * scale) ** dims
    tree = cKDTree(points)
    counts = tree.query_ball_point(points, r=scale, p=np.inf, return_length=True)
    lower = counts.max() / ens.n / volume

    cells = np.floor(points / (2.0 * scale)).astype(np.int64)
    _, cell_counts = np.unique(cells, axis=0, return_counts=True)
    lattice_upper = 2.0**dims * cell_counts.max() / ens.n / volume
    upper = min(lattice_upper, 2.0**dims * lower)
    return LinfBracket(lower=float(lower), upper=float(upper), scale=scale)


@dataclass(frozen=True)
class MlinfReport:
    holds: bool
    linf_upper: float
    bound: float
    ratio: float


def check_mlinf(m: float, linf_upper: float, d: int) -> MlinfReport:
    """Compare the discrete L-infinity norm with (4m)^(2d); never raises."""
    bound = (4.0 * m) ** (2 * d) if np.isfinite(m) else float("inf")
    ratio = linf_upper / bound if np.isfinite(bound) and bound > 0 else 0.0
    holds = bool(linf_upper <= bound)
    if not holds:
        logger.warning("L-infinity bound violated: %.4g > (4m)^2d = %.4g", linf_upper, bound)
    return MlinfReport(holds=holds, linf_upper=float(linf_upper), bound=float(bound), ratio=float(ratio))


CSV_COLUMNS = ("t", "R", "K", "m", "Ebar", "dEbar", "linf_eps_lo", "linf_eps_hi", "linf_eta_lo", "linf_eta_hi")


@dataclass
class DiagnosticsRecord:
    """Diagnostics at the sampled times; m is the running sup, m_inst the value at t."""

    t: np.ndarray
    R: np.ndarray
    K: np.ndarray
    m: np.ndarray
    m_inst: np.ndarray
    Ebar: np.ndarray
    dEbar: np.ndarray
    linf_eps_lo: np.ndarray
    linf_eps_hi: np.ndarray
    linf_eta_lo: np.ndarray
    linf_eta_hi: np.ndarray
    beta: float
    epsilon: float
    eta: float
    dim: int
    dEbar_sampled: bool = False
    mlinf: List[MlinfReport] = field(default_factory=list)

    def rows(self) -> List[Dict[str, float]]:
        return [{name: float(getattr(self, name)[k]) for name in CSV_COLUMNS} for k in range(len(self.t))]

    @property
    def mlinf_violations(self) -> int:
        return sum(1 for report in self.mlinf if not report.holds)


def epsilon_sample_indices(traj: Trajectory) -> List[int]:
    """Grid indices of the multiples of eps, always including the last sample."""
    every = traj.steps_per_epsilon
    indices = list(range(0, traj.n_samples, every))
    if indices[-1] != traj.n_samples - 1:
        indices.append(traj.n_samples - 1)
    return indices


def compute_diagnostics(
    traj: Trajectory,
    eta: Optional[float] = None,
    beta: Optional[float] = None,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
    short_time: bool = True,
    seed: int = 0,
    indices: Optional[List[int]] = None,
) -> DiagnosticsRecord:
    """
    Evaluate every diagnostic at the multiples of eps of a trajectory.

    Args:
        traj (Trajectory): Run recorded with field vectors.
        eta (float, optional): Outer scale, defaults to sqrt(eps).
        beta (float, optional): Exponent for dEbar, defaults to default_beta.
        pair_budget (int): Pair budget for dEbar.
        short_time (bool): Allow beta = 1 in d = 1.
        seed (int): Seed for pair sampling.
        indices (List[int], optional): Sample indices; defaults to the eps multiples.

    Returns:
        DiagnosticsRecord: One entry per sampled time.
    """
    eps = traj.epsilon
    d = traj.dim
    eta = eta if eta is not None else np.sqrt(eps)
    beta = beta if beta is not None else default_beta(d, traj.kernel.alpha)
    check_beta(d, traj.kernel.alpha, beta, short_time)
    indices = indices or epsilon_sample_indices(traj)

    r_series, k_series = support_radii_series(traj)
    m_inst, lo_eps, hi_eps, lo_eta, hi_eta, mlinf = [], [], [], [], [], []
    for k in indices:
        snap = traj.snapshot(k)
        m_k = min_phase_separation(snap, eps)
        bracket_eps = discrete_linf(snap, eps)
        bracket_eta = discrete_linf(snap, eta)
        m_inst.append(m_k)
        lo_eps.append(bracket_eps.lower)
        hi_eps.append(bracket_eps.upper)
        lo_eta.append(bracket_eta.lower)
        hi_eta.append(bracket_eta.upper)
        mlinf.append(check_mlinf(m_k, bracket_eps.upper, d))

    ebar = _running_windowed_sup(traj.field_mags, traj.dt, eps, indices)
    debar, sampled = windowed_force_diff_series(traj, eps, beta, indices, pair_budget, seed)
    m_inst = np.array(m_inst)
    return DiagnosticsRecord(
        t=traj.times[indices],
        R=r_series[indices],
        K=k_series[indices],
        m=np.maximum.accumulate(m_inst),
        m_inst=m_inst,
        Ebar=ebar,
        dEbar=debar,
        linf_eps_lo=np.array(lo_eps),
        linf_eps_hi=np.array(hi_eps),
        linf_eta_lo=np.array(lo_eta),
        linf_eta_hi=np.array(hi_eta),
        beta=beta,
        epsilon=eps,
        eta=eta,
        dim=d,
        dEbar_sampled=sampled,
        mlinf=mlinf,
    )


@dataclass(frozen=True)
class ShortTimeCheck:
    T_obs: float
    m_ok: bool
    K_ok: bool
    R_ok: bool
    linf_ok: bool


def theorem1_window(record: DiagnosticsRecord) -> ShortTimeCheck:
    """
    Largest sampled T_obs with m <= 2 m(0), K <= 2(1 + K(0)), R <= 2(1 + R(0))
    and linf_eps_hi <= (8 m(0))^(2d) at every sample up to it.
    """
    d = record.dim
    m_ok = record.m <= 2.0 * record.m[0]
    k_ok = record.K <= 2.0 * (1.0 + record.K[0])
    r_ok = record.R <= 2.0 * (1.0 + record.R[0])
    linf_ok = record.linf_eps_hi <= (8.0 * record.m[0]) ** (2 * d)
    good = m_ok & k_ok & r_ok & linf_ok
    failing = np.flatnonzero(~good)
    if len(failing) == 0:
        t_obs = float(record.t[-1])
    elif failing[0] == 0:
        t_obs = 0.0
    else:
        t_obs = float(record.t[failing[0] - 1])
    upto = record.t <= t_obs
    return ShortTimeCheck(
        T_obs=t_obs,
        m_ok=bool(m_ok[upto].all()),
        K_ok=bool(k_ok[upto].all()),
        R_ok=bool(r_ok[upto].all()),
        linf_ok=bool(linf_ok[upto].all()),
    )


def lemma4_fit(record: DiagnosticsRecord) -> float:
    """Smallest C with K(t) - K(0) <= C (t + eps Ebar(t) + int_0^t Ebar) at every sample."""
    integral = cumulative_trapezoid(record.Ebar, record.t, initial=0)
    scale = record.t + record.epsilon * record.Ebar + integral
    growth = record.K - record.K[0]
    usable = scale > 0
    if not np.any(usable):
        return 0.0
    return float(max(0.0, np.max(growth[usable] / scale[usable])))
