"""
Dyadic decompositions around an anchor particle.

Position shells C_k hold the particles with base*2^(k-1) < |X_j - X_a| <= base*2^k
(base = 3 eps K), C_0 the ones within base. Velocity shells Q_l split C_0 the
same way by |V_j - V_a| with base 3 eps Ebar. Intervals are (left, right]
everywhere, and particles beyond the last shell are merged into it.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from meanfield.ensemble import ParticleEnsemble
from meanfield.errors import InvalidWindowError, ScaleOrderError
from meanfield.integrator import GRID_TOL, Trajectory

logger = logging.getLogger(__name__)

POSITION = "position"
VELOCITY = "velocity"


@dataclass
class ShellPartition:
    """
    Partition of `scope` into remainder (C_0 or Q_0) and shells k = 1..k_max.

    base_radius is 3 eps K for position shells and 3 eps Ebar for velocity
    shells. cross_radius bounds the other phase variable of the members: |V|
    about 0 for position shells, |X - X_a| for velocity shells.
    """

    anchor: int
    kind: str
    base_radius: float
    shells: Dict[int, np.ndarray]
    remainder: np.ndarray
    k_max: int
    scope: np.ndarray
    distances: np.ndarray
    cross_radius: float

    @property
    def unit(self) -> float:
        """eps K (position) or eps Ebar (velocity)."""
        return self.base_radius / 3.0

    def members(self, k: int) -> np.ndarray:
        if k == 0:
            return self.remainder
        return self.shells.get(k, np.array([], dtype=int))

    def outer_radius(self, k: int) -> float:
        radius = self.base_radius * 2.0**k
        if k == self.k_max and len(self.members(k)):
            inside = np.isin(self.scope, self.members(k))
            radius = max(radius, float(self.distances[inside].max()))
        return radius

    def as_dict(self) -> Dict:
        return {
            "anchor": int(self.anchor),
            "kind": self.kind,
            "base_radius": self.base_radius,
            "k_max": self.k_max,
            "remainder": len(self.remainder),
            "shells": {str(k): len(v) for k, v in sorted(self.shells.items())},
        }


def _dyadic_cap(numerator: float, denominator: float) -> int:
    """max(1, ceil(log2(numerator / denominator)))."""
    if numerator <= 0 or denominator <= 0:
        return 1
    return max(1, math.ceil(math.log(numerator / denominator) / math.log(2.0)))


def _split(distances: np.ndarray, indices: np.ndarray, base: float, k_max: int):
    if base <= 0:
        return indices.copy(), {}
    edges = base * 2.0 ** np.arange(k_max + 1)
    level = np.minimum(np.searchsorted(edges, distances, side="left"), k_max)
    shells = {int(k): indices[level == k] for k in range(1, k_max + 1) if np.any(level == k)}
    return indices[level == 0], shells


def _scope(ens: ParticleEnsemble, anchor: int, subset: Optional[np.ndarray]) -> np.ndarray:
    if subset is None:
        return np.delete(np.arange(ens.n), anchor)
    subset = np.asarray(subset, dtype=int)
    return subset[subset != anchor]


def position_shells(
    ens: ParticleEnsemble,
    anchor: int,
    eps: float,
    K: float,
    R: Optional[float] = None,
    subset: Optional[np.ndarray] = None,
) -> ShellPartition:
    """
    Split the particles j != anchor by |X_j - X_anchor| into C_0 and C_k.

    k runs to k0 = ceil(log2(R / (4 eps K))), R defaulting to the ensemble radius.
    """
    if K <= 0:
        raise ValueError(f"K must be positive, got {K}")
    scope = _scope(ens, anchor, subset)
    R = R if R is not None else ens.radius()
    base = 3.0 * eps * K
    k_max = _dyadic_cap(R, 4.0 * eps * K)
    distances = np.linalg.norm(ens.positions[scope] - ens.positions[anchor], axis=1)
    remainder, shells = _split(distances, scope, base, k_max)
    return ShellPartition(
        anchor=anchor,
        kind=POSITION,
        base_radius=base,
        shells=shells,
        remainder=remainder,
        k_max=k_max,
        scope=scope,
        distances=distances,
        cross_radius=max(K, float(np.linalg.norm(ens.velocities[scope], axis=1).max(initial=0.0))),
    )


def velocity_shells(
    ens: ParticleEnsemble,
    anchor: int,
    subset: np.ndarray,
    eps: float,
    Ebar: float,
    K: Optional[float] = None,
) -> ShellPartition:
    """
    Split `subset` (usually C_0) by |V_j - V_anchor| into Q_0 and Q_l.

    l runs to l0 = ceil(log2(K / (eps Ebar))). With Ebar = 0 everything is in Q_0.
    """
    scope = _scope(ens, anchor, subset)
    K = K if K is not None else ens.speed()
    base = 3.0 * eps * Ebar
    k_max = _dyadic_cap(K, eps * Ebar) if Ebar > 0 else 1
    distances = np.linalg.norm(ens.velocities[scope] - ens.velocities[anchor], axis=1)
    remainder, shells = _split(distances, scope, base, k_max)
    spread = np.linalg.norm(ens.positions[scope] - ens.positions[anchor], axis=1).max(initial=0.0)
    return ShellPartition(
        anchor=anchor,
        kind=VELOCITY,
        base_radius=base,
        shells=shells,
        remainder=remainder,
        k_max=k_max,
        scope=scope,
        distances=distances,
        cross_radius=max(3.0 * eps * K, float(spread)),
    )


def q0_split(
    subset: np.ndarray, ens: ParticleEnsemble, anchor: int, eps: float, K: float, dEbar: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split Q_0 at |V_j - V_anchor| = 6 eps^2 K dEbar.

    Q_0' takes the members at or above the threshold. Members with exactly
    the anchor's velocity always go to Q_0'', so a zero threshold leaves
    only those there.
    """
    if dEbar < 0:
        raise ValueError(f"dEbar must be non-negative, got {dEbar}")
    subset = _scope(ens, anchor, subset)
    threshold = 6.0 * eps**2 * K * dEbar
    dv = np.linalg.norm(ens.velocities[subset] - ens.velocities[anchor], axis=1)
    second = (dv < threshold) | (dv == 0)
    return subset[~second], subset[second]


@dataclass
class StabilityReport:
    checked: int
    violations: List[Dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def shell_stability_check(
    traj: Trajectory, partition: ShellPartition, window: Tuple[float, float]
) -> StabilityReport:
    """
    Check that shell membership fixed at t1 persists over [t1, t0], t0 - t1 <= eps.

    Position shells: C_k members stay at least eps K 2^(k-1) from the anchor,
    C_0 members within 5 eps K. Velocity shells: Q_l members keep
    |V_j - V_a| > eps Ebar 2^(l-1).
    """
    t1, t0 = window
    if t0 < t1 or t0 - t1 > traj.epsilon * (1 + GRID_TOL):
        raise InvalidWindowError(f"Window [{t1:.6g}, {t0:.6g}] must have length in [0, eps={traj.epsilon:.6g}]")
    samples = traj.indices_between(t1, t0)
    coords = traj.positions if partition.kind == POSITION else traj.velocities
    report = StabilityReport(checked=0)
    a = partition.anchor
    for k in sorted(partition.shells):
        members = partition.shells[k]
        bound = partition.unit * 2.0 ** (k - 1)
        dist = np.linalg.norm(coords[samples][:, members] - coords[samples][:, [a]], axis=2)
        bad = (dist < bound) if partition.kind == POSITION else (dist <= bound)
        report.checked += dist.size
        for s, m in zip(*np.nonzero(bad)):
            report.violations.append(
                {"t": float(traj.times[samples[s]]), "j": int(members[m]), "shell": k,
                 "distance": float(dist[s, m]), "bound": bound}
            )
    if partition.kind == POSITION and len(partition.remainder):
        bound = 5.0 * partition.unit
        dist = np.linalg.norm(
            coords[samples][:, partition.remainder] - coords[samples][:, [a]], axis=2
        )
        report.checked += dist.size
        for s, m in zip(*np.nonzero(dist > bound)):
            report.violations.append(
                {"t": float(traj.times[samples[s]]), "j": int(partition.remainder[m]), "shell": 0,
                 "distance": float(dist[s, m]), "bound": bound}
            )
    if report.violations:
        logger.warning("%d shell stability violations for anchor %d", len(report.violations), a)
    return report


@dataclass
class CountReport:
    entries: List[Dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e["ratio"] is None or e["ratio"] <= 1.0 for e in self.entries)


def shell_count_bound_check(
    partition: ShellPartition, ens: ParticleEnsemble, linf_upper: float, scale: float
) -> CountReport:
    """
    Compare each shell's size with the covering bound
    linf_upper * (2 scale)^(2d) * n_boxes * N.

    A shell of outer radius rho with the other phase variable inside radius
    rho' is covered by ceil(rho / scale)^d * ceil(rho' / scale)^d boxes of
    side 2 scale. Empty shells are reported with ratio None.
    """
    d = ens.dim
    box_mass = linf_upper * (2.0 * scale) ** (2 * d) * ens.n
    cross_boxes = math.ceil(partition.cross_radius / scale - GRID_TOL) ** d if partition.cross_radius > 0 else 1
    report = CountReport()
    for k in range(0, partition.k_max + 1):
        count = len(partition.members(k))
        rho = partition.outer_radius(k)
        n_boxes = max(1, math.ceil(rho / scale - GRID_TOL)) ** d * max(1, cross_boxes)
        bound = box_mass * n_boxes
        ratio = None if count == 0 else (count / bound if bound > 0 else float("inf"))
        report.entries.append({"k": k, "count": count, "bound": bound, "ratio": ratio})
    return report


@dataclass
class TwoScalePartition:
    outer: ShellPartition
    inner: ShellPartition


def two_scale_shells(
    ens: ParticleEnsemble, anchor: int, eps: float, eta: float, K: float, R: Optional[float] = None
) -> TwoScalePartition:
    """
    Shells at scale eta, then the eta-core redecomposed at scale eps.

    The inner index stops at ceil(log2(eta / eps)).
    """
    if eta <= eps:
        raise ScaleOrderError(f"Outer scale eta={eta} must exceed eps={eps}")
    outer = position_shells(ens, anchor, eta, K, R)
    scope = outer.remainder
    base = 3.0 * eps * K
    k_max = _dyadic_cap(eta, eps)
    distances = np.linalg.norm(ens.positions[scope] - ens.positions[anchor], axis=1)
    remainder, shells = _split(distances, scope, base, k_max)
    inner = ShellPartition(
        anchor=anchor,
        kind=POSITION,
        base_radius=base,
        shells=shells,
        remainder=remainder,
        k_max=k_max,
        scope=scope,
        distances=distances,
        cross_radius=outer.cross_radius,
    )
    return TwoScalePartition(outer=outer, inner=inner)


def shell_force_sum(partition: ShellPartition, n: int, alpha: float) -> float:
    """sum_{k>=1} |C_k| (unit 2^(k-1))^(-alpha) / N."""
    total = 0.0
    for k, members in partition.shells.items():
        total += len(members) * (partition.unit * 2.0 ** (k - 1)) ** -alpha
    return total / n


@dataclass(frozen=True)
class AggregateCheck:
    statistic: float
    reference: float

    @property
    def ratio(self) -> float:
        return self.statistic / self.reference if self.reference > 0 else float("inf")


def lemma1_aggregate(
    ens: ParticleEnsemble, anchor: int, eps: float, K: float, R: float, linf: float, alpha: float
) -> AggregateCheck:
    """Shell sum against linf^(a'/d) K^a' R^(a' - a), a' = (a + 1) / 2."""
    prime = 0.5 * (alpha + 1.0)
    partition = position_shells(ens, anchor, eps, K, R)
    reference = linf ** (prime / ens.dim) * K**prime * R ** (prime - alpha)
    return AggregateCheck(statistic=shell_force_sum(partition, ens.n, alpha), reference=reference)


def lemma7_aggregate(
    ens: ParticleEnsemble,
    anchor: int,
    eps: float,
    eta: float,
    K: float,
    R: float,
    linf_eta: float,
    linf_eps: float,
    alpha: float,
) -> AggregateCheck:
    """Two-scale shell sum against the eta-scale term plus the eta^(a' - a) weighted eps-scale term."""
    prime = 0.5 * (alpha + 1.0)
    nested = two_scale_shells(ens, anchor, eps, eta, K, R)
    statistic = shell_force_sum(nested.outer, ens.n, alpha) + shell_force_sum(nested.inner, ens.n, alpha)
    reference = (
        linf_eta ** (prime / ens.dim) * K**prime * R ** (prime - alpha)
        + linf_eps ** (prime / ens.dim) * K ** (2 * prime - alpha) * eta ** (prime - alpha)
    )
    return AggregateCheck(statistic=statistic, reference=reference)


@dataclass(frozen=True)
class FlybyReport:
    closest_time: float
    min_distance: float
    fitted_constant: float

    @property
    def half_holds(self) -> bool:
        """Whether the factor 1/2 of the flyby lower bound is admissible here."""
        return self.fitted_constant >= 0.5


def flyby_check(traj: Trajectory, i: int, j: int, window: Tuple[float, float]) -> FlybyReport:
    """
    Largest c with |X_i(t) - X_j(t)| >= | |dX(t_m)| - c (t - t_m) |dV(t_m)| | on the window,
    t_m the sampled time of closest approach.
    """
    samples = traj.indices_between(*window)
    dx = np.linalg.norm(traj.positions[samples, i] - traj.positions[samples, j], axis=1)
    m = int(np.argmin(dx))
    t_m = traj.times[samples[m]]
    dv = float(np.linalg.norm(traj.velocities[samples[m], i] - traj.velocities[samples[m], j]))
    lag = np.abs(traj.times[samples] - t_m)
    usable = (lag > 0) & (dv > 0)
    if not np.any(usable):
        return FlybyReport(closest_time=float(t_m), min_distance=float(dx[m]), fitted_constant=float("inf"))
    constant = np.min((dx[m] + dx[usable]) / (lag[usable] * dv))
    return FlybyReport(closest_time=float(t_m), min_distance=float(dx[m]), fitted_constant=float(constant))
