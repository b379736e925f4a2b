"""
Phase-space parallelepipeds S = {(x, v) : ||M (x - X0, v - V0)|| <= eta} and
their transport backward along a recorded trajectory.

M is the 2d x 2d block matrix [[A, B], [C, D]]. The norm of a phase vector
is max(|x|, |v|) with Euclidean norms inside each block.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.special import gamma

from meanfield.diagnostics import discrete_linf
from meanfield.ensemble import ParticleEnsemble
from meanfield.errors import (
    ConditionViolated,
    NormConditionsViolated,
    TooLargeError,
    WindowMissingError,
)
from meanfield.forces import field_regularized, grad_field_regularized
from meanfield.integrator import GRID_TOL, Trajectory

logger = logging.getLogger(__name__)

# Upper limit on the lattice points scanned by lattice_cover
MAX_LATTICE_SCAN = 4_000_000

# Default bounds on one backward step: block drift <= DRIFT_CONSTANT * h and
# |det change| <= DET_CONSTANT * h^2
DRIFT_CONSTANT = 8.0
DET_CONSTANT = 8.0

# Relative slack on inequality checks that compare floating point radii
_RTOL = 1e-12


@dataclass(frozen=True)
class PhaseParallelepiped:
    x0: np.ndarray
    v0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    radius: float

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        v0 = np.atleast_1d(np.asarray(self.v0, dtype=float))
        d = x0.shape[0]
        if v0.shape != (d,):
            raise ValueError(f"Center blocks differ in shape: {x0.shape} vs {v0.shape}")
        blocks = {}
        for name in ("A", "B", "C", "D"):
            block = np.asarray(getattr(self, name), dtype=float).reshape(d, d)
            if not np.all(np.isfinite(block)):
                raise ValueError(f"Block {name} has non-finite entries")
            blocks[name] = block
        if not self.radius > 0:
            raise ValueError(f"Radius must be positive, got {self.radius}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "v0", v0)
        for name, block in blocks.items():
            object.__setattr__(self, name, block)

    @classmethod
    def box(cls, x0, v0, radius: float) -> "PhaseParallelepiped":
        """Identity blocks: the ball of radius `radius` about (x0, v0)."""
        d = np.atleast_1d(x0).shape[0]
        eye, zero = np.eye(d), np.zeros((d, d))
        return cls(x0, v0, eye, zero, zero, eye, radius)

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    @property
    def center(self) -> np.ndarray:
        return np.concatenate([self.x0, self.v0])

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.C, self.D]])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def block_norms(self, points: np.ndarray) -> np.ndarray:
        """max(|A dx + B dv|, |C dx + D dv|) for phase points of shape (m, 2d)."""
        delta = np.atleast_2d(points) - self.center
        image = delta @ self.matrix.T
        d = self.dim
        return np.maximum(np.linalg.norm(image[:, :d], axis=1), np.linalg.norm(image[:, d:], axis=1))

    def volume(self) -> float:
        """omega_d^2 eta^(2d) / |det M|; infinite when M is singular."""
        det = abs(self.det)
        if det == 0:
            return float("inf")
        return unit_ball_volume(self.dim) ** 2 * self.radius ** (2 * self.dim) / det


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / float(gamma(d / 2.0 + 1.0))


def contains(S: PhaseParallelepiped, p: np.ndarray):
    """Membership of one phase point (2d,) or of every row of (m, 2d)."""
    p = np.asarray(p, dtype=float)
    inside = S.block_norms(p) <= S.radius
    return bool(inside[0]) if p.ndim == 1 else inside


def count_in(ens: ParticleEnsemble, S: PhaseParallelepiped) -> int:
    return int(np.count_nonzero(contains(S, ens.phase_points)))


def _phase_norm(block_vectors: np.ndarray, d: int) -> np.ndarray:
    return np.maximum(
        np.linalg.norm(block_vectors[..., :d], axis=-1), np.linalg.norm(block_vectors[..., d:], axis=-1)
    )


@dataclass(frozen=True)
class NormConditionReport:
    """
    diagonal = 1/2 - max(|A - I|, |D - I|), off_diagonal = 1/2 - max(|B|, |C|).

    containment is 1/2 - max(|A - I| + |B|, |C| + |D - I|); when it is
    non-negative S lies in the ball of radius 2 eta about its center.
    """

    passed: bool
    diagonal: float
    off_diagonal: float
    containment: float

    @property
    def failing(self) -> Optional[str]:
        if self.diagonal < 0:
            return "diagonal"
        if self.off_diagonal < 0:
            return "off_diagonal"
        return None

    def as_dict(self) -> Dict[str, float]:
        return {"diagonal": self.diagonal, "off_diagonal": self.off_diagonal, "containment": self.containment}


def norm_conditions(S: PhaseParallelepiped) -> NormConditionReport:
    eye = np.eye(S.dim)
    a = np.linalg.norm(S.A - eye, 2)
    b = np.linalg.norm(S.B, 2)
    c = np.linalg.norm(S.C, 2)
    d = np.linalg.norm(S.D - eye, 2)
    diagonal = 0.5 - max(a, d)
    off_diagonal = 0.5 - max(b, c)
    return NormConditionReport(
        passed=bool(diagonal >= 0 and off_diagonal >= 0),
        diagonal=float(diagonal),
        off_diagonal=float(off_diagonal),
        containment=float(0.5 - max(a + b, c + d)),
    )


def _require_norm_conditions(S: PhaseParallelepiped) -> NormConditionReport:
    report = norm_conditions(S)
    if not report.passed:
        name = report.failing
        raise NormConditionsViolated(name, getattr(report, name))
    return report


@dataclass(frozen=True)
class ContainmentReport:
    holds: bool
    max_distance: float
    bound: float
    guaranteed: bool
    counterexample: Optional[np.ndarray] = None


def _sphere(rng: np.random.Generator, count: int, d: int, radius: float) -> np.ndarray:
    if d == 1:
        return radius * rng.choice([-1.0, 1.0], size=(count, 1))
    raw = rng.normal(size=(count, d))
    return radius * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def containment_check(
    S: PhaseParallelepiped, n_samples: int = 4096, seed: int = 0, require_conditions: bool = True
) -> ContainmentReport:
    """
    Look for points of S farther than 2 eta from its center.

    The extreme points of S are M^-1 applied to the product of the two
    radius-eta spheres: four corners in d = 1 (checked exactly), sampled
    otherwise. A singular M makes S unbounded and counts as a counterexample.

    Args:
        S (PhaseParallelepiped): Set to examine.
        n_samples (int): Boundary samples for d >= 2.
        seed (int): Seed for the boundary samples.
        require_conditions (bool): Raise NormConditionsViolated when the norm
            conditions fail; turn off for negative controls.

    Returns:
        ContainmentReport: Whether every examined point is within 2 eta.
    """
    conditions = _require_norm_conditions(S) if require_conditions else norm_conditions(S)
    d, eta = S.dim, S.radius
    bound = 2.0 * eta
    guaranteed = conditions.containment >= 0
    try:
        inverse = np.linalg.inv(S.matrix)
    except np.linalg.LinAlgError:
        inverse = None
    if inverse is None or not np.all(np.isfinite(inverse)) or S.det == 0:
        return ContainmentReport(holds=False, max_distance=float("inf"), bound=bound, guaranteed=guaranteed)

    if d == 1:
        signs = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        extreme = eta * signs
    else:
        rng = np.random.default_rng(seed)
        extreme = np.hstack([_sphere(rng, n_samples, d, eta), _sphere(rng, n_samples, d, eta)])
    offsets = extreme @ inverse.T
    distances = _phase_norm(offsets, d)
    worst = int(np.argmax(distances))
    holds = bool(distances[worst] <= bound * (1 + _RTOL))
    counterexample = None if holds else S.center + offsets[worst]
    return ContainmentReport(
        holds=holds,
        max_distance=float(distances[worst]),
        bound=bound,
        guaranteed=guaranteed,
        counterexample=counterexample,
    )


@dataclass
class BackwardStep:
    parallelepiped: PhaseParallelepiped
    time: float
    step: float
    drift: float
    det_change: float
    drift_const: float = DRIFT_CONSTANT
    det_const: float = DET_CONSTANT

    @property
    def drift_ratio(self) -> float:
        """Largest block change over the step length."""
        return self.drift / self.step

    @property
    def det_ratio(self) -> float:
        return self.det_change / self.step**2

    @property
    def drift_exceeded(self) -> bool:
        return self.drift_ratio > self.drift_const * (1 + _RTOL)

    @property
    def det_exceeded(self) -> bool:
        return self.det_ratio > self.det_const * (1 + _RTOL)


def _window_indices(traj: Trajectory, t: float, step: float):
    end = traj.index_of(t)
    k = max(1, int(round(step / traj.dt)))
    start = end - k
    if start < 0:
        raise WindowMissingError(f"Trajectory does not cover [{t - step:.6g}, {t:.6g}]")
    return start, end


def _center_field_integrals(traj: Trajectory, x0: np.ndarray, eps: float, start: int, end: int):
    times = traj.times[start : end + 1]
    fields = np.empty((len(times), traj.dim))
    grads = np.empty((len(times), traj.dim, traj.dim))
    for row, k in enumerate(range(start, end + 1)):
        snapshot = traj.snapshot(k)
        fields[row] = field_regularized(snapshot, x0, eps, traj.kernel)
        grads[row] = grad_field_regularized(snapshot, x0, eps, traj.kernel)
    return trapezoid(fields, times, axis=0), trapezoid(grads, times, axis=0)


def backward_step(
    S: PhaseParallelepiped,
    traj: Trajectory,
    t: float,
    eps: float,
    beta: float,
    growth_const: float,
    step: Optional[float] = None,
    drift_const: float = DRIFT_CONSTANT,
    det_const: float = DET_CONSTANT,
) -> BackwardStep:
    """
    Move S from time t to t - h along the linearized backward flow, h = eps by default.

    With grad E~ = (1/h) int grad E_eps(s, X0) ds:
    A' = A + h B grad E~, B' = B + h A, C' = C + h D grad E~, D' = D + h C,
    X0' = X0 - h V0, V0' = V0 - int E_eps(s, X0) ds and
    eta' = eta + C h (eta^beta + eps). Both integrals use the trapezoid rule
    on the trajectory grid, so h is rounded to a whole number of steps.

    The step is flagged when the block drift exceeds drift_const * h or the
    determinant moves by more than det_const * h^2.
    """
    _require_norm_conditions(S)
    start, end = _window_indices(traj, t, step if step is not None else eps)
    h = (end - start) * traj.dt
    field_integral, grad_integral = _center_field_integrals(traj, S.x0, eps, start, end)
    grad_avg = grad_integral / h

    A = S.A + S.B @ grad_avg * h
    B = S.B + h * S.A
    C = S.C + S.D @ grad_avg * h
    D = S.D + h * S.C
    previous = PhaseParallelepiped(
        x0=S.x0 - h * S.v0,
        v0=S.v0 - field_integral,
        A=A,
        B=B,
        C=C,
        D=D,
        radius=S.radius + growth_const * h * (S.radius**beta + eps),
    )
    drift = max(np.linalg.norm(new - old, 2) for new, old in ((A, S.A), (B, S.B), (C, S.C), (D, S.D)))
    logger.debug("Backward step to t=%.6g, drift %.3e", traj.times[start], drift)
    result = BackwardStep(
        parallelepiped=previous,
        time=float(traj.times[start]),
        step=h,
        drift=float(drift),
        det_change=abs(previous.det - S.det),
        drift_const=drift_const,
        det_const=det_const,
    )
    if result.drift_exceeded or result.det_exceeded:
        logger.debug(
            "Backward step to t=%.6g: drift ratio %.3g (bound %g), det ratio %.3g (bound %g)",
            result.time, result.drift_ratio, drift_const, result.det_ratio, det_const,
        )
    return result


@dataclass
class TrackingReport:
    """
    One record per backward step. counts[n] is the number of particles in the
    tracked set at times[n]; times run backward from the start time.
    """

    times: List[float] = field(default_factory=list)
    counts: List[int] = field(default_factory=list)
    radii: List[float] = field(default_factory=list)
    radius_bounds: List[float] = field(default_factory=list)
    drift_ratios: List[float] = field(default_factory=list)
    det_ratios: List[float] = field(default_factory=list)
    dets: List[float] = field(default_factory=list)
    margins: List[Dict[str, float]] = field(default_factory=list)
    termination: str = "reached_start"
    final: Optional[PhaseParallelepiped] = None
    count_violations: List[int] = field(default_factory=list)
    radius_violations: List[int] = field(default_factory=list)
    drift_violations: List[int] = field(default_factory=list)
    det_violations: List[int] = field(default_factory=list)
    # (eta' - eta) / (eps + eta^beta) for the final radius
    final_growth_constant: float = 0.0

    @property
    def stopped_early(self) -> bool:
        return self.termination != "reached_start"

    def records(self) -> List[Dict]:
        rows = []
        for n, t in enumerate(self.times):
            rows.append(
                {
                    "step": n,
                    "t": t,
                    "count": self.counts[n],
                    "radius": self.radii[n],
                    "radius_bound": self.radius_bounds[n],
                    "drift_ratio": self.drift_ratios[n],
                    "det_ratio": self.det_ratios[n],
                    "det": self.dets[n],
                    "margins": self.margins[n],
                }
            )
        if rows:
            rows[-1]["termination"] = self.termination
        return rows


def track_back(
    S_t: PhaseParallelepiped,
    traj: Trajectory,
    t: float,
    eps: float,
    beta: float,
    growth_const: float,
    t_stop: float = 0.0,
    drift_const: float = DRIFT_CONSTANT,
    det_const: float = DET_CONSTANT,
) -> TrackingReport:
    """
    Iterate backward_step from t down to t_stop, the last step possibly shorter.

    The radius is checked against eta + C sum(h)(eps + eta^beta) + alpha_n,
    alpha_n following alpha' = (1 + a) alpha + a C sum(h)(eps + eta^beta) with
    a = C beta h eta^(beta - 1), which holds for beta <= 1 by concavity.
    Tracking stops at the first step whose input fails the norm conditions;
    the report says which condition failed. Steps over the drift or
    determinant bounds of backward_step are listed, not stopped at.
    """
    eta = S_t.radius
    report = TrackingReport()
    S = S_t
    time = t
    alpha_bound = 0.0
    elapsed = 0.0

    def record(current: PhaseParallelepiped, at: float, drift_ratio: float, det_ratio: float, bound: float):
        report.times.append(float(at))
        report.counts.append(count_in(traj.snapshot(traj.index_of(at)), current))
        report.radii.append(current.radius)
        report.radius_bounds.append(bound)
        report.drift_ratios.append(drift_ratio)
        report.det_ratios.append(det_ratio)
        report.dets.append(current.det)
        report.margins.append(norm_conditions(current).as_dict())

    record(S, time, 0.0, 0.0, eta)
    while time > t_stop + GRID_TOL * max(1.0, t):
        h = min(eps, time - t_stop)
        conditions = norm_conditions(S)
        if not conditions.passed:
            report.termination = f"norm_conditions:{conditions.failing}"
            logger.info("Tracking stopped at t=%.6g: %s condition failed", time, conditions.failing)
            break
        result = backward_step(
            S, traj, time, eps, beta, growth_const, step=h, drift_const=drift_const, det_const=det_const
        )
        linear = growth_const * elapsed * (eps + eta**beta)
        a = growth_const * beta * result.step * eta ** (beta - 1.0)
        alpha_bound = (1.0 + a) * alpha_bound + a * linear
        elapsed += result.step
        bound = eta + growth_const * elapsed * (eps + eta**beta) + alpha_bound
        S, time = result.parallelepiped, result.time
        record(S, time, result.drift_ratio, result.det_ratio, bound)
        n = len(report.counts) - 1
        if report.counts[n] < report.counts[n - 1]:
            report.count_violations.append(n)
        if S.radius > bound * (1 + 1e-9):
            report.radius_violations.append(n)
        if result.drift_exceeded:
            report.drift_violations.append(n)
        if result.det_exceeded:
            report.det_violations.append(n)

    if report.count_violations:
        logger.warning("Backward counts decreased at steps %s", report.count_violations)
    if report.drift_violations or report.det_violations:
        logger.warning(
            "Backward steps over the drift bound %s, over the det bound %s",
            report.drift_violations, report.det_violations,
        )
    report.final = S
    report.final_growth_constant = (S.radius - eta) / (eps + eta**beta)
    return report


def _required_growth(
    S: PhaseParallelepiped, result: BackwardStep, traj: Trajectory, t: float, eps: float, beta: float
) -> float:
    """Smallest C for which the step `result` keeps every member of S inside."""
    members = contains(S, traj.snapshot(traj.index_of(t)).phase_points)
    if not np.any(members):
        return 0.0
    earlier = traj.snapshot(traj.index_of(result.time)).phase_points[members]
    excess = float(result.parallelepiped.block_norms(earlier).max()) - S.radius
    return max(0.0, excess) / (result.step * (S.radius**beta + eps))


def estimate_growth_const(
    boxes: Sequence[PhaseParallelepiped],
    traj: Trajectory,
    t: float,
    eps: float,
    beta: float,
    safety: float = 2.0,
    max_steps: Optional[int] = None,
    t_stop: float = 0.0,
) -> float:
    """
    Pilot pass for the radius growth constant.

    Each box is tracked back with C = 0, and at every step the radius
    increase needed to keep the previous members is measured. The largest
    need times `safety` is returned.
    """
    if safety < 1:
        raise ValueError(f"Safety factor must be at least 1, got {safety}")
    need = 0.0
    for box in boxes:
        S, time, steps = box, t, 0
        while time > t_stop + GRID_TOL * max(1.0, t) and norm_conditions(S).passed:
            result = backward_step(S, traj, time, eps, beta, 0.0, step=min(eps, time - t_stop))
            need = max(need, _required_growth(S, result, traj, time, eps, beta))
            S, time = result.parallelepiped, result.time
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
    logger.info("Pilot growth constant %.4g (safety %.2g)", need * safety, safety)
    return need * safety


@dataclass
class CoverReport:
    points: np.ndarray
    cover_holds: bool
    max_cover_distance: float
    cardinality_holds: bool
    cardinality_lhs: float
    cardinality_rhs: float
    fitted_constant: float

    @property
    def size(self) -> int:
        return len(self.points)


def _lattice_range(S: PhaseParallelepiped, radius: float, eps: float):
    inverse = np.linalg.inv(S.matrix)
    d = S.dim
    reach = radius * (np.linalg.norm(inverse[:, :d], axis=1) + np.linalg.norm(inverse[:, d:], axis=1))
    lo = np.floor((S.center - reach) / eps).astype(np.int64)
    hi = np.ceil((S.center + reach) / eps).astype(np.int64)
    return lo, hi


def _sample_members(S: PhaseParallelepiped, count: int, rng: np.random.Generator) -> np.ndarray:
    d = S.dim
    blocks = []
    for _ in range(2):
        direction = _sphere(rng, count, d, 1.0)
        scale = rng.uniform(size=(count, 1)) ** (1.0 / d)
        blocks.append(S.radius * direction * scale)
    u = np.hstack(blocks)
    return S.center + u @ np.linalg.inv(S.matrix).T


def lattice_cover(
    S: PhaseParallelepiped,
    eps: float,
    det_const: Optional[float] = None,
    n_samples: int = 2000,
    particles: Optional[np.ndarray] = None,
    seed: int = 0,
) -> CoverReport:
    """
    P = eps Z^(2d) intersected with the radius (eta + 2 eps) enlargement of S.

    Cover: every sampled member of S and every given particle inside S has a
    P point within eps in the sup norm. Cardinality: cells of side eps about
    the points of P lie in the (eta + 4 eps) enlargement, so
    |P| eps^(2d) |det M| <= omega_d^2 (eta + 4 eps)^(2d). The fitted constant
    C' of |P| <= eps^(-2d) (Vol(S) + C' eps eta^(2d - 1)) is reported.

    Args:
        S (PhaseParallelepiped): Set to cover.
        eps (float): Lattice spacing.
        det_const (float, optional): Require det M <= 1 + det_const * eps.
        n_samples (int): Members of S sampled for the cover check.
        particles (np.ndarray, optional): Phase points (m, 2d) to check as well.
        seed (int): Seed for the member samples.

    Returns:
        CoverReport: The lattice points and the two verifications.
    """
    if eps <= 0:
        raise ValueError(f"Lattice spacing must be positive, got {eps}")
    conditions = norm_conditions(S)
    if not conditions.passed:
        raise ConditionViolated(f"Norm condition '{conditions.failing}' fails for the set to cover")
    det = S.det
    if det == 0:
        raise ConditionViolated("Block matrix is singular")
    if det_const is not None and abs(det) > 1 + det_const * eps:
        raise ConditionViolated(f"det M = {det:.6g} exceeds 1 + C eps = {1 + det_const * eps:.6g}")

    d = S.dim
    enlarged = S.radius + 2.0 * eps
    lo, hi = _lattice_range(S, enlarged, eps)
    shape = tuple(int(n) for n in hi - lo + 1)
    total = int(np.prod(shape, dtype=np.float64))
    if total > MAX_LATTICE_SCAN:
        raise TooLargeError(f"Lattice scan of {total} points exceeds {MAX_LATTICE_SCAN}")
    grid = np.indices(shape).reshape(2 * d, -1).T + lo
    candidates = grid * eps
    points = candidates[S.block_norms(candidates) <= enlarged * (1 + _RTOL)]

    rng = np.random.default_rng(seed)
    members = _sample_members(S, n_samples, rng)
    if particles is not None and len(particles):
        particles = np.atleast_2d(particles)
        members = np.vstack([members, particles[contains(S, particles)]])
    if len(points):
        distances, _ = cKDTree(points).query(members, k=1, p=np.inf)
        max_distance = float(distances.max()) if len(distances) else 0.0
    else:
        max_distance = float("inf")

    lhs = len(points) * eps ** (2 * d) * abs(det)
    rhs = unit_ball_volume(d) ** 2 * (S.radius + 4.0 * eps) ** (2 * d)
    fitted = (len(points) * eps ** (2 * d) - S.volume()) / (eps * S.radius ** (2 * d - 1))
    report = CoverReport(
        points=points,
        cover_holds=bool(max_distance <= eps * (1 + _RTOL)),
        max_cover_distance=max_distance,
        cardinality_holds=bool(lhs <= rhs * (1 + _RTOL)),
        cardinality_lhs=float(lhs),
        cardinality_rhs=float(rhs),
        fitted_constant=float(fitted),
    )
    if not (report.cover_holds and report.cardinality_holds):
        logger.warning("Lattice cover check failed: cover=%s cardinality=%s", report.cover_holds, report.cardinality_holds)
    return report


@dataclass
class LinfPreservationReport:
    """
    Density at scale eta after transport against the density at the inner
    scale at t_start. observed is the largest count / (N (2 eta)^(2d)) over
    the boxes, certified the covering bound |P| linf0 (2 inner)^(2d) / (2 eta)^(2d).
    """

    eta: float
    inner_scale: float
    t_start: float
    horizon: float
    linf0_upper: float
    observed: float
    certified: float
    fitted_C: float
    growth_const: float
    boxes: int
    stretched_boxes: int
    no_stretch_horizon: float
    count_violations: int
    drift_violations: int = 0
    det_violations: int = 0
    tracks: List[TrackingReport] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.observed / self.linf0_upper if self.linf0_upper > 0 else float("inf")

    @property
    def within_half(self) -> bool:
        """observed <= 1.5 times the inner-scale density at the start."""
        return self.ratio <= 1.5

    @property
    def slack(self) -> float:
        return self.fitted_C

    def as_dict(self) -> Dict:
        return {
            "eta": self.eta,
            "inner_scale": self.inner_scale,
            "t_start": self.t_start,
            "horizon": self.horizon,
            "linf0_upper": self.linf0_upper,
            "observed": self.observed,
            "certified": self.certified,
            "ratio": self.ratio,
            "fitted_C": self.fitted_C,
            "growth_const": self.growth_const,
            "boxes": self.boxes,
            "stretched_boxes": self.stretched_boxes,
            "no_stretch_horizon": self.no_stretch_horizon,
            "count_violations": self.count_violations,
            "drift_violations": self.drift_violations,
            "det_violations": self.det_violations,
        }


def linf_preservation_report(
    traj: Trajectory,
    eta: float,
    eps: float,
    beta: float,
    growth_const: Optional[float],
    horizon: float,
    n_boxes: int = 16,
    seed: int = 0,
    t_start: float = 0.0,
    inner_scale: Optional[float] = None,
    safety: float = 2.0,
) -> LinfPreservationReport:
    """
    Track radius-eta boxes centred on sampled particles at t_start + horizon
    back to t_start, cover each tracked set by the inner-scale lattice, and
    compare the transported density with the inner-scale density at t_start.

    The fitted constant is C = max(0, observed - linf0) / (eta^beta + inner / eta).
    A growth constant of None is estimated by a pilot pass.
    """
    inner = inner_scale if inner_scale is not None else eps
    if eta <= inner:
        raise ValueError(f"Box radius eta={eta} must exceed the inner scale {inner}")
    end = t_start + horizon
    end_index = traj.index_of(end)
    start_index = traj.index_of(t_start)
    at_end, at_start = traj.snapshot(end_index), traj.snapshot(start_index)
    d, n = traj.dim, traj.n

    rng = np.random.default_rng(seed)
    centers = rng.choice(n, size=min(n_boxes, n), replace=False)
    boxes = [PhaseParallelepiped.box(at_end.positions[i], at_end.velocities[i], eta) for i in centers]
    if growth_const is None:
        growth_const = (
            estimate_growth_const(boxes, traj, end, eps, beta, safety=safety, t_stop=t_start) if horizon > 0 else 0.0
        )

    linf0 = discrete_linf(at_start, inner).upper
    observed = certified = 0.0
    stretched = violations = 0
    no_stretch = horizon
    tracks = []
    for box in boxes:
        density = count_in(at_end, box) / n / (2.0 * eta) ** (2 * d)
        observed = max(observed, density)
        track = track_back(box, traj, end, eps, beta, growth_const, t_stop=t_start)
        tracks.append(track)
        violations += len(track.count_violations)
        if track.stopped_early:
            stretched += 1
            no_stretch = min(no_stretch, end - track.times[-1])
            continue
        try:
            cover = lattice_cover(track.final, inner, n_samples=256, particles=at_start.phase_points, seed=seed)
        except (ConditionViolated, TooLargeError) as exc:
            logger.warning("Skipping cover of tracked box: %s", exc)
            continue
        certified = max(certified, cover.size * linf0 * (2.0 * inner) ** (2 * d) / (2.0 * eta) ** (2 * d))

    fitted = max(0.0, observed - linf0) / (eta**beta + inner / eta)
    logger.info(
        "L-inf preservation eta=%.4g: observed %.4g vs linf0 %.4g (C=%.3g, %d/%d stretched)",
        eta, observed, linf0, fitted, stretched, len(boxes),
    )
    return LinfPreservationReport(
        eta=eta,
        inner_scale=inner,
        t_start=t_start,
        horizon=horizon,
        linf0_upper=linf0,
        observed=observed,
        certified=certified,
        fitted_C=fitted,
        growth_const=growth_const,
        boxes=len(boxes),
        stretched_boxes=stretched,
        no_stretch_horizon=no_stretch,
        count_violations=violations,
        drift_violations=sum(len(track.drift_violations) for track in tracks),
        det_violations=sum(len(track.det_violations) for track in tracks),
        tracks=tracks,
    )
