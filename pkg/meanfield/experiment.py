"""
Experiment orchestration: the short-time and long-time checks over a list of
particle counts, and the convergence study against the grid oracle.
"""

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.config import CODE_VERSION, MAX_WORKERS, OUTPUT_DIR
from meanfield import bundle
from meanfield.database import (
    add_or_update_run,
    get_smallest_passing_n,
    initialize_database,
    replace_diagnostic_samples,
)
from meanfield.diagnostics import (
    CSV_COLUMNS,
    DEFAULT_PAIR_BUDGET,
    DiagnosticsRecord,
    compute_diagnostics,
    default_beta,
    discrete_linf,
    lemma4_fit,
    theorem1_window,
)
from meanfield.ensemble import InitialDensitySpec, epsilon_scale, lattice_side, quiet_start_init
from meanfield.errors import ConfigInvalid, MisalignedTimesError, SupportOverflowError, UnsupportedDimensionError
from meanfield.forces import REPULSIVE, ForceKernel
from meanfield.integrator import RecordFlags, Trajectory, run
from meanfield.oracle import (
    DEFAULT_WIDTHS,
    OracleSolution,
    decay_exponent,
    force_convergence_stat,
    grid_density_from_spec,
    near_far_split,
    solve,
    weak_distance,
    weak_form_residual,
)
from meanfield.parallelepiped import linf_preservation_report
from meanfield.shells import (
    flyby_check,
    lemma1_aggregate,
    lemma7_aggregate,
    position_shells,
    q0_split,
    shell_count_bound_check,
    shell_stability_check,
    velocity_shells,
)

logger = logging.getLogger(__name__)

GATE_NAMES = ("g1_separation", "g2_position_smallness", "g3_velocity_smallness", "g4_linf_constant", "g5_no_stretch")


@dataclass(frozen=True)
class ExperimentConfig:
    density: InitialDensitySpec = field(default_factory=InitialDensitySpec)
    ns: Tuple[int, ...] = (64,)
    dim: int = 1
    horizon: float = 0.25
    kappa: int = 8
    seed: int = 0
    allow_large: bool = False
    alpha: float = 0.5
    sign: int = REPULSIVE
    strength: float = 1.0
    delta: float = 0.0
    beta: Optional[float] = None
    short_time: bool = True
    pair_budget: int = DEFAULT_PAIR_BUDGET
    stages: int = 4
    track_boxes: int = 16
    growth_safety: float = 2.0
    shell_anchors: int = 4
    oracle_nx: int = 128
    oracle_nv: int = 128
    oracle_dt: Optional[float] = None
    oracle_checkpoints: Optional[Tuple[float, ...]] = None
    oracle_widths: Tuple[float, ...] = DEFAULT_WIDTHS
    oracle_centers: int = 9
    oracle_cut: float = 0.1
    output_dir: Optional[str] = None

    def __post_init__(self):
        messages = []
        if not 0.0 < self.alpha < 1.0:
            messages.append(f"KERNEL_ALPHA: must lie in (0, 1), got {self.alpha}")
        if not self.ns or list(self.ns) != sorted(self.ns):
            messages.append("RUN_N: must be a non-empty ascending list")
        if self.stages < 1:
            messages.append(f"ETA_STAGES: must be at least 1, got {self.stages}")
        if self.horizon <= 0:
            messages.append(f"RUN_T: must be positive, got {self.horizon}")
        if self.kappa < 2:
            messages.append(f"RUN_KAPPA: must be at least 2, got {self.kappa}")
        if messages:
            raise ConfigInvalid(messages)

    def kernel(self) -> ForceKernel:
        return ForceKernel(alpha=self.alpha, sign=self.sign, delta=self.delta, strength=self.strength)

    def resolved_beta(self) -> float:
        return self.beta if self.beta is not None else default_beta(self.dim, self.alpha)

    def as_dict(self) -> Dict:
        payload = asdict(self)
        payload["ns"] = list(self.ns)
        payload["beta"] = self.resolved_beta()
        payload.pop("output_dir")
        return bundle.jsonable(payload)

    def config_hash(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Stage:
    index: int
    t_start: float
    t_end: float
    inner: float
    outer: float


def eta_schedule(eps: float, stages: int, horizon: float) -> List[Stage]:
    """
    Stage 0 goes from scale eps to eta_0 = eps^(1/2) on [0, T/M]. Stage i = 1..M
    goes from eta_(i-1) to eta_i = eta_0 r^i on [t_(i-1), t_i], t_i = i T / M,
    with r = eps^(-1/(4M)), so eta_M = eps^(1/4).
    """
    eta0 = math.sqrt(eps)
    ratio = eps ** (-1.0 / (4 * stages))
    etas = [eta0 * ratio**i for i in range(stages + 1)]
    times = [i * horizon / stages for i in range(stages + 1)]
    schedule = [Stage(index=0, t_start=0.0, t_end=times[1], inner=eps, outer=eta0)]
    for i in range(1, stages + 1):
        schedule.append(Stage(index=i, t_start=times[i - 1], t_end=times[i], inner=etas[i - 1], outer=etas[i]))
    return schedule


def _grid_index(traj: Trajectory, t: float) -> int:
    return min(int(round(t / traj.dt)), traj.n_samples - 1)


def evaluate_gates(
    record: DiagnosticsRecord, alpha: float, stage_reports: Sequence[Dict], stages: int
) -> List[Dict]:
    """
    Every gate violation, sorted by time.

    At each sample: (g1) 12 eps K dEbar m <= 1, (g2) eps^(d-a) m^(2d) K^(2d-a) <= eps^beta,
    (g3) eps^(2d-3a) m^(2d) Ebar^d K^(d-a) <= eps^beta. Per stage: (g4) fitted
    constant <= eps^(-1/(8M)), (g5) the tracked boxes never stretched.
    """
    eps, d, beta = record.epsilon, record.dim, record.beta
    target = eps**beta
    violations = []
    for k, t in enumerate(record.t):
        m, K, ebar, debar = record.m[k], record.K[k], record.Ebar[k], record.dEbar[k]
        checks = (
            ("g1_separation", 12.0 * eps * K * debar * m, 1.0),
            ("g2_position_smallness", eps ** (d - alpha) * m ** (2 * d) * K ** (2 * d - alpha), target),
            ("g3_velocity_smallness", eps ** (2 * d - 3 * alpha) * m ** (2 * d) * ebar**d * K ** (d - alpha), target),
        )
        for name, value, threshold in checks:
            if not value <= threshold:
                violations.append({"time": float(t), "name": name, "value": float(value), "threshold": threshold})
    limit = eps ** (-1.0 / (8 * stages))
    for report in stage_reports:
        if report["fitted_C"] > limit:
            violations.append(
                {"time": report["t_end"], "name": "g4_linf_constant", "value": report["fitted_C"], "threshold": limit}
            )
        if report["stretched_boxes"]:
            violations.append(
                {
                    "time": report["t_end"] - report["no_stretch_horizon"],
                    "name": "g5_no_stretch",
                    "value": report["no_stretch_horizon"],
                    "threshold": report["horizon"],
                }
            )
    violations.sort(key=lambda v: (v["time"], GATE_NAMES.index(v["name"])))
    return violations


def _stage_reports(traj: Trajectory, config: ExperimentConfig, beta: float):
    reports, tracking = [], []
    for stage in eta_schedule(traj.epsilon, config.stages, config.horizon):
        start = traj.times[_grid_index(traj, stage.t_start)]
        end_index = _grid_index(traj, stage.t_end)
        if traj.times[end_index] < stage.t_end - traj.dt and not traj.ok:
            logger.warning("Stage %d skipped: the run stopped at t=%.4g", stage.index, traj.end_time)
            continue
        report = linf_preservation_report(
            traj,
            eta=stage.outer,
            eps=traj.epsilon,
            beta=beta,
            growth_const=None,
            horizon=float(traj.times[end_index] - start),
            n_boxes=config.track_boxes,
            seed=config.seed + stage.index,
            t_start=float(start),
            inner_scale=stage.inner,
            safety=config.growth_safety,
        )
        summary = report.as_dict()
        summary.update({"stage": stage.index, "t_end": float(traj.times[end_index])})
        reports.append(summary)
        for box, track in enumerate(report.tracks):
            for row in track.records():
                row.update({"N": traj.n, "stage": stage.index, "box": box})
                tracking.append(row)
    return reports, tracking


def _shell_reports(traj: Trajectory, record: DiagnosticsRecord, config: ExperimentConfig) -> List[Dict]:
    """Shell decompositions around a few anchors over the last eps-window of the run."""
    eps = traj.epsilon
    last = traj.n_samples - 1
    first = max(0, last - traj.steps_per_epsilon)
    ens = traj.snapshot(first)
    K, R = float(record.K[-1]), float(record.R[-1])
    ebar, debar = float(record.Ebar[-1]), float(record.dEbar[-1])
    linf_eps = discrete_linf(ens, eps).upper
    linf_eta = discrete_linf(ens, record.eta).upper
    rng = np.random.default_rng(config.seed)
    anchors = rng.choice(traj.n, size=min(config.shell_anchors, traj.n), replace=False)
    window = (float(traj.times[first]), float(traj.times[last]))
    out = []
    for anchor in anchors:
        anchor = int(anchor)
        shells = position_shells(ens, anchor, eps, K, R)
        speeds = velocity_shells(ens, anchor, shells.remainder, eps, ebar, K)
        q0_prime, q0_second = q0_split(speeds.remainder, ens, anchor, eps, K, debar)
        entry = {
            "anchor": anchor,
            "window": list(window),
            "position": shells.as_dict(),
            "velocity": speeds.as_dict(),
            "q0_split": {"prime": len(q0_prime), "second": len(q0_second)},
            "position_stability": _stability(traj, shells, window),
            "velocity_stability": _stability(traj, speeds, window),
            "position_counts": shell_count_bound_check(shells, ens, linf_eps, eps).entries,
            "velocity_counts": shell_count_bound_check(speeds, ens, linf_eps, eps).entries,
        }
        aggregate = lemma1_aggregate(ens, anchor, eps, K, R, linf_eps, config.alpha)
        entry["lemma1"] = {"statistic": aggregate.statistic, "reference": aggregate.reference, "ratio": aggregate.ratio}
        if record.eta > eps:
            nested = lemma7_aggregate(ens, anchor, eps, record.eta, K, R, linf_eta, linf_eps, config.alpha)
            entry["lemma7"] = {"statistic": nested.statistic, "reference": nested.reference, "ratio": nested.ratio}
        if speeds.shells:
            outermost = speeds.shells[max(speeds.shells)]
            flyby = flyby_check(traj, anchor, int(outermost[0]), window)
            entry["flyby"] = {
                "partner": int(outermost[0]),
                "closest_time": flyby.closest_time,
                "fitted_constant": flyby.fitted_constant,
                "half_holds": flyby.half_holds,
            }
        out.append(entry)
    return out


def _stability(traj: Trajectory, partition, window) -> Dict:
    report = shell_stability_check(traj, partition, window)
    return {"checked": report.checked, "violations": len(report.violations)}


@dataclass
class RunOutcome:
    n_requested: int
    n: int
    epsilon: float
    end_time: float
    collision: Optional[Dict]
    record: DiagnosticsRecord
    theorem1: Dict
    lemma4_C: float
    gates_applicable: bool
    gate_violations: List[Dict]
    stages: List[Dict]
    tracking: List[Dict]
    shells: List[Dict]
    fconv: Optional[float] = None

    @property
    def first_violation(self) -> Optional[Dict]:
        return self.gate_violations[0] if self.gate_violations else None

    @property
    def count_violations(self) -> int:
        return sum(stage["count_violations"] for stage in self.stages)

    @property
    def count_bound_failures(self) -> int:
        failures = 0
        for entry in self.shells:
            for key in ("position_counts", "velocity_counts"):
                failures += sum(1 for row in entry[key] if row["ratio"] is not None and row["ratio"] > 1.0)
        return failures


def _final_fconv(traj: Trajectory, solution: Optional[OracleSolution]) -> Optional[float]:
    if solution is None or traj.dim != 1:
        return None
    return float(force_convergence_stat(traj, solution, sample_indices=[len(traj.times) - 1])[-1])


def simulate_one(config: ExperimentConfig, n: int, solution: Optional[OracleSolution] = None) -> RunOutcome:
    """
    Run, diagnose and check a single particle count.

    With a 1D oracle solution the force convergence statistic at the last
    recorded time is kept as well.
    """
    kernel = config.kernel()
    beta = config.resolved_beta()
    ens0 = quiet_start_init(config.density, n, config.seed, config.dim)
    traj = run(ens0, config.horizon, kernel, config.kappa, RecordFlags(field_vecs=True), config.density.r0_x)
    collision = None
    if traj.failure is not None:
        failure = traj.failure
        collision = {"time": failure.time, "message": str(failure)}
        if hasattr(failure, "i"):
            collision.update({"i": failure.i, "j": failure.j, "distance": failure.distance})

    record = compute_diagnostics(
        traj,
        beta=beta,
        pair_budget=config.pair_budget,
        short_time=config.short_time,
        seed=config.seed,
    )
    window = theorem1_window(record)
    stages, tracking = _stage_reports(traj, config, beta)
    gates_applicable = config.dim >= 2
    violations = evaluate_gates(record, config.alpha, stages, config.stages) if gates_applicable else []
    if violations:
        first = violations[0]
        logger.warning("N=%d: gate %s first violated at t=%.4g", traj.n, first["name"], first["time"])
    return RunOutcome(
        n_requested=n,
        n=traj.n,
        epsilon=traj.epsilon,
        end_time=traj.end_time,
        collision=collision,
        record=record,
        theorem1=asdict(window),
        lemma4_C=lemma4_fit(record),
        gates_applicable=gates_applicable,
        gate_violations=violations,
        stages=stages,
        tracking=tracking,
        shells=_shell_reports(traj, record, config),
        fconv=_final_fconv(traj, solution),
    )


def _simulation_oracle(config: ExperimentConfig) -> Optional[OracleSolution]:
    """Grid solution covering every 1D run of the config, or None in d >= 2."""
    if config.dim != 1:
        return None
    smallest = lattice_side(config.ns[0], 1) ** 2
    final_time = config.horizon + epsilon_scale(config.density.r0_x, smallest, 1)
    f0 = grid_density_from_spec(config.density, config.oracle_nx, config.oracle_nv)
    try:
        return solve(f0, final_time, _oracle_step(config), config.kernel())
    except SupportOverflowError as exc:
        logger.warning("No force convergence column for this experiment: %s", exc)
        return None


def _simulate_all(config: ExperimentConfig) -> List[RunOutcome]:
    solution = _simulation_oracle(config)
    count = len(config.ns)
    if MAX_WORKERS > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=MAX_WORKERS) as pool:
            return list(pool.map(simulate_one, [config] * count, config.ns, [solution] * count))
    return [simulate_one(config, n, solution) for n in config.ns]


@dataclass
class ExperimentResult:
    bundle_dir: str
    summary: Dict
    outcomes: List[RunOutcome]

    @property
    def collisions(self) -> List[Dict]:
        return [dict(outcome.collision, N=outcome.n) for outcome in self.outcomes if outcome.collision]

    @property
    def invariant_violations(self) -> int:
        return self.summary["mlinf_violations"] + self.summary["count_monotonicity_violations"]


def _bundle_dir(config: ExperimentConfig, output_dir: Optional[str], suffix: str) -> str:
    root = output_dir or config.output_dir or OUTPUT_DIR
    path = os.path.join(root, f"{config.config_hash()[:12]}-{suffix}")
    os.makedirs(path, exist_ok=True)
    return path


def run_experiment(config: ExperimentConfig, output_dir: Optional[str] = None, catalog: bool = True) -> ExperimentResult:
    """
    Simulate every N of the config and write the artifact bundle.

    The bundle holds diagnostics.csv (one block of rows per N), shells.json,
    tracking.jsonl and summary.json. Each run is registered in the catalog,
    which also answers the smallest N whose gates held up to the horizon.

    Args:
        config (ExperimentConfig): Resolved experiment.
        output_dir (str, optional): Root directory for bundles.
        catalog (bool): Register the runs in the database.

    Returns:
        ExperimentResult: Bundle location, summary and per-N outcomes.
    """
    bundle_dir = _bundle_dir(config, output_dir, "simulate")
    logger.info("Experiment %s: N=%s d=%d T=%.4g", config.config_hash()[:12], list(config.ns), config.dim, config.horizon)
    outcomes = _simulate_all(config)

    rows = []
    for outcome in outcomes:
        for row in outcome.record.rows():
            rows.append(dict(row, N=outcome.n))
    bundle.write_table(os.path.join(bundle_dir, bundle.DIAGNOSTICS_FILE), ("N",) + CSV_COLUMNS, rows)
    bundle.write_json(
        os.path.join(bundle_dir, bundle.SHELLS_FILE), {str(outcome.n): outcome.shells for outcome in outcomes}
    )
    bundle.write_jsonl(
        os.path.join(bundle_dir, bundle.TRACKING_FILE), [row for outcome in outcomes for row in outcome.tracking]
    )

    n_tilde = None
    if catalog:
        initialize_database()
        for outcome in outcomes:
            first = outcome.first_violation
            run_id = add_or_update_run(
                config_hash=config.config_hash(),
                n=outcome.n,
                dim=config.dim,
                alpha=config.alpha,
                epsilon=outcome.epsilon,
                horizon=outcome.end_time,
                bundle_path=bundle_dir,
                t_obs=outcome.theorem1["T_obs"],
                gate_violation_time=first["time"] if first else None,
                gate_violation_name=first["name"] if first else None,
                collided=outcome.collision is not None,
            )
            replace_diagnostic_samples(run_id, outcome.record.rows())
        n_tilde = get_smallest_passing_n(config.config_hash(), config.horizon)

    summary = {
        "config": config.as_dict(),
        "code_version": CODE_VERSION,
        "epsilon": {str(o.n): o.epsilon for o in outcomes},
        "T_obs": {str(o.n): o.theorem1["T_obs"] for o in outcomes},
        "T_obs_common": min(o.theorem1["T_obs"] for o in outcomes),
        "gate_first_violation": {str(o.n): o.first_violation for o in outcomes},
        "gates_applicable": config.dim >= 2,
        "theorem1_checks": {str(o.n): o.theorem1 for o in outcomes},
        "theorem4_fitted_C": {str(o.n): [stage["fitted_C"] for stage in o.stages] for o in outcomes},
        "stages": {str(o.n): o.stages for o in outcomes},
        "fconv_by_N": {str(o.n): o.fconv for o in outcomes},
        "mlinf_violations": sum(o.record.mlinf_violations for o in outcomes),
        "count_monotonicity_violations": sum(o.count_violations for o in outcomes),
        "count_bound_failures": sum(o.count_bound_failures for o in outcomes),
        "lemma4_C": {str(o.n): o.lemma4_C for o in outcomes},
        "empirical_N_tilde": n_tilde,
        "runs": [
            {
                "N_requested": o.n_requested,
                "N": o.n,
                "end_time": o.end_time,
                "collision": o.collision,
                "dEbar_sampled": o.record.dEbar_sampled,
            }
            for o in outcomes
        ],
    }
    bundle.write_json(os.path.join(bundle_dir, bundle.SUMMARY_FILE), summary)
    return ExperimentResult(bundle_dir=bundle_dir, summary=bundle.jsonable(summary), outcomes=outcomes)


@dataclass
class ConvergenceResult:
    bundle_dir: str
    rows: List[Dict]
    summary: Dict


def _oracle_step(config: ExperimentConfig) -> float:
    if config.oracle_dt is not None:
        return config.oracle_dt
    largest = lattice_side(config.ns[-1], 1) ** 2
    return epsilon_scale(config.density.r0_x, largest, 1)


def _nearest_density(solution, t: float):
    return solution.densities[min(int(round(t / solution.dt)), len(solution.times) - 1)]


def _checkpoint_index(traj: Trajectory, t: float) -> int:
    k = _grid_index(traj, t)
    if abs(traj.times[k] - t) > 0.5 * traj.dt * (1 + 1e-9):
        raise MisalignedTimesError(f"Checkpoint t={t:.6g} is outside the run (end {traj.end_time:.6g})")
    return k


def convergence_study(config: ExperimentConfig, output_dir: Optional[str] = None) -> ConvergenceResult:
    """
    Weak distance and force convergence of the particle runs against the
    grid oracle at every checkpoint and for every N, with decay exponents
    fitted in log2 N. Only d = 1 is supported.
    """
    if config.dim != 1:
        raise UnsupportedDimensionError("The convergence study compares with a 1D-1V oracle")
    kernel = config.kernel()
    bundle_dir = _bundle_dir(config, output_dir, "converge")
    checkpoints = config.oracle_checkpoints or (config.horizon,)

    trajectories = []
    for n in config.ns:
        ens0 = quiet_start_init(config.density, n, config.seed, 1)
        traj = run(ens0, config.horizon, kernel, config.kappa, RecordFlags(field_vecs=True), config.density.r0_x)
        if traj.failure is not None:
            logger.error("N=%d stopped at t=%.4g, no convergence study", traj.n, traj.end_time)
            raise traj.failure
        trajectories.append(traj)

    f0 = grid_density_from_spec(config.density, config.oracle_nx, config.oracle_nv)
    final_time = max(traj.end_time for traj in trajectories)
    solution = solve(f0, final_time, _oracle_step(config), kernel)
    oracle_dir = os.path.join(bundle_dir, bundle.ORACLE_DIR)
    for t in checkpoints:
        density = _nearest_density(solution, t)
        bundle.write_grid_density(oracle_dir, f"f_t{t:.6g}", density)

    rows, extras = [], {}
    for traj in trajectories:
        indices = [_checkpoint_index(traj, t) for t in checkpoints]
        fconv = force_convergence_stat(traj, solution, sample_indices=indices)
        for t, k, stat in zip(checkpoints, indices, fconv):
            particle_time = float(traj.times[k])
            oracle = _nearest_density(solution, particle_time)
            distance = weak_distance(traj.snapshot(k), oracle, config.oracle_widths, config.oracle_centers)
            rows.append({"N": traj.n, "t": particle_time, "weak_distance": distance, "fconv": float(stat)})
        final = traj.snapshot(indices[-1])
        oracle = _nearest_density(solution, float(traj.times[indices[-1]]))
        split = near_far_split(final, oracle, kernel, config.oracle_cut)
        extras[str(traj.n)] = {
            "near_field": split.near,
            "far_field": split.far,
            "cut": split.cut,
            "weak_form_residual": weak_form_residual(traj, solution),
        }

    bundle.write_table(os.path.join(bundle_dir, bundle.CONVERGENCE_FILE), ("N", "t", "weak_distance", "fconv"), rows)
    ns = [traj.n for traj in trajectories]
    last_rows = [row for row in rows if row["t"] == max(r["t"] for r in rows if r["N"] == row["N"])]
    summary = {
        "config": config.as_dict(),
        "code_version": CODE_VERSION,
        "fconv_by_N": {str(row["N"]): row["fconv"] for row in last_rows},
        "weak_distance_by_N": {str(row["N"]): row["weak_distance"] for row in last_rows},
        "decay_exponents": {
            "weak_distance": decay_exponent(ns, [row["weak_distance"] for row in last_rows]),
            "fconv": decay_exponent(ns, [row["fconv"] for row in last_rows]),
        },
        "oracle": {
            "nx": config.oracle_nx,
            "nv": config.oracle_nv,
            "dt": solution.dt,
            "max_mass_drift": max(solution.mass_drift) if solution.mass_drift else 0.0,
        },
        "extras": extras,
    }
    bundle.write_json(os.path.join(bundle_dir, bundle.SUMMARY_FILE), summary)
    logger.info("Convergence study written to %s", bundle_dir)
    return ConvergenceResult(bundle_dir=bundle_dir, rows=rows, summary=bundle.jsonable(summary))


@dataclass
class VerifyReport:
    violations: List[str] = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_bundle(bundle_dir: str) -> VerifyReport:
    """
    Re-check a bundle offline: the L-infinity brackets and (4m)^(2d) bound in
    diagnostics.csv and the backward count monotonicity in tracking.jsonl.

    The CSV only holds the running sup of m, so the bound checked here is the
    weaker form of the one checked during the run.
    """
    summary = bundle.read_json(os.path.join(bundle_dir, bundle.SUMMARY_FILE))
    d = int(summary["config"]["dim"])
    report = VerifyReport()
    for row in bundle.read_table(os.path.join(bundle_dir, bundle.DIAGNOSTICS_FILE)):
        report.checked += 1
        where = f"N={int(row['N'])} t={row['t']:.6g}"
        if row["linf_eps_hi"] > (4.0 * row["m"]) ** (2 * d):
            report.violations.append(f"{where}: linf_eps_hi above (4m)^2d")
        for scale in ("eps", "eta"):
            lo, hi = row[f"linf_{scale}_lo"], row[f"linf_{scale}_hi"]
            if not lo <= hi <= 2.0 ** (2 * d) * lo * (1 + 1e-12):
                report.violations.append(f"{where}: linf_{scale} bracket out of order")

    tracking_path = os.path.join(bundle_dir, bundle.TRACKING_FILE)
    previous = {}
    for record in bundle.read_jsonl(tracking_path) if os.path.exists(tracking_path) else []:
        report.checked += 1
        key = (record["N"], record["stage"], record["box"])
        if record["step"] > 0 and record["count"] < previous.get(key, 0):
            report.violations.append(f"N={key[0]} stage={key[1]} box={key[2]}: count fell at step {record['step']}")
        previous[key] = record["count"]
    return report
