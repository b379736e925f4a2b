import logging
import math
from typing import Dict, List, Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import Session

from config.config import SQL_ECHO
from meanfield import models
from meanfield.models import Base, DiagnosticSample, Run, SessionLocal

logger = logging.getLogger(__name__)


def configure_database(url: str) -> None:
    """Point the catalog at another database, e.g. a temporary file in tests."""
    models.engine = create_engine(url, echo=SQL_ECHO)
    SessionLocal.configure(bind=models.engine)


def initialize_database() -> None:
    Base.metadata.create_all(bind=models.engine)


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


# Run operations
def add_or_update_run(
    config_hash: str,
    n: int,
    dim: int,
    alpha: float,
    epsilon: float,
    horizon: float,
    bundle_path: str,
    t_obs: Optional[float] = None,
    gate_violation_time: Optional[float] = None,
    gate_violation_name: Optional[str] = None,
    collided: bool = False,
) -> int:
    """
    Register a simulated run, replacing the entry of an earlier run with the
    same config hash and particle count.

    Args:
        config_hash (str): Hash of the resolved experiment config.
        n (int): Particle count actually used.
        dim (int): Space dimension.
        alpha (float): Kernel exponent.
        epsilon (float): Discrete scale of the run.
        horizon (float): Requested horizon T.
        bundle_path (str): Directory the bundle was written to.
        t_obs (float, optional): Short-time window found by the diagnostics.
        gate_violation_time (float, optional): First time a gate failed.
        gate_violation_name (str, optional): Which gate failed first.
        collided (bool): Whether the run stopped on a collision.

    Returns:
        int: The run's id.
    """
    db: Session = next(get_db())
    run = (
        db.query(Run)
        .filter(Run.config_hash == config_hash, Run.n == n)
        .first()
    )
    if run is None:
        run = Run(config_hash=config_hash, n=n)
        db.add(run)
    run.dim = dim
    run.alpha = alpha
    run.epsilon = epsilon
    run.horizon = horizon
    run.bundle_path = bundle_path
    run.t_obs = _finite_or_none(t_obs)
    run.gate_violation_time = _finite_or_none(gate_violation_time)
    run.gate_violation_name = gate_violation_name
    run.collided = collided

    db.commit()
    run_id = run.run_id
    db.close()
    logger.info("Catalogued run %d (N=%d, hash %s)", run_id, n, config_hash[:12])
    return run_id


def replace_diagnostic_samples(run_id: int, rows: List[Dict[str, float]]) -> int:
    """Drop the samples stored for a run and store `rows` instead. Returns the count stored."""
    db: Session = next(get_db())
    db.query(DiagnosticSample).filter(DiagnosticSample.run_id == run_id).delete()
    for row in rows:
        db.add(
            DiagnosticSample(
                run_id=run_id,
                **{key: _finite_or_none(row.get(key)) for key in (
                    "t", "R", "K", "m", "Ebar", "dEbar",
                    "linf_eps_lo", "linf_eps_hi", "linf_eta_lo", "linf_eta_hi",
                )},
            )
        )
    db.commit()
    db.close()
    return len(rows)


def get_runs_for_config(config_hash: str) -> List[Dict]:
    """
    Retrieve every catalogued run of a config, smallest N first.

    Args:
        config_hash (str): Hash of the resolved experiment config.

    Returns:
        list: One dict per run.
    """
    db: Session = next(get_db())
    runs = db.query(Run).filter(Run.config_hash == config_hash).order_by(Run.n).all()
    result = [
        {
            "run_id": run.run_id,
            "n": run.n,
            "dim": run.dim,
            "epsilon": run.epsilon,
            "horizon": run.horizon,
            "t_obs": run.t_obs,
            "gate_violation_time": run.gate_violation_time,
            "gate_violation_name": run.gate_violation_name,
            "collided": run.collided,
            "bundle_path": run.bundle_path,
            "samples": len(run.samples),
        }
        for run in runs
    ]
    db.close()
    return result


def get_smallest_passing_n(config_hash: str, horizon: float) -> Optional[int]:
    """Smallest catalogued N whose gates all held up to `horizon` without a collision."""
    for run in get_runs_for_config(config_hash):
        if run["collided"] or run["horizon"] < horizon:
            continue
        violated = run["gate_violation_time"]
        if violated is None or violated > horizon:
            return run["n"]
    return None


def delete_runs_for_config(config_hash: str) -> int:
    db: Session = next(get_db())
    runs = db.query(Run).filter(Run.config_hash == config_hash).all()
    for run in runs:
        db.delete(run)
    db.commit()
    db.close()
    return len(runs)
