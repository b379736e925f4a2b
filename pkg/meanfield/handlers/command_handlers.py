import json
import logging
from argparse import Namespace

from meanfield.errors import (
    CollisionDetected,
    ConditionViolated,
    MeanFieldError,
    NonFiniteStateError,
    NormConditionsViolated,
)
from meanfield.experiment import convergence_study, run_experiment, verify_bundle
from utils.utils import get_message, load_bundle_schema, load_experiment_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COLLISION = 3
EXIT_INVARIANT = 4

# Anything else a run raises comes from the experiment's inputs.
FAILURE_EXIT_CODES = (
    ((CollisionDetected, NonFiniteStateError), EXIT_COLLISION),
    ((NormConditionsViolated, ConditionViolated), EXIT_INVARIANT),
)


def exit_code_for(exc: MeanFieldError) -> int:
    for kinds, code in FAILURE_EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return EXIT_CONFIG


def _report_failure(exc: MeanFieldError, what: str) -> int:
    logger.error("%s failed: %s", what, exc)
    print(get_message("genericError", kind=type(exc).__name__, message=exc))
    return exit_code_for(exc)


def _load(path: str):
    ok, result = load_experiment_config(path)
    if not ok:
        print(get_message("configInvalid", path=path, details="\n".join(result)))
    return ok, result


def handle_command_simulate(args: Namespace) -> int:
    """
    Handle the 'simulate' verb: run every N of the config and write the bundle.

    Args:
        args (Namespace): Parsed arguments with `config` and optional `output`.

    Returns:
        int: 0 on success, 2 for a bad config, 3 if a run collided, 4 if an
        invariant was violated.
    """
    ok, config = _load(args.config)
    if not ok:
        return EXIT_CONFIG

    try:
        result = run_experiment(config, output_dir=args.output)
    except MeanFieldError as exc:
        return _report_failure(exc, "Simulation")

    for outcome in result.outcomes:
        if not outcome.gates_applicable:
            continue
        first = outcome.first_violation
        if first:
            print(get_message("gateViolation", n=outcome.n, name=first["name"], time=first["time"]))
        else:
            print(get_message("noGateViolation", n=outcome.n, time=outcome.end_time))
    if config.dim == 1:
        print(get_message("gatesNotApplicable"))
    else:
        print(get_message("nTilde", n_tilde=result.summary["empirical_N_tilde"]))
    print(get_message("simulateDone", bundle_dir=result.bundle_dir))

    if result.collisions:
        for collision in result.collisions:
            print(get_message("collision", n=collision["N"], time=collision["time"], message=collision["message"]))
        return EXIT_COLLISION
    if result.invariant_violations:
        print(get_message("invariantViolations", count=result.invariant_violations))
        return EXIT_INVARIANT
    return EXIT_OK


def handle_command_converge(args: Namespace) -> int:
    ok, config = _load(args.config)
    if not ok:
        return EXIT_CONFIG
    try:
        result = convergence_study(config, output_dir=args.output)
    except MeanFieldError as exc:
        return _report_failure(exc, "Convergence study")
    decay = result.summary["decay_exponents"]
    print(get_message("decay", weak=float(decay["weak_distance"]), fconv=float(decay["fconv"])))
    print(get_message("convergeDone", bundle_dir=result.bundle_dir))
    return EXIT_OK


def handle_command_verify(args: Namespace) -> int:
    try:
        report = verify_bundle(args.bundle)
    except FileNotFoundError as exc:
        logger.error("Cannot verify %s: %s", args.bundle, exc)
        print(get_message("bundleMissing", path=args.bundle, missing=exc.filename))
        return EXIT_CONFIG
    if report.ok:
        print(get_message("verifyOk", path=args.bundle, checked=report.checked))
        return EXIT_OK
    print(get_message("verifyFailed", path=args.bundle, details="\n".join(report.violations)))
    return EXIT_INVARIANT


def handle_command_print_schema(args: Namespace) -> int:
    print(json.dumps(load_bundle_schema(), indent=2))
    return EXIT_OK
