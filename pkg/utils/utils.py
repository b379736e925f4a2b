import json
import os
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values

from config.config import DESK_MAX_N
from meanfield.ensemble import DENSITY_KINDS, SUPPORTED_DIMENSIONS, InitialDensitySpec
from meanfield.errors import ConfigInvalid
from meanfield.experiment import ExperimentConfig
from meanfield.forces import ATTRACTIVE, REPULSIVE

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")

SIGNS = {"repulsive": REPULSIVE, "attractive": ATTRACTIVE}
TRUE_VALUES = ["true", "1", "t", "yes"]
FALSE_VALUES = ["false", "0", "f", "no"]


def _to_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in TRUE_VALUES:
        return True
    if lowered in FALSE_VALUES:
        return False
    raise ValueError(f"expected true or false, got '{text}'")


def _to_int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _to_float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _to_sign(text: str) -> int:
    try:
        return SIGNS[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected one of {sorted(SIGNS)}, got '{text}'") from None


def _to_kind(text: str) -> str:
    kind = text.strip()
    if kind not in DENSITY_KINDS:
        raise ValueError(f"expected one of {DENSITY_KINDS}, got '{kind}'")
    return kind


# key -> (section object, field name, converter)
CONFIG_KEYS: Dict[str, Tuple[str, str, Callable[[str], object]]] = {
    "DENSITY_KIND": ("density", "kind", _to_kind),
    "DENSITY_R0_X": ("density", "r0_x", float),
    "DENSITY_R0_V": ("density", "r0_v", float),
    "DENSITY_SIGMA_X": ("density", "sigma_x", float),
    "DENSITY_SIGMA_V": ("density", "sigma_v", float),
    "DENSITY_STREAM_CENTER": ("density", "stream_center", float),
    "DENSITY_STREAM_WIDTH": ("density", "stream_width", float),
    "DENSITY_JITTER": ("density", "jitter", float),
    "RUN_N": ("experiment", "ns", _to_int_list),
    "RUN_DIM": ("experiment", "dim", int),
    "RUN_T": ("experiment", "horizon", float),
    "RUN_KAPPA": ("experiment", "kappa", int),
    "RUN_SEED": ("experiment", "seed", int),
    "RUN_ALLOW_LARGE": ("experiment", "allow_large", _to_bool),
    "KERNEL_ALPHA": ("experiment", "alpha", float),
    "KERNEL_SIGN": ("experiment", "sign", _to_sign),
    "KERNEL_STRENGTH": ("experiment", "strength", float),
    "KERNEL_DELTA": ("experiment", "delta", float),
    "DIAG_BETA": ("experiment", "beta", float),
    "DIAG_SHORT_TIME": ("experiment", "short_time", _to_bool),
    "DIAG_PAIR_BUDGET": ("experiment", "pair_budget", int),
    "ETA_STAGES": ("experiment", "stages", int),
    "TRACK_BOXES": ("experiment", "track_boxes", int),
    "TRACK_GROWTH_SAFETY": ("experiment", "growth_safety", float),
    "SHELL_ANCHORS": ("experiment", "shell_anchors", int),
    "ORACLE_NX": ("experiment", "oracle_nx", int),
    "ORACLE_NV": ("experiment", "oracle_nv", int),
    "ORACLE_DT": ("experiment", "oracle_dt", float),
    "ORACLE_CHECKPOINTS": ("experiment", "oracle_checkpoints", _to_float_list),
    "ORACLE_WIDTHS": ("experiment", "oracle_widths", _to_float_list),
    "ORACLE_CENTERS": ("experiment", "oracle_centers", int),
    "ORACLE_CUT": ("experiment", "oracle_cut", float),
    "OUTPUT_DIR": ("experiment", "output_dir", str),
}


def _range_messages(values: Dict[str, object]) -> List[str]:
    messages = []
    if values.get("dim", 1) not in SUPPORTED_DIMENSIONS:
        messages.append(f"RUN_DIM: must be one of {SUPPORTED_DIMENSIONS}, got {values['dim']}")
    if values.get("strength", 1.0) < 0:
        messages.append("KERNEL_STRENGTH: must be non-negative")
    if values.get("delta", 0.0) < 0:
        messages.append("KERNEL_DELTA: must be non-negative")
    if values.get("growth_safety", 2.0) < 1:
        messages.append("TRACK_GROWTH_SAFETY: must be at least 1")
    for key, name in (("TRACK_BOXES", "track_boxes"), ("SHELL_ANCHORS", "shell_anchors"),
                      ("DIAG_PAIR_BUDGET", "pair_budget"), ("ORACLE_NX", "oracle_nx"),
                      ("ORACLE_NV", "oracle_nv"), ("ORACLE_CENTERS", "oracle_centers")):
        if name in values and values[name] < 1:
            messages.append(f"{key}: must be at least 1")
    for key, name in (("ORACLE_DT", "oracle_dt"), ("ORACLE_CUT", "oracle_cut")):
        if name in values and values[name] <= 0:
            messages.append(f"{key}: must be positive")
    if "oracle_widths" in values and (
        len(values["oracle_widths"]) != 3 or min(values["oracle_widths"]) <= 0
    ):
        messages.append("ORACLE_WIDTHS: must be three positive widths")
    ns = values.get("ns", ())
    if any(n < 1 for n in ns):
        messages.append("RUN_N: particle counts must be positive")
    elif ns and max(ns) > DESK_MAX_N and not values.get("allow_large", False):
        messages.append(f"RUN_N: {max(ns)} exceeds {DESK_MAX_N}; set RUN_ALLOW_LARGE=true to run it anyway")
    return messages


def parse_experiment_config(
    values: Dict[str, Optional[str]],
) -> Tuple[bool, Union[List[str], ExperimentConfig]]:
    """
    Parses a flat key = value mapping into an experiment config.

    Args:
        values (Dict[str, Optional[str]]): Keys as read from the config file.

    Returns:
        Tuple[bool, Union[List[str], ExperimentConfig]]: (True, config) when every
        key parsed and validated, otherwise (False, one message per bad field).

    Raises:
        None

    Examples:
        >>> ok, config = parse_experiment_config({"RUN_N": "16,64", "KERNEL_ALPHA": "0.4"})
        >>> ok, config.ns, config.alpha
        (True, (16, 64), 0.4)
    """
    messages = []
    density_fields, experiment_fields = {}, {}
    for key, raw in values.items():
        key = key.strip().upper()
        if key not in CONFIG_KEYS:
            messages.append(f"{key}: unknown key")
            continue
        if raw is None or raw.strip() == "":
            messages.append(f"{key}: missing value")
            continue
        section, name, convert = CONFIG_KEYS[key]
        try:
            parsed = convert(raw)
        except ValueError as exc:
            messages.append(f"{key}: {exc}")
            continue
        (density_fields if section == "density" else experiment_fields)[name] = parsed

    messages.extend(_range_messages(experiment_fields))
    if messages:
        return False, messages

    try:
        density = InitialDensitySpec(**density_fields)
    except (ValueError, ConfigInvalid) as exc:
        return False, [f"DENSITY: {exc}"]
    try:
        config = ExperimentConfig(density=density, **experiment_fields)
    except ConfigInvalid as exc:
        return False, list(exc.messages)
    return True, config


def load_experiment_config(path: str) -> Tuple[bool, Union[List[str], ExperimentConfig]]:
    """Reads a dotenv-format experiment file and parses it."""
    if not os.path.isfile(path):
        return False, [f"{path}: no such config file"]
    return parse_experiment_config(dotenv_values(path))


@lru_cache(maxsize=None)
def _messages() -> Dict[str, str]:
    with open(os.path.join(DATA_DIR, "cli_messages.json"), encoding="utf-8") as handle:
        return json.load(handle)


def get_message(key: str, **fields) -> str:
    return _messages()[key].format(**fields)


def load_bundle_schema() -> Dict:
    with open(os.path.join(DATA_DIR, "bundle_schema.json"), encoding="utf-8") as handle:
        return json.load(handle)
