"""Reading and writing artifact bundles: CSV time series, JSON reports, JSON-lines tracking and flat binary grids."""

import csv
import json
import logging
import math
import os
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from meanfield.oracle import GridDensity

logger = logging.getLogger(__name__)

DIAGNOSTICS_FILE = "diagnostics.csv"
SHELLS_FILE = "shells.json"
TRACKING_FILE = "tracking.jsonl"
SUMMARY_FILE = "summary.json"
CONVERGENCE_FILE = "convergence.csv"
ORACLE_DIR = "oracle"


def jsonable(value):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf' and 'nan'."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def write_json(path: str, payload) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info("Wrote %s", path)
    return path


def read_json(path: str):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def write_jsonl(path: str, records: Iterable[Dict]) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(jsonable(record), sort_keys=True))
            handle.write("\n")
    logger.info("Wrote %s", path)
    return path


def read_jsonl(path: str) -> List[Dict]:
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def write_table(path: str, columns: Sequence[str], rows: Iterable[Dict]) -> str:
    """CSV with one column per name; floats are written in shortest round-trip form."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[name]) for name in columns])
    logger.info("Wrote %s", path)
    return path


def _cell(value):
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def read_table(path: str) -> List[Dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(handle)]


def write_grid_density(directory: str, name: str, density: GridDensity) -> Tuple[str, str]:
    """`name`.bin holds the values as float64 in C order, `name`.json the grid header."""
    os.makedirs(directory, exist_ok=True)
    binary = os.path.join(directory, f"{name}.bin")
    header = os.path.join(directory, f"{name}.json")
    np.ascontiguousarray(density.values, dtype=np.float64).tofile(binary)
    write_json(header, density.header())
    return binary, header


def read_grid_density(directory: str, name: str) -> GridDensity:
    header = read_json(os.path.join(directory, f"{name}.json"))
    values = np.fromfile(os.path.join(directory, f"{name}.bin"), dtype=np.float64)
    values = values.reshape(header["nx"], header["nv"])
    x_nodes = np.linspace(header["x_min"], header["x_max"], header["nx"])
    v_nodes = np.linspace(header["v_min"], header["v_max"], header["nv"])
    return GridDensity(x_nodes, v_nodes, values, time=header["time"])
