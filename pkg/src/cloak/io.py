"""Canonical JSON and the on-disk formats for systems, objectives and keys."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .group import Isomorphism
from .objective import ControlObjective
from .sysmodel import BarePlant, lift_point

WIRE_DIGITS = 17


def jsonable(obj):
    """Recursively convert numpy containers and scalars to plain Python."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _encode(obj, digits: int, out: list) -> None:
    if isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite number in message")
        s = format(obj, f".{digits}g")
        out.append("0" if s == "-0" else s)
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _encode(obj[key], digits, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _encode(v, digits, out)
        out.append("]")
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def canonical_dumps(obj, digits: int = WIRE_DIGITS) -> str:
    """Sorted keys, no whitespace, every float printed with ``digits``
    significant digits. At 17 digits the text round-trips every double.
    """
    out: list[str] = []
    _encode(jsonable(obj), digits, out)
    return "".join(out)


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_json(path, data) -> None:
    Path(path).write_text(json.dumps(jsonable(data), indent=2) + "\n", encoding="utf-8")


# -- systems --------------------------------------------------------------------

def plant_to_json(plant: BarePlant) -> dict:
    return jsonable({"A": plant.A, "B": plant.B, "C": plant.C, "c": plant.c, "d": plant.d})


def plant_from_json(data: dict) -> BarePlant:
    return BarePlant(data["A"], data["B"], data["C"], data.get("c"), data.get("d"))


# -- objectives -----------------------------------------------------------------

def objective_to_json(obj: ControlObjective, x0=None) -> dict:
    data = {"M": obj.M, "D": obj.D, "x_ref": obj.x_ref, "u_ref": obj.u_ref, "N": obj.N}
    if x0 is not None:
        data["x0"] = x0
    return jsonable(data)


def _lifted_rows(rows, n: int | None) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if n is not None and rows.shape[1] == n:
        rows = np.hstack([rows, np.ones((rows.shape[0], 1))])
    return rows


def objective_from_json(data: dict, n: int | None = None):
    """Objective and optional initial state; bare references are lifted when ``n`` is given."""
    x_ref = _lifted_rows(data["x_ref"], n)
    D = data.get("D")
    obj = ControlObjective(data["M"], x_ref, data["u_ref"], D if D else None, data["N"])
    x0 = data.get("x0")
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape[0] == obj.n:
            x0 = lift_point(x0)
    return obj, x0


# -- keys -----------------------------------------------------------------------

def key_to_json(psi: Isomorphism, scenario: int, seed: int, **extra) -> dict:
    data = {"P": psi.P, "F": psi.F, "G": psi.G, "S": psi.S,
            "scenario": int(scenario), "seed": int(seed)}
    data.update(extra)
    return jsonable(data)


def key_from_json(data: dict) -> Isomorphism:
    return Isomorphism(data["P"], data["F"], data["G"], data["S"])
