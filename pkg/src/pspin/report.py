"""Deterministic JSON rendering and CSV projection of reports."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

__all__ = ["dumps", "to_csv", "CSV_COLUMNS"]


def _float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return format(x, ".17g")


def _render(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return "null" if obj is None else ("true" if obj else "false")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_render(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating, bool)) for v in obj):
            return "[" + ", ".join(_render(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _render(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON with floats at 17 significant digits (exact round trip) and ``null`` for non-finite values."""
    return _render(obj, indent, 0) + "\n"


CSV_COLUMNS = {
    "constants": ["p", "N", "gamma_p", "iota_p", "E_inf", "E_0", "c_p", "C_0", "K_0", "m_N"],
    "rmt": ["n", "v", "e_det_hermite", "log_abs_e_det_hermite", "e_absdet_exact", "e_absdet_mc", "mc_se", "ratio"],
    "kacrice": ["method", "x", "u", "log_rho", "nu", "nu_over_limit", "se"],
    "critical_points": ["value", "grad_residual", "morse_index", "min_eig", "degenerate"],
    "extremal": ["instance", "disorder_seed", "centered_value"],
    "perturb": ["instance", "value", "morse_index", "accepted", "overlap", "predicted_shift", "actual_shift", "residual"],
}


def _rows(key: str, block) -> list[dict]:
    if key == "constants":
        return [block]
    if key == "rmt":
        return block["rows"]
    if key == "kacrice":
        return block["points"]
    if key == "critical_points":
        return block["points"]
    if key == "extremal":
        return [
            {"instance": r["index"], "disorder_seed": r["disorder_seed"], "centered_value": v}
            for r in block["instances"]
            for v in r["centered_values"]
        ]
    if key == "perturb":
        return [dict(m, instance=r["index"]) for r in block["instances"] for m in r["matches"]]
    raise KeyError(key)


def to_csv(report: dict) -> str:
    """One table per module key, each preceded by a ``# key`` line and a fixed header row."""
    out = io.StringIO()
    for key, cols in CSV_COLUMNS.items():
        if key not in report:
            continue
        out.write(f"# {key}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(cols)
        for row in _rows(key, report[key]):
            vals = []
            for c in cols:
                v = row.get(c)
                if isinstance(v, (float, np.floating)):
                    v = "" if not math.isfinite(v) else format(float(v), ".17g")
                vals.append("" if v is None else v)
            w.writerow(vals)
    return out.getvalue()
