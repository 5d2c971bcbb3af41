"""CSV and JSON export of curves, paths, measures and projections.

Floats are written with 17 significant digits, so a CSV read back gives the
same doubles.
"""

import csv
import json

import numpy as np

from .trajectory import ControlPath, SpaceTimeCurve
from .young import DiscreteYoungMeasure

__all__ = [
    "FLOAT_FORMAT",
    "write_curve_csv",
    "read_curve_csv",
    "write_path_csv",
    "path_to_dict",
    "path_from_dict",
    "solution_to_dict",
    "solution_from_dict",
    "write_graph_csv",
    "dump_json",
    "load_json",
]

FLOAT_FORMAT = "%.17g"


def _fmt(x):
    return FLOAT_FORMAT % x


def write_curve_csv(curve, path):
    """Nodes of ``curve`` as rows ``s, t, y_1, ..., y_n``."""
    n = curve.y_nodes.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s", "t"] + [f"y{i + 1}" for i in range(n)])
        for s, t, y in zip(curve.s_grid, curve.t_nodes, curve.y_nodes):
            wr.writerow([_fmt(s), _fmt(t)] + [_fmt(x) for x in y])


def read_curve_csv(path):
    """Inverse of :func:`write_curve_csv`; the result has no ``source``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SpaceTimeCurve(data[:, 0], data[:, 1], data[:, 2:])


def write_path_csv(cp, path):
    """Cells of a control path as rows ``s0, s1, v, u_1, ..., u_k``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s0", "s1", "v"] + [f"u{i + 1}" for i in range(cp.k)])
        for a, b, v, u in zip(cp.s_grid[:-1], cp.s_grid[1:], cp.v, cp.u):
            wr.writerow([_fmt(a), _fmt(b), _fmt(v)] + [_fmt(x) for x in u])


def path_to_dict(cp):
    return {"s_grid": cp.s_grid.tolist(), "v": cp.v.tolist(), "u": cp.u.tolist()}


def path_from_dict(d):
    return ControlPath(np.asarray(d["s_grid"], float), np.asarray(d["v"], float),
                       np.asarray(d["u"], float))


def solution_to_dict(sol, problem=None):
    """JSON form of a path or Young measure, tagged by kind."""
    if isinstance(sol, ControlPath):
        out = {"kind": "path", "path": path_to_dict(sol)}
    elif isinstance(sol, DiscreteYoungMeasure):
        out = {"kind": "measure", "measure": sol.to_dict()}
    else:
        raise TypeError("expected a ControlPath or DiscreteYoungMeasure")
    if problem is not None:
        out["problem"] = problem
    return out


def solution_from_dict(d):
    kind = d.get("kind")
    if kind == "path":
        return path_from_dict(d["path"])
    if kind == "measure":
        return DiscreteYoungMeasure.from_dict(d["measure"])
    raise ValueError(f"unknown solution kind {kind!r}")


def write_graph_csv(gp, path):
    """Samples ``t, y_1, ..., y_n`` of a graph projection."""
    n = gp.y_samples.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"y{i + 1}" for i in range(n)])
        for t, y in zip(gp.t_samples, gp.y_samples):
            wr.writerow([_fmt(t)] + [_fmt(x) for x in y])


def dump_json(obj, path):
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
