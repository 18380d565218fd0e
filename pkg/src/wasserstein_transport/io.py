"""JSON and CSV serialization.

JSON floats go through Python's ``repr``, the shortest string that reads
back to the identical double (never more than 17 significant digits). CSV
floats are written with ``%.17g``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cone import ConeElement
from .manifold import Manifold
from .measures import DiscreteMeasure, GaussianMeasure, TransportPlan
from .tangent import TangentField


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def measure_to_dict(mu) -> dict:
    if isinstance(mu, GaussianMeasure):
        return {"gaussian": {"mean": _floats(mu.mean), "cov": _floats(mu.cov)}}
    return {
        "manifold": mu.manifold.to_dict(),
        "atoms": [{"x": _floats(x), "w": float(w)} for x, w in zip(mu.points, mu.weights)],
    }


def measure_from_dict(d: dict):
    if "gaussian" in d:
        g = d["gaussian"]
        return GaussianMeasure(np.asarray(g["mean"], dtype=float), np.asarray(g["cov"], dtype=float))
    man = Manifold.from_dict(d["manifold"])
    pts = np.array([a["x"] for a in d["atoms"]], dtype=float)
    w = np.array([a["w"] for a in d["atoms"]], dtype=float)
    return DiscreteMeasure(man, pts, w)


def plan_to_dict(plan: TransportPlan) -> dict:
    return {"pairs": [[int(i), int(j), float(m)] for i, j, m in zip(plan.rows, plan.cols, plan.mass)]}


def plan_from_dict(d: dict, source: DiscreteMeasure, target: DiscreteMeasure) -> TransportPlan:
    pairs = d["pairs"]
    rows = np.array([p[0] for p in pairs], dtype=int)
    cols = np.array([p[1] for p in pairs], dtype=int)
    mass = np.array([p[2] for p in pairs], dtype=float)
    return TransportPlan(source, target, rows, cols, mass)


def field_to_dict(v: TangentField) -> dict:
    if v.is_gaussian:
        return {"linear": _floats(v.linear), "const": _floats(v.const)}
    return {"values": _floats(v.values)}


def field_from_dict(d: dict, base) -> TangentField:
    if "linear" in d:
        return TangentField(base, linear=np.asarray(d["linear"], dtype=float), const=np.asarray(d["const"], dtype=float))
    return TangentField(base, np.asarray(d["values"], dtype=float))


def cone_element_to_dict(e: ConeElement) -> dict:
    """Atoms: ``plan`` rows ``[source index, unit-length endpoint, mass]``."""
    out = {"base": measure_to_dict(e.base), "radius": e.radius}
    if e.is_gaussian:
        out["linear"] = _floats(e.linear)
        out["const"] = _floats(e.const)
    else:
        ends = e.target_points()
        out["plan"] = [[int(i), _floats(y), float(m)] for i, y, m in zip(e.rows, ends, e.mass)]
    if math.isfinite(e.horizon):
        out["horizon"] = e.horizon
    return out


def cone_element_from_dict(d: dict) -> ConeElement:
    base = measure_from_dict(d["base"])
    r = float(d["radius"])
    horizon = float(d.get("horizon", math.inf))
    if "linear" in d:
        e = ConeElement.gaussian(base, np.asarray(d["linear"]), np.asarray(d["const"]), r)
        return e
    rows = np.array([p[0] for p in d["plan"]], dtype=int)
    ends = np.array([p[1] for p in d["plan"]], dtype=float)
    mass = np.array([p[2] for p in d["plan"]], dtype=float)
    vel = base.manifold.log(base.points[rows], ends)
    return ConeElement.from_entries(base, rows, vel, mass, radius=r, horizon=horizon if "horizon" in d else None)


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True, default=_plain)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def format_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(x) for x in row])
    return path


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
