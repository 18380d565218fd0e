"""Experiment drivers, instance builders and reports."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .cone import (
    ConeElement,
    EpsSchedule,
    cone_distance,
    cone_map,
    cone_width,
    composition_defect,
    d_estimate,
    sample_unit_elements,
    transport_limit,
)
from .errors import AssumptionViolation, NoConvergence
from .geodesic import GaussianGeodesic, MongeGeodesic, check_monge_interior
from .linear import MAX_BUDGET, Subdivision, linear_parallel_transport
from .manifold import Manifold
from .measures import (
    DiscreteMeasure,
    GaussianMeasure,
    gaussian_map_distance,
    gaussian_map_w2,
    plan_distance,
    solve_ot,
    transport_arrays,
)
from .oracles import (
    brute_force_assignment,
    oracle_1d_cone_map,
    oracle_1d_transport,
    oracle_gaussian_transport,
)
from .tangent import coords, estimate_c, from_coords, tangent_basis

EXPERIMENTS = ("geodesic", "linear", "cone", "dcheck", "plandist", "oracle")


# -- configuration -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything a run depends on; echoed in full into its JSON summary."""

    geodesic: dict
    interval: tuple = (0.0, 1.0)
    tol: float = 1e-6
    eps_schedule: EpsSchedule = field(default_factory=EpsSchedule)
    budget: int = MAX_BUDGET
    seed: int = 0
    samples: int = 32
    outputs: dict = field(default_factory=lambda: {"csv": "trace.csv", "json": "summary.json"})
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.interval = tuple(float(x) for x in self.interval)
        if len(self.interval) != 2:
            raise ValueError("interval needs two endpoints")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 1 <= int(self.budget) <= MAX_BUDGET:
            raise ValueError(f"budget must lie in [1, {MAX_BUDGET}]")
        self.budget = int(self.budget)
        self.seed = int(self.seed)
        if isinstance(self.eps_schedule, dict):
            self.eps_schedule = EpsSchedule.from_dict(self.eps_schedule)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["interval"] = list(self.interval)
        d["eps_schedule"] = self.eps_schedule.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names - {"experiment"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(io.read_json(path))

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class ConvergenceReport:
    """Rows ``(n, width, successive_diff, defect, wall_time)`` plus a fitted slope."""

    rows: list
    slope: Optional[float]
    slope_residual: Optional[float]
    criteria: dict
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r[0])

    def summary(self) -> dict:
        return {
            "status": self.status,
            "slope": self.slope,
            "slope_residual": self.slope_residual,
            "criteria": self.criteria,
            "extra": self.extra,
        }


def fit_slope(xs, ys) -> tuple:
    """Least-squares slope of log y against log x over finite positive y.

    Returns ``(None, None)`` when fewer than two usable points remain.
    """
    pts = [(x, y) for x, y in zip(xs, ys) if x > 0 and y > 0 and math.isfinite(y)]
    if len(pts) < 2:
        return None, None
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    coef, res, *_ = np.polyfit(lx, ly, 1, full=True)
    resid = float(np.sqrt(res[0] / len(pts))) if res.size else 0.0
    return float(coef[0]), resid


def _criterion(passed, value=None, threshold=None) -> dict:
    return {"passed": None if passed is None else bool(passed), "value": value, "threshold": threshold}


# -- instance builders -------------------------------------------------------


def translation_geodesic(n: int = 6, dim: int = 2, shift=None, seed: int = 0) -> MongeGeodesic:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    shift = np.ones(dim) if shift is None else np.asarray(shift, dtype=float)
    mu = DiscreteMeasure.uniform(Manifold.euclidean(dim), x)
    return MongeGeodesic.from_map(mu, x + shift)


def random_discrete_geodesic(n: int = 6, dim: int = 2, scale: float = 1.5, seed: int = 0) -> MongeGeodesic:
    rng = np.random.default_rng(seed)
    m = Manifold.euclidean(dim)
    mu = DiscreteMeasure.uniform(m, rng.standard_normal((n, dim)))
    nu = DiscreteMeasure.uniform(m, scale * rng.standard_normal((n, dim)) + 0.5)
    return MongeGeodesic.between(mu, nu)


def line_geodesic(n: int = 6, seed: int = 0) -> MongeGeodesic:
    """Uniform atoms on the real line moved by their monotone coupling."""
    rng = np.random.default_rng(seed)
    m = Manifold.euclidean(1)
    mu = DiscreteMeasure.uniform(m, np.sort(rng.standard_normal(n))[:, None])
    nu = DiscreteMeasure.uniform(m, np.sort(2.0 * rng.standard_normal(n) + 1.0)[:, None])
    return MongeGeodesic.between(mu, nu)


def sphere_atom_geodesic(seed: int = 0, radius: float = 1.0) -> MongeGeodesic:
    rng = np.random.default_rng(seed)
    s = Manifold.sphere(radius)
    while True:
        p, q = rng.standard_normal((2, 3))
        p, q = p / np.linalg.norm(p), q / np.linalg.norm(q)
        if p @ q > -0.9:
            break
    return MongeGeodesic(solve_ot(DiscreteMeasure.dirac(s, p), DiscreteMeasure.dirac(s, q)))


def gaussian_scaling_geodesic(dim: int = 2, factor: float = 2.0) -> GaussianGeodesic:
    """N(0, I) -> N(0, factor^2 I)."""
    return GaussianGeodesic(GaussianMeasure(np.zeros(dim), np.eye(dim)), GaussianMeasure(np.zeros(dim), factor**2 * np.eye(dim)))


def anisotropic_gaussian_geodesic(scales=(2.0, 1.0)) -> GaussianGeodesic:
    """N(0, I) -> N(0, diag(scales)^2)."""
    s = np.asarray(scales, dtype=float)
    return GaussianGeodesic(GaussianMeasure(np.zeros(s.size), np.eye(s.size)), GaussianMeasure(np.zeros(s.size), np.diag(s**2)))


def build_geodesic(spec: dict, seed: int = 0):
    """Geodesic from a config ``geodesic`` block."""
    kind = spec.get("backend")
    seed = int(spec.get("seed", seed))
    if kind == "gaussian":
        src = io.measure_from_dict({"gaussian": spec["source"]})
        tgt = io.measure_from_dict({"gaussian": spec["target"]})
        return GaussianGeodesic(src, tgt)
    if kind == "gaussian_scaling":
        return gaussian_scaling_geodesic(int(spec.get("dim", 2)), float(spec.get("factor", 2.0)))
    if kind == "gaussian_anisotropic":
        return anisotropic_gaussian_geodesic(spec.get("scales", (2.0, 1.0)))
    if kind == "discrete":
        mu = io.measure_from_dict(spec["source"])
        nu = io.measure_from_dict(spec["target"])
        return MongeGeodesic.between(mu, nu)
    if kind == "translation":
        return translation_geodesic(int(spec.get("n", 6)), int(spec.get("dim", 2)), spec.get("shift"), seed)
    if kind == "random_discrete":
        return random_discrete_geodesic(int(spec.get("n", 6)), int(spec.get("dim", 2)), float(spec.get("scale", 1.5)), seed)
    if kind == "line":
        return line_geodesic(int(spec.get("n", 6)), seed)
    if kind == "sphere_atom":
        return sphere_atom_geodesic(seed, float(spec.get("radius", 1.0)))
    raise ValueError(f"unknown geodesic backend {kind!r}")


def _element(cfg: ExperimentConfig, g, t: float) -> ConeElement:
    if "element" in cfg.options:
        return io.cone_element_from_dict(cfg.options["element"])
    return sample_unit_elements(g.evaluate(t), 1, cfg.seed, split=bool(cfg.options.get("split", False)))[0]


# -- linear transport --------------------------------------------------------


def gaussian_oracle_matrix(g: GaussianGeodesic, a: float, b: float, step: float = 1e-4) -> np.ndarray:
    """Oracle transport on T(mu_a), as columns in full coordinates at mu_b."""
    mu_a = g.evaluate(a)
    basis = tangent_basis(mu_a)
    cols = [coords(oracle_gaussian_transport(g, a, b, from_coords(mu_a, col), step)) for col in basis.T]
    return np.array(cols).T


def run_linear_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    g = build_geodesic(cfg.geodesic, cfg.seed)
    a, b = cfg.interval
    schedule = cfg.options.get("schedule")
    status = "ok"
    result = None
    try:
        result = linear_parallel_transport(g, a, b, cfg.tol, cfg.budget, schedule=schedule, defect_trials=50, seed=cfg.seed)
        trace = result.trace
    except NoConvergence as exc:
        trace = exc.trace
        status = "no_convergence"
    rows = [(r.n, r.width, r.successive_diff, r.unitarity_defect, r.wall_time) for r in trace]
    slope, resid = fit_slope([r.n for r in trace], [r.successive_diff for r in trace])
    all_zero = all(r.successive_diff == 0 or not math.isfinite(r.successive_diff) for r in trace)
    criteria = {
        "linear-converged": _criterion(result is not None, trace[-1].n if trace else None, cfg.budget),
        "linear-cauchy-width": _criterion(all(r.cauchy_ok for r in trace)),
        "linear-unitarity": _criterion(
            None if result is None else trace[-1].unitarity_defect < 1e-4, trace[-1].unitarity_defect if trace else None, 1e-4
        ),
    }
    extra = {"slope_exact_zero": all_zero and len(trace) > 1, "estimate_c": estimate_c(g)}
    if result is not None and isinstance(g, GaussianGeodesic) and cfg.options.get("oracle", True):
        oracle = gaussian_oracle_matrix(g, a, b, float(cfg.options.get("oracle_step", 1e-4)))
        ours = result.operator.matrix @ tangent_basis(g.evaluate(a))
        rel = float(np.linalg.norm(ours - oracle, 2) / np.linalg.norm(oracle, 2))
        criteria["linear-oracle"] = _criterion(rel < 1e-3, rel, 1e-3)
    return ConvergenceReport(rows, slope, resid, criteria, status, extra)


# -- cone transport ----------------------------------------------------------


def oracle_1d_limit(g, a: float, b: float, e: ConeElement, n: int, eps: float) -> ConeElement:
    s = Subdivision.uniform(a, b, n)
    times = s.ordered(reverse=b < a)
    cur = e
    for t0, t1 in zip(times, times[1:]):
        cur = oracle_1d_cone_map(g, t0, t1, cur, eps)
    return cur


def _is_line(g) -> bool:
    return g.manifold.kind == "euclidean" and g.manifold.dim == 1


def run_cone_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    g = build_geodesic(cfg.geodesic, cfg.seed)
    a, b = cfg.interval
    e = _element(cfg, g, a)
    opts = cfg.options
    kw = dict(
        budget=min(cfg.budget, 1024),
        c_hat=opts.get("c_hat"),
        width_samples=int(opts.get("width_samples", 4)),
        well_defined_tol=opts.get("well_defined_tol", 1e-3),
        seed=cfg.seed,
    )
    extra = {"estimate_c": estimate_c(g), "assumption_violations": []}
    try:
        res = transport_limit(g, a, b, e, cfg.tol, cfg.eps_schedule, **kw)
    except AssumptionViolation as exc:
        extra["assumption_violations"].append({"message": str(exc), **exc.details})
        return ConvergenceReport([], None, None, {}, "assumption_violation", extra)
    except NoConvergence as exc:
        rows = [(r.n, r.width, r.successive_diff, abs(r.radius - e.radius), r.wall_time) for r in exc.trace]
        slope, resid = fit_slope([r[0] for r in rows], [r[2] for r in rows])
        crit = {"cone-converged": _criterion(False, rows[-1][0] if rows else None, kw["budget"])}
        return ConvergenceReport(rows, slope, resid, crit, "no_convergence", extra)
    rows = [(r.n, r.width, r.successive_diff, abs(r.radius - e.radius), r.wall_time) for r in res.trace]
    slope, resid = fit_slope([r[0] for r in rows], [r[2] for r in rows])
    crit = {
        "cone-converged": _criterion(True, res.converged_n, kw["budget"]),
        "cone-cauchy-width": _criterion(all(r.cauchy_ok for r in res.trace)),
    }
    extra.update({"width": res.width, "c_hat": res.c_hat, "eps": res.eps, "radius": res.element.radius,
                  "element": io.cone_element_to_dict(res.element)})
    if opts.get("roundtrip", True):
        try:
            bw = transport_limit(g, b, a, res.element, cfg.tol, cfg.eps_schedule, **kw)
            defect = cone_distance(e, bw.element, cfg.eps_schedule)
            bound = res.width + bw.width + 1e-6
            extra["roundtrip_defect"] = defect
            crit["cone-roundtrip"] = _criterion(defect <= bound, defect, bound)
        except (NoConvergence, AssumptionViolation) as exc:
            extra["roundtrip_error"] = str(exc)
    if _is_line(g):
        ref = oracle_1d_limit(g, a, b, e, res.converged_n, res.eps)
        dist = cone_distance(res.element, ref, cfg.eps_schedule)
        crit["cone-line-oracle"] = _criterion(dist <= 1e-4, dist, 1e-4)
    return ConvergenceReport(rows, slope, resid, crit, "ok", extra)


# -- D sweeps ----------------------------------------------------------------


def run_dcheck(cfg: ExperimentConfig) -> tuple:
    """Rows ``(t1, t2, eps, d_ratio, defect, width)`` over ordered grid pairs.

    ``d_ratio`` is the max over sampled unit elements at that epsilon,
    ``defect`` the largest round-trip composition defect t1 -> t2 -> t1, and
    ``width`` the one-segment cone width with D estimated on the pair.
    """
    g = build_geodesic(cfg.geodesic, cfg.seed)
    a, b = cfg.interval
    grid = cfg.options.get("grid") or list(np.linspace(a, b, 4))
    c_hat = cfg.options.get("c_hat") or estimate_c(g)
    samples = cfg.samples
    rows = []
    for i, t1 in enumerate(grid):
        elems = sample_unit_elements(g.evaluate(t1), samples, cfg.seed)
        for t2 in grid[i + 1 :]:
            d = d_estimate(g, t1, t2, elems, cfg.eps_schedule)
            width = cone_width(g, Subdivision((t1, t2)), c_hat, [d])
            for eps in cfg.eps_schedule.values:
                ratios = [cone_map(g, t1, t2, e, eps)[1].d_ratio for e in elems]
                defects = [composition_defect(g, t1, t2, t1, e, eps, cfg.eps_schedule) for e in elems]
                rows.append((t1, t2, eps, max(ratios), max(defects), width))
    summary = {"c_hat": c_hat, "samples": samples, "grid": [float(x) for x in grid],
               "note": "D is a lower estimate: the supremum runs over sampled unit elements only"}
    return rows, summary


# -- plan distance versus endpoint distance ----------------------------------


def run_plan_distance_limit(cfg: ExperimentConfig) -> tuple:
    """Rows ``(eps, plan_distance, w2, ratio)`` for two segments from a common base."""
    g = build_geodesic(cfg.geodesic, cfg.seed)
    t = cfg.interval[0]
    mu = g.evaluate(t)
    elems = sample_unit_elements(mu, 2, cfg.seed, split=bool(cfg.options.get("split", False)))
    e1 = elems[0]
    e2 = e1 if cfg.options.get("identical", False) else elems[1]
    rows = []
    for eps in cfg.eps_schedule.values:
        if isinstance(mu, GaussianMeasure):
            k1 = np.eye(mu.dim) + eps * e1.linear
            k2 = np.eye(mu.dim) + eps * e2.linear
            pd = gaussian_map_distance(mu.cov, k1 - k2, eps * (e1.const - e2.const))
            w = gaussian_map_w2(e1.segment_measure(eps), e2.segment_measure(eps))
        else:
            pd = plan_distance(e1.segment_plan(eps), e2.segment_plan(eps))
            x1, a1 = e1.segment_measure(eps)
            x2, a2 = e2.segment_measure(eps)
            w = math.sqrt(transport_arrays(mu.manifold, x1, a1, x2, a2)[0])
        ratio = pd / w if w > 0 else math.nan
        rows.append((eps, pd, w, ratio))
    degenerate = all(not math.isfinite(r[3]) for r in rows)
    return rows, {"degenerate": degenerate, "t": t}


# -- geodesic inspection -----------------------------------------------------


def run_geodesic(cfg: ExperimentConfig) -> tuple:
    g = build_geodesic(cfg.geodesic, cfg.seed)
    summary = {"length": g.length, "lipschitz_bound": g.lipschitz_bound, "estimate_c": estimate_c(g)}
    if isinstance(g, MongeGeodesic):
        rep = check_monge_interior(g, int(cfg.options.get("samples", 31)), seed=cfg.seed)
        rows = [(float(t), float(m)) for t, m in zip(rep.times, rep.min_distance)]
        summary.update({"n_atoms": g.n_atoms, "monge_violation": rep.violation, "min_distance": rep.overall_min})
        return ("t", "min_distance"), rows, summary
    times = np.linspace(0.0, 1.0, int(cfg.options.get("samples", 31)) + 2)
    rows = [(float(t), gaussian_map_w2(g.source, g.evaluate(float(t)))) for t in times]
    return ("t", "w2_from_source"), rows, summary


# -- oracles -----------------------------------------------------------------


def run_oracle(cfg: ExperimentConfig) -> tuple:
    kind = cfg.options.get("oracle", "1d")
    rng = np.random.default_rng(cfg.seed)
    count = int(cfg.options.get("count", 500 if kind == "1d" else 200))
    if kind in ("1d", "assignment"):
        rows = []
        for k in range(count):
            if kind == "1d":
                n, m = rng.integers(1, 9, size=2)
                man = Manifold.euclidean(1)
                a = rng.random(n) + 0.1
                b = rng.random(m) + 0.1
                mu = DiscreteMeasure(man, rng.standard_normal((n, 1)), a / a.sum())
                nu = DiscreteMeasure(man, rng.standard_normal((m, 1)), b / b.sum())
                ref = oracle_1d_transport(mu, nu).cost()
            else:
                n = int(rng.integers(1, 8))
                dim = int(rng.integers(1, 4))
                man = Manifold.euclidean(dim)
                mu = DiscreteMeasure.uniform(man, rng.standard_normal((n, dim)))
                nu = DiscreteMeasure.uniform(man, rng.standard_normal((n, dim)))
                ref = brute_force_assignment(mu, nu)[0]
            got = solve_ot(mu, nu).cost()
            rows.append((k, got, ref, abs(got - ref)))
        worst = max(r[3] for r in rows)
        return ("instance", "solver_cost", "oracle_cost", "abs_diff"), rows, {"max_abs_diff": worst, "passed": bool(worst <= 1e-10)}
    if kind == "gaussian":
        g = build_geodesic(cfg.geodesic, cfg.seed)
        a, b = cfg.interval
        mu = g.evaluate(a)
        field_spec = cfg.options.get("field")
        if field_spec is None:
            f = from_coords(mu, tangent_basis(mu) @ rng.standard_normal(tangent_basis(mu).shape[1]))
        else:
            f = io.field_from_dict(field_spec, mu)
        step = float(cfg.options.get("step", 1e-4))
        out = oracle_gaussian_transport(g, a, b, f, step)
        half = oracle_gaussian_transport(g, a, b, f, step / 2)
        change = float(np.max(np.abs(coords(out) - coords(half))))
        rows = [(i, float(x)) for i, x in enumerate(coords(out))]
        summary = {"field": io.field_to_dict(out), "norm_in": f.norm(), "norm_out": out.norm(),
                   "step_halving_change": change, "passed": bool(change < 1e-8)}
        return ("index", "coordinate"), rows, summary
    raise ValueError(f"unknown oracle {kind!r}")


# -- output ------------------------------------------------------------------

LINEAR_HEADER = ("n", "width", "successive_diff", "unitarity_defect")
CONE_HEADER = ("n", "width", "successive_diff", "radius_change")
DCHECK_HEADER = ("t1", "t2", "eps", "d_ratio", "defect", "width")
PLANDIST_HEADER = ("eps", "plan_distance", "w2", "ratio")


def run_experiment(name: str, cfg: ExperimentConfig, out_dir) -> dict:
    """Run one experiment, write its CSV and JSON summary, return the summary."""
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}")
    out_dir = Path(out_dir)
    t0 = time.perf_counter()
    summary = {"experiment": name, "seed": cfg.seed, "config": cfg.to_dict(), "status": "ok"}
    if name in ("linear", "cone"):
        rep = run_linear_convergence(cfg) if name == "linear" else run_cone_convergence(cfg)
        header = LINEAR_HEADER if name == "linear" else CONE_HEADER
        rows = [r[:4] for r in rep.rows]
        summary.update(rep.summary())
    elif name == "dcheck":
        header = DCHECK_HEADER
        rows, extra = run_dcheck(cfg)
        summary["extra"] = extra
    elif name == "plandist":
        header = PLANDIST_HEADER
        rows, extra = run_plan_distance_limit(cfg)
        summary["extra"] = extra
        if extra["degenerate"]:
            summary["status"] = "degenerate"
    elif name == "geodesic":
        header, rows, extra = run_geodesic(cfg)
        summary["extra"] = extra
    else:
        header, rows, extra = run_oracle(cfg)
        summary["extra"] = extra
    csv_path = io.write_csv(out_dir / cfg.outputs.get("csv", "trace.csv"), header, rows)
    summary["csv"] = csv_path.name
    summary["wall_time"] = time.perf_counter() - t0
    io.write_json(out_dir / cfg.outputs.get("json", "summary.json"), summary)
    return summary


DEFAULT_GEODESICS = {
    "geodesic": {"backend": "random_discrete", "n": 6, "dim": 2},
    "linear": {"backend": "gaussian_scaling", "dim": 2, "factor": 2.0},
    "cone": {"backend": "gaussian_anisotropic", "scales": [1.5, 1.0]},
    "dcheck": {"backend": "gaussian_anisotropic", "scales": [2.0, 1.0]},
    "plandist": {"backend": "random_discrete", "n": 6, "dim": 2},
    "oracle": {"backend": "gaussian_scaling", "dim": 2, "factor": 2.0},
}


def default_config(name: str) -> ExperimentConfig:
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}")
    interval = (0.1, 0.9) if name in ("cone", "dcheck", "plandist") else (0.0, 1.0)
    tol = 1e-4 if name == "cone" else 1e-6
    budget = 1024 if name == "cone" else MAX_BUDGET
    samples = 8 if name == "dcheck" else 32
    return ExperimentConfig(dict(DEFAULT_GEODESICS[name]), interval, tol, budget=budget, samples=samples)
