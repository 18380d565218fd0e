"""Transport of tangent-cone elements along Monge geodesics.

A cone element is a unit-speed short geodesic segment leaving a measure
together with a radius. On atoms the segment is a list of entries
``(source atom, velocity, mass)`` with ``sum mass * |velocity|^2 = 1``; an
atom may split its mass between several entries. On Gaussians the segment is
``s -> N(m + s c, (I + s S) cov (I + s S))`` for symmetric ``S`` with
``tr(S cov S) + |c|^2 = 1``.

Limsup quantities are estimated on a finite geometric epsilon schedule by
the max over its last few entries.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    AssumptionViolation,
    BaseMismatch,
    NoConvergence,
    NotInterior,
    SegmentNotOptimal,
)
from .geodesic import GaussianGeodesic, MongeGeodesic
from .linear import Subdivision
from .manifold import SPHERE, Manifold
from .measures import (
    MIN_SEPARATION,
    DiscreteMeasure,
    GaussianMeasure,
    TransportPlan,
    bures_map,
    gaussian_map_distance,
    gaussian_map_w2,
    is_optimal,
    plan_distance,
    solve_ot,
    transport_arrays,
)
from .tangent import TangentField, estimate_c, from_coords, full_dim, tangent_basis

Geodesic = Union[MongeGeodesic, GaussianGeodesic]
Measure = Union[DiscreteMeasure, GaussianMeasure]

MAX_CONE_BUDGET = 1024
RADIUS_SLACK = 1e-9


@dataclass(frozen=True)
class EpsSchedule:
    """Decreasing epsilon values; the last ``tail`` of them stand in for the limsup."""

    values: tuple = tuple(2.0**-k for k in range(3, 11))
    tail: int = 3
    tol: float = 1e-6

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals or any(v <= 0 for v in vals):
            raise ValueError("epsilon values must be positive")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("epsilon values must be strictly decreasing")
        if not 1 <= self.tail <= len(vals):
            raise ValueError("tail window must fit in the schedule")
        object.__setattr__(self, "values", vals)

    @property
    def tail_values(self) -> tuple:
        return self.values[-self.tail :]

    @property
    def smallest(self) -> float:
        return self.values[-1]

    def refined(self) -> "EpsSchedule":
        """Append one more halving of the smallest value."""
        return EpsSchedule(self.values + (self.values[-1] / 2.0,), self.tail, self.tol)

    def to_dict(self) -> dict:
        return {"values": list(self.values), "tail": self.tail, "tol": self.tol}

    @classmethod
    def from_dict(cls, d: dict) -> "EpsSchedule":
        return cls(tuple(d["values"]), int(d.get("tail", 3)), float(d.get("tol", 1e-6)))


# -- cone elements -----------------------------------------------------------


def _merge_points(man: Manifold, pts: np.ndarray, mass: np.ndarray):
    """Merge points closer than the atom separation; returns (points, mass, index)."""
    k = pts.shape[0]
    index = np.arange(k)
    if k > 1:
        d = man.sq_distance_matrix(pts, pts)
        close = d <= MIN_SEPARATION**2
        if np.count_nonzero(close) > k:
            for i in range(k):
                j = int(np.argmax(close[i]))
                index[i] = index[j] if j < i else i
    uniq, inv = np.unique(index, return_inverse=True)
    merged = np.zeros(uniq.size)
    np.add.at(merged, inv, mass)
    return pts[uniq], merged, inv


@dataclass(frozen=True, eq=False)
class ConeElement:
    """Tangent-cone element: a unit-speed short segment from ``base`` plus a radius.

    ``horizon`` is a segment length up to which the segment is known to be
    an optimal plan.
    """

    base: Measure
    radius: float
    rows: np.ndarray = None
    velocities: np.ndarray = None
    mass: np.ndarray = None
    linear: np.ndarray = None
    const: np.ndarray = None
    horizon: float = math.inf

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be non-negative")
        object.__setattr__(self, "radius", float(self.radius))
        if isinstance(self.base, GaussianMeasure):
            s = np.asarray(self.linear, dtype=float)
            object.__setattr__(self, "linear", 0.5 * (s + s.T))
            object.__setattr__(self, "const", np.asarray(self.const, dtype=float).reshape(-1))
        else:
            object.__setattr__(self, "rows", np.asarray(self.rows, dtype=int).reshape(-1))
            vel = np.asarray(self.velocities, dtype=float).reshape(self.rows.size, -1)
            vel = self.base.manifold.project_tangent(self.base.points[self.rows], vel)
            object.__setattr__(self, "velocities", vel)
            object.__setattr__(self, "mass", np.asarray(self.mass, dtype=float).reshape(-1))

    # constructors

    @classmethod
    def vertex(cls, base: Measure) -> "ConeElement":
        if isinstance(base, GaussianMeasure):
            d = base.dim
            return cls(base, 0.0, linear=np.zeros((d, d)), const=np.zeros(d))
        n = len(base)
        return cls(base, 0.0, np.arange(n), np.zeros_like(base.points), base.weights.copy())

    @classmethod
    def from_entries(cls, base: DiscreteMeasure, rows, velocities, mass, radius: float = None, horizon=None):
        """Element from raw entries; velocities are rescaled to unit speed.

        ``radius`` defaults to the speed of the given velocities. The horizon
        is certified by halving when not given.
        """
        rows = np.asarray(rows, dtype=int)
        vel = np.asarray(velocities, dtype=float).reshape(rows.size, -1)
        mass = np.asarray(mass, dtype=float)
        speed = math.sqrt(float(np.sum(mass * np.sum(vel * vel, axis=-1))))
        if speed == 0.0:
            return cls.vertex(base)
        vel = vel / speed
        r = speed if radius is None else float(radius)
        e = cls(base, r, rows, vel, mass)
        h = certify_horizon(e) if horizon is None else float(horizon)
        return cls(base, r, rows, vel, mass, horizon=h)

    @classmethod
    def from_field(cls, v: TangentField, radius: float = None) -> "ConeElement":
        """Monge direction of a tangent field (symmetric part only on Gaussians)."""
        mu = v.base
        if isinstance(mu, GaussianMeasure):
            if not np.allclose(v.linear, v.linear.T, atol=1e-12):
                raise SegmentNotOptimal("a Gaussian cone direction needs a symmetric linear part")
            return cls.gaussian(mu, v.linear, v.const, radius)
        n = len(mu)
        return cls.from_entries(mu, np.arange(n), v.values, mu.weights, radius)

    @classmethod
    def gaussian(cls, base: GaussianMeasure, linear, const, radius: float = None) -> "ConeElement":
        s = np.asarray(linear, dtype=float)
        s = 0.5 * (s + s.T)
        c = np.asarray(const, dtype=float).reshape(-1)
        speed = math.sqrt(max(float(np.trace(s @ base.cov @ s) + c @ c), 0.0))
        if speed == 0.0:
            return cls.vertex(base)
        s, c = s / speed, c / speed
        lam = float(np.linalg.eigvalsh(s).min())
        h = 1.0 / -lam if lam < 0 else math.inf
        r = speed if radius is None else float(radius)
        return cls(base, r, linear=s, const=c, horizon=h)

    @classmethod
    def from_plan(cls, plan: TransportPlan) -> "ConeElement":
        """Element whose segment of length ``radius`` is the given optimal plan."""
        if not is_optimal(plan):
            raise SegmentNotOptimal("the plan is not optimal")
        m = plan.manifold
        x = plan.source.points[plan.rows]
        v = m.log(x, plan.target.points[plan.cols])
        length = math.sqrt(plan.cost())
        if length == 0.0:
            return cls.vertex(plan.source)
        return cls(plan.source, length, plan.rows, v / length, plan.mass, horizon=length)

    # queries

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.base, GaussianMeasure)

    @property
    def is_vertex(self) -> bool:
        return self.radius == 0.0

    @property
    def manifold(self) -> Manifold:
        return self.base.manifold

    @property
    def speed(self) -> float:
        if self.is_gaussian:
            s = self.linear
            return math.sqrt(max(float(np.trace(s @ self.base.cov @ s) + self.const @ self.const), 0.0))
        return math.sqrt(float(np.sum(self.mass * np.sum(self.velocities**2, axis=-1))))

    def with_radius(self, r: float) -> "ConeElement":
        return ConeElement(self.base, r, self.rows, self.velocities, self.mass, self.linear, self.const, self.horizon)

    def same_direction(self, other: "ConeElement", atol: float = 0.0) -> bool:
        if self.is_gaussian != other.is_gaussian:
            return False
        if self.is_gaussian:
            return np.allclose(self.linear, other.linear, atol=atol, rtol=0) and np.allclose(
                self.const, other.const, atol=atol, rtol=0
            )
        return (
            self.rows.shape == other.rows.shape
            and np.array_equal(self.rows, other.rows)
            and np.allclose(self.velocities, other.velocities, atol=atol, rtol=0)
            and np.allclose(self.mass, other.mass, atol=atol, rtol=0)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConeElement) or not _same_base(self.base, other.base):
            return False
        if self.radius == 0.0 and other.radius == 0.0:
            return True
        return self.radius == other.radius and self.same_direction(other)

    __hash__ = None

    def segment_points(self, length: float) -> np.ndarray:
        """Entry positions after moving ``length`` along the segment."""
        x = self.base.points[self.rows]
        return self.manifold.exp(x, length * self.velocities)

    def segment_measure(self, length: float):
        """Measure reached after ``length``; (points, mass) on atoms, a Gaussian otherwise."""
        if self.is_gaussian:
            k = np.eye(self.base.dim) + length * self.linear
            return GaussianMeasure(self.base.mean + length * self.const, k @ self.base.cov @ k)
        return self.segment_points(length), self.mass

    def segment_plan(self, length: float) -> TransportPlan:
        """Plan from the base along the segment (atoms only)."""
        pts, mass, inv = _merge_points(self.manifold, self.segment_points(length), self.mass)
        target = DiscreteMeasure(self.manifold, pts, mass / mass.sum())
        key = self.rows * len(pts) + inv
        uk, ui = np.unique(key, return_inverse=True)
        agg = np.zeros(uk.size)
        np.add.at(agg, ui, self.mass)
        return TransportPlan(self.base, target, uk // len(pts), uk % len(pts), agg)

    def target_points(self) -> np.ndarray:
        """Endpoints of the unit-length segment, one per entry."""
        return self.segment_points(1.0)


def _same_base(a: Measure, b: Measure) -> bool:
    return a is b or a.same_as(b, atol=1e-12)


def certify_horizon(e: ConeElement, start: float = 1.0, max_halvings: int = 60) -> float:
    """Largest ``start / 2^k`` at which the segment plan is exactly optimal."""
    if e.is_gaussian:
        lam = float(np.linalg.eigvalsh(e.linear).min())
        return 1.0 / -lam if lam < 0 else math.inf
    h = float(start)
    if e.manifold.kind == SPHERE:
        vmax = float(np.linalg.norm(e.velocities, axis=-1).max())
        if vmax > 0:
            h = min(h, 0.5 * math.pi * e.manifold.radius / vmax)
    for _ in range(max_halvings):
        try:
            if is_optimal(e.segment_plan(h)):
                return h
        except Exception:
            pass
        h *= 0.5
    raise SegmentNotOptimal("no optimal segment found")


def _check_segment(e: ConeElement, length: float) -> None:
    if length <= e.horizon:
        if e.is_gaussian and length >= e.horizon:
            raise SegmentNotOptimal("segment reaches a degenerate covariance")
        return
    if e.is_gaussian or not is_optimal(e.segment_plan(length)):
        raise SegmentNotOptimal(f"segment of length {length:.3g} is not an optimal plan")


def sample_unit_elements(mu: Measure, count: int = 32, seed: int = 0, split: bool = False) -> list:
    """Deterministic random unit elements at ``mu``.

    Directions come from standard normal coordinates of the tangent space.
    With ``split`` every other element sends each atom's mass along two
    distinct velocities.
    """
    rng = np.random.default_rng(seed)
    out = []
    if isinstance(mu, GaussianMeasure):
        basis = tangent_basis(mu)
        for _ in range(count):
            xi = rng.standard_normal(basis.shape[1])
            f = from_coords(mu, basis @ xi)
            out.append(ConeElement.gaussian(mu, f.linear, f.const, 1.0))
        return out
    n = len(mu)
    frames = mu.manifold.frame(mu.points)
    k = frames.shape[-1]
    for j in range(count):
        if split and j % 2 == 1:
            c = rng.standard_normal((2 * n, k))
            rows = np.repeat(np.arange(n), 2)
            vel = np.einsum("ndk,nk->nd", frames[rows], c)
            mass = np.repeat(mu.weights / 2.0, 2)
        else:
            c = rng.standard_normal((n, k))
            rows = np.arange(n)
            vel = np.einsum("ndk,nk->nd", frames, c)
            mass = mu.weights.copy()
        out.append(ConeElement.from_entries(mu, rows, vel, mass, radius=1.0))
    return out


# -- cone distance -----------------------------------------------------------


def _scaled_w2(e1: ConeElement, e2: ConeElement, eps: float) -> float:
    if e1.is_gaussian:
        return gaussian_map_w2(e1.segment_measure(eps * e1.radius), e2.segment_measure(eps * e2.radius)) / eps
    x1, a1 = e1.segment_measure(eps * e1.radius)
    x2, a2 = e2.segment_measure(eps * e2.radius)
    cost, *_ = transport_arrays(e1.manifold, x1, a1, x2, a2)
    return math.sqrt(cost) / eps


def cone_distance_trace(e1: ConeElement, e2: ConeElement, schedule: EpsSchedule = EpsSchedule()) -> list:
    """(1/eps) W2 of the two scaled segment endpoints for every epsilon."""
    if not _same_base(e1.base, e2.base):
        raise BaseMismatch("cone elements live over different measures")
    return [_scaled_w2(e1, e2, eps) for eps in schedule.values]


def cone_distance(e1: ConeElement, e2: ConeElement, schedule: EpsSchedule = EpsSchedule()) -> float:
    """Limsup surrogate of (1/eps) W2(gamma1(eps r1), gamma2(eps r2))."""
    if not _same_base(e1.base, e2.base):
        raise BaseMismatch("cone elements live over different measures")
    if e1.is_vertex and e2.is_vertex:
        return 0.0
    if e1.is_vertex or e2.is_vertex or e1.same_direction(e2):
        # points on one ray, or a ray and the vertex
        live = e2 if e1.is_vertex else e1
        return abs(e1.radius - e2.radius) * live.speed
    return max(_scaled_w2(e1, e2, eps) for eps in schedule.tail_values)


# -- the cone map ------------------------------------------------------------


@dataclass(frozen=True)
class ConeMapDiagnostics:
    epsilon_used: float
    p1_p2_distance: float
    d_ratio: float
    curvature_term: float


def _check_interior(*ts):
    for t in ts:
        if not 0.0 < t < 1.0:
            raise NotInterior(f"time {t} is not interior to the geodesic")


def cone_map(g: Geodesic, s: float, t: float, e: ConeElement, eps: float):
    """Move ``e`` from mu_s to mu_t: transport its eps-segment, then re-optimize.

    Returns the image element at mu_t and the diagnostics of the step.
    """
    _check_interior(s, t)
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu_s = g.evaluate(s)
    if not _same_base(e.base, mu_s) and not e.base.same_as(mu_s, atol=1e-9):
        raise BaseMismatch("element is not based at mu_s")
    mu_t = g.evaluate(t)
    kappa = g.manifold.curvature_bound
    curv = kappa * eps * e.radius**2
    seg = eps * e.radius
    if seg == 0.0:
        return ConeElement.vertex(mu_t), ConeMapDiagnostics(eps, 0.0, 0.0, curv)
    _check_segment(e, seg)
    if isinstance(g, GaussianGeodesic):
        return _gaussian_cone_map(g, s, t, e, eps, mu_t, curv)
    return _discrete_cone_map(g, s, t, e, eps, mu_t, curv)


def _discrete_cone_map(g, s, t, e, eps, mu_t, curv):
    man = g.manifold
    seg = eps * e.radius
    xs, xt = g.positions(s), g.positions(t)
    disp = man.transport(xs[e.rows], xt[e.rows], seg * e.velocities)
    y = man.exp(xt[e.rows], disp)
    pts, mass, inv = _merge_points(man, y, e.mass)
    nu_t = DiscreteMeasure(man, pts, mass / mass.sum())
    key = e.rows * len(pts) + inv
    uk, ui = np.unique(key, return_inverse=True)
    agg = np.zeros(uk.size)
    np.add.at(agg, ui, e.mass)
    p1 = TransportPlan(mu_t, nu_t, uk // len(pts), uk % len(pts), agg)
    p2 = solve_ot(mu_t, nu_t)
    w = math.sqrt(p2.cost())
    pd = plan_distance(p1, p2)
    diag = ConeMapDiagnostics(eps, pd, pd / eps, curv)
    if w == 0.0:
        return ConeElement.vertex(mu_t), diag
    vel = man.log(xt[p2.rows], pts[p2.cols]) / w
    return ConeElement(mu_t, w / eps, p2.rows, vel, p2.mass, horizon=w), diag


def _gaussian_cone_map(g, s, t, e, eps, mu_t, curv):
    d = g.dim
    eye = np.eye(d)
    seg = eps * e.radius
    b = e.linear @ np.linalg.inv(g.step_map(s, t))
    moved = eye + seg * b
    nu_t = GaussianMeasure(mu_t.mean + seg * e.const, moved @ mu_t.cov @ moved.T)
    x = bures_map(mu_t, nu_t)
    diff = x - eye
    w = math.sqrt(max(float(np.trace(diff @ mu_t.cov @ diff)) + seg * seg * float(e.const @ e.const), 0.0))
    gap = moved - x
    pd = gaussian_map_distance(mu_t.cov, gap)
    diag = ConeMapDiagnostics(eps, pd, pd / eps, curv)
    if w == 0.0:
        return ConeElement.vertex(mu_t), diag
    out = ConeElement.gaussian(mu_t, diff / w, seg * e.const / w, w / eps)
    return out, diag


def check_well_defined(
    g: Geodesic, s: float, t: float, e: ConeElement, schedule: EpsSchedule = EpsSchedule(), tol: float = 1e-3
) -> float:
    """Distance between images of ``e`` at the two smallest epsilons.

    Raises AssumptionViolation when it exceeds ``tol``.
    """
    if len(schedule.values) < 2:
        raise ValueError("need two epsilon values")
    a, _ = cone_map(g, s, t, e, schedule.values[-2])
    b, _ = cone_map(g, s, t, e, schedule.values[-1])
    dist = cone_distance(a, b, schedule)
    if dist > tol:
        raise AssumptionViolation(
            f"cone map depends on epsilon: distance {dist:.3e} > {tol:.1e}",
            {"s": s, "t": t, "distance": dist, "tol": tol},
        )
    return dist


# -- the discrepancy functional D --------------------------------------------


def _elements_at(g: Geodesic, t: float, sample_elements, seed: int) -> list:
    if isinstance(sample_elements, (int, np.integer)):
        return sample_unit_elements(g.evaluate(t), int(sample_elements), seed)
    return list(sample_elements)


def d_profile(g: Geodesic, t1: float, t2: float, sample_elements=32, schedule: EpsSchedule = EpsSchedule(), seed: int = 0) -> np.ndarray:
    """d_ratio for every sampled element (rows) and every epsilon (columns)."""
    elems = _elements_at(g, t1, sample_elements, seed)
    out = np.zeros((len(elems), len(schedule.values)))
    for i, e in enumerate(elems):
        for j, eps in enumerate(schedule.values):
            out[i, j] = cone_map(g, t1, t2, e, eps)[1].d_ratio
    return out


def d_estimate(g: Geodesic, t1: float, t2: float, sample_elements=32, schedule: EpsSchedule = EpsSchedule(), seed: int = 0) -> float:
    """Sampled lower estimate of D(t1, t2): max over elements of the tail max of d_ratio."""
    _check_interior(t1, t2)
    if t1 == t2:
        return 0.0
    best = 0.0
    for e in _elements_at(g, t1, sample_elements, seed):
        for eps in schedule.tail_values:
            best = max(best, cone_map(g, t1, t2, e, eps)[1].d_ratio)
    return best


@dataclass
class DbarEvaluator:
    """D-bar over a fixed grid with cached pairwise d_estimate values."""

    g: Geodesic
    grid: Sequence[float]
    samples: int = 32
    schedule: EpsSchedule = field(default_factory=EpsSchedule)
    seed: int = 0
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = sorted(set(float(p) for p in self.grid))

    def pair(self, s1: float, s2: float) -> float:
        key = (s1, s2)
        if key not in self.cache:
            self.cache[key] = d_estimate(self.g, s1, s2, self.samples, self.schedule, self.seed)
        return self.cache[key]

    def __call__(self, t1: float, t2: float) -> float:
        lo, hi = min(t1, t2), max(t1, t2)
        pts = sorted({p for p in self.grid if lo <= p <= hi} | {float(t1), float(t2)})
        best = 0.0
        for i, a in enumerate(pts):
            for b in pts[i + 1 :]:
                pair = (a, b) if t1 <= t2 else (b, a)
                best = max(best, self.pair(*pair))
        return best


def dbar(g: Geodesic, t1: float, t2: float, grid: Iterable[float], sample_elements: int = 32,
         schedule: EpsSchedule = EpsSchedule(), seed: int = 0, cache: Optional[dict] = None) -> float:
    """Max of d_estimate over ordered grid pairs lying between t1 and t2."""
    ev = DbarEvaluator(g, list(grid), sample_elements, schedule, seed, cache if cache is not None else {})
    return ev(t1, t2)


def composition_defect(g: Geodesic, t1: float, t2: float, t3: float, e: ConeElement, eps: float,
                       schedule: EpsSchedule = EpsSchedule()) -> float:
    """Cone distance between M(t2,t3) M(t1,t2) e and M(t1,t3) e."""
    e12, _ = cone_map(g, t1, t2, e, eps)
    e123, _ = cone_map(g, t2, t3, e12, eps)
    e13, _ = cone_map(g, t1, t3, e, eps)
    return cone_distance(e123, e13, schedule)


def total_potential_error(g: Geodesic, t1: float, t2: float, c_hat: float, dbar_value: float) -> float:
    return c_hat * g.w2_between(t1, t2) * dbar_value


def cone_width(g: Geodesic, s: Subdivision, c_hat: float, dbar_per_segment) -> float:
    """Twice the summed total potential errors over the segments of ``s``.

    ``dbar_per_segment`` is a callable ``(t1, t2) -> value`` or a sequence
    aligned with the segments.
    """
    segs = s.segments
    if callable(dbar_per_segment):
        vals = [dbar_per_segment(a, b) for a, b in segs]
    else:
        vals = list(dbar_per_segment)
        if len(vals) != len(segs):
            raise ValueError("one D-bar value per segment is required")
    return 2.0 * math.fsum(total_potential_error(g, a, b, c_hat, v) for (a, b), v in zip(segs, vals))


# -- composite transport and its limit ---------------------------------------


def composite_cone_transport(g: Geodesic, a: float, b: float, e: ConeElement, s: Subdivision, eps: float) -> ConeElement:
    """Compose cone maps over neighboring points of ``s`` from a to b."""
    lo, hi = min(a, b), max(a, b)
    if s.points[0] != lo or s.points[-1] != hi:
        raise ValueError("subdivision must span the transport interval")
    times = s.ordered(reverse=b < a)
    cur = e
    for t0, t1 in zip(times, times[1:]):
        cur, _ = cone_map(g, t0, t1, cur, eps)
    return cur


@dataclass
class ConeRow:
    n: int
    width: float
    successive_diff: float
    radius: float
    wall_time: float
    cauchy_ok: bool = True


@dataclass
class ConeTransportResult:
    element: ConeElement
    trace: list
    width: float
    converged_n: int
    tol: float
    eps: float
    c_hat: float


def segment_dbar(g: Geodesic, samples: int, schedule: EpsSchedule, seed: int) -> Callable:
    """D estimate on a segment from its endpoints alone."""

    def f(t1, t2):
        return d_estimate(g, t1, t2, samples, schedule, seed)

    return f


def transport_limit(
    g: Geodesic,
    a: float,
    b: float,
    e: ConeElement,
    tol: float = 1e-4,
    schedule: EpsSchedule = EpsSchedule(),
    budget: int = MAX_CONE_BUDGET,
    c_hat: Optional[float] = None,
    width_samples: int = 4,
    certify: bool = True,
    well_defined_tol: Optional[float] = 1e-3,
    seed: int = 0,
) -> ConeTransportResult:
    """Dyadic refinement of composite cone transport until images settle.

    Maps use the smallest epsilon of the schedule. The width of the last
    subdivision, with D estimated per segment from ``width_samples`` unit
    elements, is returned as the error bar.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_interior(a, b)
    budget = min(int(budget), MAX_CONE_BUDGET)
    eps = schedule.smallest
    c_hat = estimate_c(g) if c_hat is None else float(c_hat)
    if a == b:
        return ConeTransportResult(e, [ConeRow(1, 0.0, 0.0, e.radius, 0.0)], 0.0, 1, tol, eps, c_hat)
    if well_defined_tol is not None and not e.is_vertex:
        check_well_defined(g, a, b, e, schedule, well_defined_tol)
    dfun = segment_dbar(g, width_samples, schedule, seed)
    trace = []
    prev, prev_width = None, None
    n = 1
    while n <= budget:
        t0 = time.perf_counter()
        s = Subdivision.uniform(a, b, n)
        img = composite_cone_transport(g, a, b, e, s, eps)
        width = cone_width(g, s, c_hat, dfun) if certify else math.nan
        diff = math.inf if prev is None else cone_distance(img, prev, schedule)
        ok = prev_width is None or not diff > prev_width + schedule.tol
        trace.append(ConeRow(n, width, diff, img.radius, time.perf_counter() - t0, ok))
        if diff < tol:
            return ConeTransportResult(img, trace, width, n, tol, eps, c_hat)
        prev, prev_width = img, width
        n *= 2
    raise NoConvergence(f"cone transport did not settle to tol={tol} within n={budget}", trace)


@dataclass
class RoundtripResult:
    defect: float
    forward: ConeTransportResult
    backward: ConeTransportResult

    @property
    def width_sum(self) -> float:
        return self.forward.width + self.backward.width


def roundtrip_defect(g: Geodesic, a: float, b: float, e: ConeElement, tol: float = 1e-4,
                     schedule: EpsSchedule = EpsSchedule(), **kwargs) -> RoundtripResult:
    """Distance from ``e`` to its forward-then-backward transport limit."""
    fw = transport_limit(g, a, b, e, tol, schedule, **kwargs)
    bw = transport_limit(g, b, a, fw.element, tol, schedule, **kwargs)
    return RoundtripResult(cone_distance(e, bw.element, schedule), fw, bw)


@dataclass
class NonexpansiveReport:
    differences: np.ndarray
    tolerances: np.ndarray

    @property
    def violations(self) -> int:
        return int(np.sum(self.differences > self.tolerances))

    @property
    def max_violation(self) -> float:
        excess = self.differences - self.tolerances
        return float(max(excess.max(initial=0.0), 0.0))

    @property
    def max_difference(self) -> float:
        return float(self.differences.max(initial=-math.inf))


def _tail_spread(e1, e2, schedule) -> float:
    if e1.is_vertex or e2.is_vertex or e1.same_direction(e2):
        return 0.0
    vals = [_scaled_w2(e1, e2, eps) for eps in schedule.tail_values]
    return max(vals) - min(vals)


def nonexpansive_check(g: Geodesic, s: float, t: float, element_pairs, schedule: EpsSchedule = EpsSchedule(),
                       eps: Optional[float] = None) -> NonexpansiveReport:
    """d(M e1, M e2) - d(e1, e2) per pair, against schedule tolerance.

    The allowed slack per pair is the schedule tolerance plus the spread of
    both distances over the tail window.
    """
    eps = schedule.smallest if eps is None else eps
    diffs, tols = [], []
    for e1, e2 in element_pairs:
        m1, _ = cone_map(g, s, t, e1, eps)
        m2, _ = cone_map(g, s, t, e2, eps)
        before = cone_distance(e1, e2, schedule)
        after = cone_distance(m1, m2, schedule)
        diffs.append(after - before)
        tols.append(schedule.tol + _tail_spread(e1, e2, schedule) + _tail_spread(m1, m2, schedule))
    return NonexpansiveReport(np.asarray(diffs), np.asarray(tols))


def fit_c_hat(g: Geodesic, triples, elements, eps: float, schedule: EpsSchedule = EpsSchedule(),
              samples: int = 8, seed: int = 0, floor: float = 1e-12) -> tuple:
    """Largest ratio defect / (W(t2,t3) * D(t1,t2)) over triples and elements.

    ``elements`` maps a start time to the elements based there. Returns
    ``(max ratio, rows)`` where each row is ``(t1, t2, t3, defect, W, D)``;
    triples with a denominator below ``floor`` are kept but skipped in the max.
    """
    rows, best = [], 0.0
    for t1, t2, t3 in triples:
        d = d_estimate(g, t1, t2, samples, schedule, seed)
        w = g.w2_between(t2, t3)
        for e in elements(t1):
            defect = composition_defect(g, t1, t2, t3, e, eps, schedule)
            rows.append((t1, t2, t3, defect, w, d))
            if w * d > floor:
                best = max(best, defect / (w * d))
    return best, rows
