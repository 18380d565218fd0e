"""Parallel transport of the linear tangent space by homogenized refinement."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import NegativeF, NoConvergence
from .tangent import (
    FieldOperator,
    Geodesic,
    Measure,
    estimate_c,
    operator_norm,
    power_iteration,
    t_matrix,
    tangent_basis,
)

MAX_BUDGET = 4096


@dataclass(frozen=True)
class Subdivision:
    """Strictly increasing points of the unit interval."""

    points: tuple

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2:
            raise ValueError("a subdivision needs at least two points")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("subdivision points must be strictly increasing")
        if pts[0] < 0.0 or pts[-1] > 1.0:
            raise ValueError("subdivision points must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> "Subdivision":
        """``n`` equal segments of [min(a,b), max(a,b)]."""
        lo, hi = min(a, b), max(a, b)
        pts = [lo + (hi - lo) * k / n for k in range(n + 1)]
        pts[-1] = hi
        return cls(tuple(pts))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(np.asarray(self.points))

    @property
    def segments(self) -> list:
        return list(zip(self.points, self.points[1:]))

    def with_point(self, p: float) -> "Subdivision":
        return Subdivision(tuple(sorted(set(self.points) | {float(p)})))

    def ordered(self, reverse: bool = False) -> list:
        return list(reversed(self.points)) if reverse else list(self.points)


@dataclass
class OperatorFamily:
    """Homogenized family over a subdivision, traversed in ``times`` order.

    ``op(i, j)`` for ``i < j`` composes the neighbor operators
    ``i -> i+1 -> ... -> j`` left to right in time.
    """

    subdivision: Subdivision
    times: list
    neighbors: list
    measures: list
    _cache: dict = field(default_factory=dict, repr=False)

    def op(self, i: int, j: int) -> FieldOperator:
        if not 0 <= i <= j < len(self.times):
            raise IndexError("operator indices must satisfy 0 <= i <= j < n")
        key = (i, j)
        if key not in self._cache:
            acc = np.eye(self.neighbors[0].shape[1]) if i == j else self.neighbors[i]
            for k in range(i + 1, j):
                acc = self.neighbors[k] @ acc
            self._cache[key] = FieldOperator(acc, self.measures[i], self.measures[j])
        return self._cache[key]

    def __getitem__(self, pair) -> FieldOperator:
        a, b = pair
        return self.op(self.times.index(float(a)), self.times.index(float(b)))

    @property
    def total(self) -> FieldOperator:
        return self.op(0, len(self.times) - 1)


def homogenize(g: Geodesic, s: Subdivision, reverse: bool = False) -> OperatorFamily:
    """Compose neighboring T operators along the subdivision."""
    times = s.ordered(reverse)
    neighbors = [t_matrix(g, a, b) for a, b in zip(times, times[1:])]
    measures = [g.evaluate(t) for t in times]
    return OperatorFamily(s, times, neighbors, measures)


def direct_operator(g: Geodesic, t1: float, t2: float) -> FieldOperator:
    return FieldOperator(t_matrix(g, t1, t2), g.evaluate(t1), g.evaluate(t2))


def default_f(g: Geodesic) -> Callable[[float], float]:
    """``F(t) = C^2 W^2 t^2`` with C from :func:`estimate_c`."""
    k = (estimate_c(g) * g.length) ** 2
    return lambda t: k * t * t


def f_width(s: Subdivision, f: Callable[[float], float]) -> float:
    """``exp(sum F(gap)) - 1`` over the gaps of ``s``."""
    vals = [f(abs(gap)) for gap in s.gaps]
    if any(v < 0 for v in vals):
        raise NegativeF("F must be non-negative")
    return math.expm1(math.fsum(vals))


@dataclass
class FApproxReport:
    pairs: list  # (i, j, discrepancy, bound)
    floor: float

    @property
    def ratios(self) -> list:
        out = []
        for _, _, disc, bound in self.pairs:
            if bound > 0:
                out.append(disc / bound)
            else:
                out.append(0.0 if disc <= self.floor else math.inf)
        return out

    @property
    def max_ratio(self) -> float:
        return max(self.ratios, default=0.0)

    @property
    def violations(self) -> int:
        return sum(disc > bound + self.floor for _, _, disc, bound in self.pairs)


def check_f_approximation(
    g: Geodesic, s: Subdivision, f: Optional[Callable] = None, floor: float = 1e-12, seed: int = 0
) -> FApproxReport:
    """Compare the homogenized family with T on every pair of points of ``s``."""
    f = f or default_f(g)
    fam = homogenize(g, s)
    pairs = []
    n = len(s)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = fam.times[i], fam.times[j]
            diff = fam.op(i, j).matrix - t_matrix(g, a, b)
            disc = operator_norm(diff @ tangent_basis(fam.measures[i]), seed=seed)
            pairs.append((i, j, disc, f(abs(b - a))))
    return FApproxReport(pairs, floor)


def unitarity_defect(op: FieldOperator, mu_a: Measure = None, mu_b: Measure = None, trials: int = 50, seed: int = 0) -> float:
    """Worst relative norm change of ``op`` over random fields in T(mu_a)."""
    mu_a = mu_a if mu_a is not None else op.source
    basis = tangent_basis(mu_a)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((basis.shape[1], trials))
    v = basis @ xi
    before = np.linalg.norm(v, axis=0)
    after = np.linalg.norm(op.matrix @ v, axis=0)
    return float(np.max(np.abs(after - before) / before))


@dataclass
class RefinementRow:
    n: int
    width: float
    successive_diff: float
    unitarity_defect: float
    wall_time: float
    cauchy_ok: bool = True


@dataclass
class LinearTransportResult:
    operator: FieldOperator
    trace: list
    converged_n: int
    tol: float

    @property
    def widths(self) -> list:
        return [r.width for r in self.trace]


def dyadic_schedule(budget: int = MAX_BUDGET, start: int = 1) -> list:
    out, n = [], start
    while n <= budget:
        out.append(n)
        n *= 2
    return out


def linear_parallel_transport(
    g: Geodesic,
    a: float,
    b: float,
    tol: float = 1e-6,
    budget: int = MAX_BUDGET,
    f: Optional[Callable] = None,
    schedule: Optional[Iterable[int]] = None,
    defect_trials: int = 16,
    seed: int = 0,
) -> LinearTransportResult:
    """Limit of homogenized T families over refining uniform subdivisions.

    Refines until consecutive operators differ by less than ``tol`` in
    operator norm on T(mu_a). Each trace row records whether the difference
    stayed below the F-width of the coarser subdivision.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    budget = min(int(budget), MAX_BUDGET)
    mu_a = g.evaluate(a)
    if a == b:
        dim = tangent_basis(mu_a).shape[0]
        op = FieldOperator(np.eye(dim), mu_a, mu_a)
        return LinearTransportResult(op, [RefinementRow(1, 0.0, 0.0, 0.0, 0.0)], 1, tol)
    f = f or default_f(g)
    reverse = b < a
    basis = tangent_basis(mu_a)
    sched = list(schedule) if schedule is not None else dyadic_schedule(budget)
    trace = []
    prev = None
    prev_width = None
    for n in sched:
        if n > budget:
            break
        t0 = time.perf_counter()
        s = Subdivision.uniform(a, b, n)
        op = homogenize(g, s, reverse=reverse).total
        width = f_width(s, f)
        if prev is None:
            diff = math.inf
        else:
            diff = power_iteration((op.matrix - prev.matrix) @ basis, seed=seed).value
        defect = unitarity_defect(op, mu_a, trials=defect_trials, seed=seed)
        ok = prev_width is None or diff <= prev_width + 1e-12
        trace.append(RefinementRow(n, width, diff, defect, time.perf_counter() - t0, ok))
        if diff < tol:
            return LinearTransportResult(op, trace, n, tol)
        prev, prev_width = op, width
    raise NoConvergence(f"no convergence to tol={tol} within n={budget}", trace)
