"""Points of Wasserstein space and exact optimal transport between them."""

from __future__ import annotations

import math
import itertools
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment

from .errors import (
    DimensionMismatch,
    InfeasibleWeights,
    InvalidMeasure,
    ManifoldMismatch,
    NonOptimalPlan,
    SourceMismatch,
)
from .manifold import Manifold

MAX_ATOMS = 4096
WEIGHT_TOL = 1e-12
MIN_SEPARATION = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure on a manifold."""

    manifold: Manifold
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = self.manifold.validate(np.atleast_2d(self.points))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise InvalidMeasure("points and weights disagree in length")
        if w.size == 0:
            raise InvalidMeasure("empty measure")
        if np.any(w <= 0):
            raise InvalidMeasure("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidMeasure(f"weights sum to {w.sum():.17g}, not 1")
        if pts.shape[0] > 1:
            d = self.manifold.sq_distance_matrix(pts, pts)
            np.fill_diagonal(d, np.inf)
            if d.min() <= MIN_SEPARATION**2:
                raise InvalidMeasure("atoms closer than 1e-9 are not allowed")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, manifold: Manifold, points) -> "DiscreteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        return cls(manifold, points, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, manifold: Manifold, point) -> "DiscreteMeasure":
        return cls(manifold, np.atleast_2d(point), np.ones(1))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def same_as(self, other: "DiscreteMeasure", atol: float = 1e-12) -> bool:
        return (
            isinstance(other, DiscreteMeasure)
            and self.manifold == other.manifold
            and self.points.shape == other.points.shape
            and np.allclose(self.points, other.points, atol=atol, rtol=0)
            and np.allclose(self.weights, other.weights, atol=atol, rtol=0)
        )


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """Non-degenerate Gaussian on R^d."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if c.shape != (m.size, m.size):
            raise DimensionMismatch("covariance shape does not match the mean")
        if not np.allclose(c, c.T, atol=1e-12, rtol=0):
            raise InvalidMeasure("covariance must be symmetric")
        c = 0.5 * (c + c.T)
        if np.linalg.eigvalsh(c).min() < 1e-10:
            raise InvalidMeasure("covariance eigenvalues must be >= 1e-10")
        m.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def manifold(self) -> Manifold:
        return Manifold.euclidean(self.dim)

    def same_as(self, other, atol: float = 1e-12) -> bool:
        return (
            isinstance(other, GaussianMeasure)
            and other.dim == self.dim
            and np.allclose(self.mean, other.mean, atol=atol, rtol=0)
            and np.allclose(self.cov, other.cov, atol=atol, rtol=0)
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=n, method="eigh")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling between two discrete measures.

    ``rows[k]`` and ``cols[k]`` index atoms of ``source`` and ``target``
    carrying ``mass[k] > 0``.
    """

    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        if self.source.manifold != self.target.manifold:
            raise ManifoldMismatch("plan endpoints live on different manifolds")
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        mass = np.asarray(self.mass, dtype=float).reshape(-1)
        if not (rows.size == cols.size == mass.size):
            raise InvalidMeasure("coupling arrays disagree in length")
        if np.any(mass <= 0):
            raise InvalidMeasure("coupling masses must be positive")
        row_marg = np.bincount(rows, weights=mass, minlength=len(self.source))
        col_marg = np.bincount(cols, weights=mass, minlength=len(self.target))
        if row_marg.size != len(self.source) or col_marg.size != len(self.target):
            raise InvalidMeasure("coupling index out of range")
        if np.abs(row_marg - self.source.weights).max() > 1e-10:
            raise InvalidMeasure("row marginals do not match the source weights")
        if np.abs(col_marg - self.target.weights).max() > 1e-10:
            raise InvalidMeasure("column marginals do not match the target weights")
        for a in (rows, cols, mass):
            a.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "mass", mass)

    @property
    def manifold(self) -> Manifold:
        return self.source.manifold

    @property
    def pairs(self) -> list:
        return [(int(i), int(j), float(m)) for i, j, m in zip(self.rows, self.cols, self.mass)]

    @property
    def is_deterministic(self) -> bool:
        """True when every source atom is sent to exactly one target atom."""
        return np.bincount(self.rows, minlength=len(self.source)).max() == 1

    def entry_sq_lengths(self) -> np.ndarray:
        m = self.manifold
        return m.distance(self.source.points[self.rows], self.target.points[self.cols]) ** 2

    def cost(self) -> float:
        return float(np.dot(self.mass, self.entry_sq_lengths()))

    def dense(self) -> np.ndarray:
        g = np.zeros((len(self.source), len(self.target)))
        np.add.at(g, (self.rows, self.cols), self.mass)
        return g


# -- exact solvers -----------------------------------------------------------


@njit(cache=True)
def _min_cost_flow(cost, a, b):
    """Exact transportation problem by successive shortest augmenting paths.

    Dijkstra runs on reduced costs with node potentials so every arc is
    non-negative; each augmentation exhausts a supply, a demand or a
    backward arc. Returns the dense optimal coupling.
    """
    n, m = cost.shape
    flow = np.zeros((n, m))
    supply = a.copy()
    demand = b.copy()
    tiny = 1e-15
    inf = np.inf
    pot_s = np.zeros(n)
    pot_t = np.empty(m)
    for j in range(m):
        pot_t[j] = cost[:, j].min()
    dist_s = np.empty(n)
    dist_t = np.empty(m)
    pred_s = np.empty(n, dtype=np.int64)
    pred_t = np.empty(m, dtype=np.int64)
    done_s = np.empty(n, dtype=np.bool_)
    done_t = np.empty(m, dtype=np.bool_)
    while True:
        any_supply = False
        for i in range(n):
            if supply[i] > tiny:
                any_supply = True
        any_demand = False
        for j in range(m):
            if demand[j] > tiny:
                any_demand = True
        if not (any_supply and any_demand):
            break
        for i in range(n):
            dist_s[i] = 0.0 if supply[i] > tiny else inf
            pred_s[i] = -1
            done_s[i] = False
        for j in range(m):
            dist_t[j] = inf
            pred_t[j] = -1
            done_t[j] = False
        sink = -1
        while True:
            bi = -1
            bv = inf
            for i in range(n):
                if not done_s[i] and dist_s[i] < bv:
                    bv = dist_s[i]
                    bi = i
            bj = -1
            bw = inf
            for j in range(m):
                if not done_t[j] and dist_t[j] < bw:
                    bw = dist_t[j]
                    bj = j
            if bi < 0 and bj < 0:
                break
            if bi >= 0 and bv <= bw:
                done_s[bi] = True
                for j in range(m):
                    if not done_t[j]:
                        red = cost[bi, j] + pot_s[bi] - pot_t[j]
                        if red < 0.0:
                            red = 0.0
                        cand = bv + red
                        if cand < dist_t[j]:
                            dist_t[j] = cand
                            pred_t[j] = bi
            else:
                done_t[bj] = True
                if demand[bj] > tiny:
                    sink = bj
                    break
                for i in range(n):
                    if flow[i, bj] > 0.0 and not done_s[i]:
                        red = -cost[i, bj] + pot_t[bj] - pot_s[i]
                        if red < 0.0:
                            red = 0.0
                        cand = bw + red
                        if cand < dist_s[i]:
                            dist_s[i] = cand
                            pred_s[i] = bj
        if sink < 0:
            return flow, False
        big = dist_t[sink]
        for i in range(n):
            pot_s[i] += min(dist_s[i], big)
        for j in range(m):
            pot_t[j] += min(dist_t[j], big)
        # bottleneck along the path traced back from the sink
        delta = demand[sink]
        j = sink
        while True:
            i = pred_t[j]
            jp = pred_s[i]
            if jp < 0:
                delta = min(delta, supply[i])
                start = i
                break
            delta = min(delta, flow[i, jp])
            j = jp
        j = sink
        while True:
            i = pred_t[j]
            flow[i, j] += delta
            jp = pred_s[i]
            if jp < 0:
                break
            flow[i, jp] -= delta
            if flow[i, jp] <= tiny:
                flow[i, jp] = 0.0
            j = jp
        supply[start] -= delta
        demand[sink] -= delta
    return flow, True


def transport_arrays(manifold: Manifold, x, a, y, b):
    """Optimal coupling between weighted point arrays (no measure validation).

    Returns ``(cost, rows, cols, mass)`` with ``cost`` the minimal value of
    sum mass * d^2.
    """
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if abs(a.sum() - b.sum()) > 1e-10:
        raise InfeasibleWeights(f"total masses differ: {a.sum():.17g} vs {b.sum():.17g}")
    c = manifold.sq_distance_matrix(x, y)
    n, m = c.shape
    if n == 1 or m == 1:
        if n == 1:
            rows, cols, mass = np.zeros(m, dtype=int), np.arange(m), b.copy()
        else:
            rows, cols, mass = np.arange(n), np.zeros(n, dtype=int), a.copy()
    elif n == m and np.all(a == a[0]) and np.all(b == b[0]) and a[0] == b[0]:
        rows, cols = linear_sum_assignment(c)
        mass = np.full(n, a[0])
    else:
        g, ok = _min_cost_flow(np.ascontiguousarray(c), a.copy(), b.copy())
        if not ok:
            raise InfeasibleWeights("no augmenting path; marginals are incompatible")
        rows, cols = np.nonzero(g)
        mass = g[rows, cols]
    cost = float(np.dot(mass, c[rows, cols]))
    return max(cost, 0.0), rows, cols, mass


def _check_pair(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.manifold != nu.manifold:
        raise ManifoldMismatch("measures live on different manifolds")
    if max(len(mu), len(nu)) > MAX_ATOMS:
        raise InvalidMeasure(f"at most {MAX_ATOMS} atoms are supported")
    if abs(mu.weights.sum() - nu.weights.sum()) > 1e-10:
        raise InfeasibleWeights("total masses differ")


def solve_ot(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """Exact quadratic-cost optimal transport plan from ``mu`` to ``nu``."""
    _check_pair(mu, nu)
    _, rows, cols, mass = transport_arrays(mu.manifold, mu.points, mu.weights, nu.points, nu.weights)
    return _plan_fixing_rounding(mu, nu, rows, cols, mass)


def _plan_fixing_rounding(mu, nu, rows, cols, mass) -> TransportPlan:
    keep = mass > 1e-15
    return TransportPlan(mu, nu, rows[keep], cols[keep], mass[keep])


def gaussian_w2(g1: GaussianMeasure, g2: GaussianMeasure) -> float:
    """Closed-form W2 between Gaussians (Bures-Wasserstein formula)."""
    if g1.dim != g2.dim:
        raise DimensionMismatch("Gaussians of different dimension")
    s1 = sqrtm_psd(g1.cov)
    cross = sqrtm_psd(s1 @ g2.cov @ s1)
    bures = np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross)
    val = float(np.sum((g1.mean - g2.mean) ** 2) + max(bures, 0.0))
    return float(np.sqrt(max(val, 0.0)))


def w2(mu, nu) -> float:
    """Quadratic Wasserstein distance between two discrete or two Gaussian measures."""
    if isinstance(mu, GaussianMeasure) and isinstance(nu, GaussianMeasure):
        return gaussian_w2(mu, nu)
    if isinstance(mu, DiscreteMeasure) and isinstance(nu, DiscreteMeasure):
        _check_pair(mu, nu)
        cost, *_ = transport_arrays(mu.manifold, mu.points, mu.weights, nu.points, nu.weights)
        return float(np.sqrt(cost))
    raise TypeError("w2 needs two discrete or two Gaussian measures")


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def bures_map(g1: GaussianMeasure, g2: GaussianMeasure) -> np.ndarray:
    """Symmetric positive-definite linear part of the optimal map g1 -> g2."""
    s = sqrtm_psd(g1.cov)
    s_inv = np.linalg.inv(s)
    k = s_inv @ sqrtm_psd(s @ g2.cov @ s) @ s_inv
    return 0.5 * (k + k.T)


# -- geodesic interpolation and plan comparison ------------------------------


def interpolate(plan: TransportPlan, t: float, check: bool = True) -> DiscreteMeasure:
    """McCann interpolant of an optimal plan at parameter ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if check and not verify_optimality(plan):
        raise NonOptimalPlan("interpolation requires an optimal plan")
    if t == 0.0:
        return plan.source
    if t == 1.0:
        return plan.target
    m = plan.manifold
    pts = m.geodesic(plan.source.points[plan.rows], plan.target.points[plan.cols], t)
    return DiscreteMeasure(m, pts, plan.mass / plan.mass.sum())


def _conditional(plan: TransportPlan, i: int):
    sel = plan.rows == i
    pts = plan.target.points[plan.cols[sel]]
    w = plan.mass[sel]
    return pts, w / w.sum()


def plan_distance(p1: TransportPlan, p2: TransportPlan, order: int = 2) -> float:
    """Distance between two plans leaving the same measure.

    Per source atom, take W2 between the two conditional target
    distributions (each normalized to mass one). ``order=2`` returns the
    root of their weighted mean square, which is never below W2 between the
    two target measures; ``order=1`` returns their weighted mean.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if not p1.source.same_as(p2.source):
        raise SourceMismatch("plans must share their source measure")
    m = p1.manifold
    total = 0.0
    for i, w in enumerate(p1.source.weights):
        x1, a1 = _conditional(p1, i)
        x2, a2 = _conditional(p2, i)
        if len(a1) == 1 and len(a2) == 1:
            sq = float(m.distance(x1[0], x2[0])) ** 2
        else:
            sq, *_ = transport_arrays(m, x1, a1, x2, a2)
        total += w * (sq if order == 2 else math.sqrt(sq))
    return math.sqrt(total) if order == 2 else total


def gaussian_map_distance(cov: np.ndarray, linear: np.ndarray, shift=None) -> float:
    """Plan distance between two affine maps leaving N(m, cov).

    The maps differ by ``x -> linear (x - m) + shift``; the result is the
    root mean square of that difference.
    """
    val = float(np.trace(linear @ cov @ linear.T))
    if shift is not None:
        val += float(np.sum(np.asarray(shift, dtype=float) ** 2))
    return math.sqrt(max(val, 0.0))


def verify_optimality(plan: TransportPlan, trials: int = 2000, seed: int = 0, rtol: float = 1e-12) -> bool:
    """Cyclical-monotonicity check of a plan's support.

    Exhaustive over every permutation of the support when it has at most
    seven entries; otherwise ``trials`` random cycles of length 2 to 4.
    """
    x = plan.source.points[plan.rows]
    y = plan.target.points[plan.cols]
    k = len(plan.mass)
    if k <= 1:
        return True
    c = plan.manifold.sq_distance_matrix(x, y)
    diag = np.diag(c)
    slack = rtol * max(1.0, float(c.max()))
    if k <= 7:
        base = diag.sum()
        idx = np.arange(k)
        for perm in itertools.permutations(range(k)):
            if c[idx, perm].sum() < base - slack:
                return False
        return True
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        length = int(rng.integers(2, min(4, k) + 1))
        cyc = rng.choice(k, size=length, replace=False)
        if c[cyc, np.roll(cyc, -1)].sum() < diag[cyc].sum() - slack:
            return False
    return True


def is_optimal(plan: TransportPlan, rtol: float = 1e-9) -> bool:
    """Exact optimality test by comparison with a freshly solved plan."""
    best = solve_ot(plan.source, plan.target).cost()
    return plan.cost() <= best + rtol * max(best, 1e-300) + 1e-15


def gaussian_map_w2(g1: GaussianMeasure, g2: GaussianMeasure) -> float:
    """W2 as the cost of the optimal linear map.

    Equal to :func:`gaussian_w2` but free of the trace cancellation that
    hurts when the two Gaussians are very close.
    """
    if g1.dim != g2.dim:
        raise DimensionMismatch("Gaussians of different dimension")
    e = bures_map(g1, g2) - np.eye(g1.dim)
    val = float(np.trace(e @ g1.cov @ e) + np.sum((g1.mean - g2.mean) ** 2))
    return float(np.sqrt(max(val, 0.0)))

