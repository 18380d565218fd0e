"""Monge geodesics in Wasserstein space: atomic and Gaussian."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidMeasure, NonOptimalPlan, ParameterOutOfRange
from .manifold import Manifold
from .measures import (
    DiscreteMeasure,
    GaussianMeasure,
    TransportPlan,
    bures_map,
    gaussian_w2,
    solve_ot,
    verify_optimality,
)

# time grid used for Lipschitz estimates
_LIP_TIMES = np.linspace(0.0, 1.0, 33)


def _check_t(*ts):
    for t in ts:
        if not (0.0 <= t <= 1.0):
            raise ParameterOutOfRange(f"time {t} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class MongeGeodesic:
    """Geodesic driven by a deterministic plan between discrete measures.

    Atom ``i`` of every intermediate measure is the position at time ``t``
    of the trajectory starting at ``plan.source.points[i]``.
    """

    plan: TransportPlan
    lipschitz_bound: float = field(default=np.nan)

    def __post_init__(self):
        if not self.plan.is_deterministic:
            raise InvalidMeasure("a Monge geodesic needs a deterministic plan")
        order = np.argsort(self.plan.rows, kind="stable")
        object.__setattr__(self, "_start", self.plan.source.points[self.plan.rows[order]])
        object.__setattr__(self, "_end", self.plan.target.points[self.plan.cols[order]])
        object.__setattr__(self, "_velocity0", self.manifold.log(self._start, self._end))
        if np.isnan(self.lipschitz_bound):
            object.__setattr__(self, "lipschitz_bound", self._estimate_lipschitz())

    @classmethod
    def between(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> "MongeGeodesic":
        return cls(solve_ot(mu, nu))

    @classmethod
    def from_map(cls, mu: DiscreteMeasure, targets, check: bool = True) -> "MongeGeodesic":
        """Geodesic sending atom ``i`` of ``mu`` to ``targets[i]``."""
        m = mu.manifold
        nu = DiscreteMeasure(m, targets, mu.weights)
        n = len(mu)
        plan = TransportPlan(mu, nu, np.arange(n), np.arange(n), mu.weights)
        if check and not verify_optimality(plan):
            raise NonOptimalPlan("the prescribed map is not an optimal plan")
        return cls(plan)

    @property
    def manifold(self) -> Manifold:
        return self.plan.manifold

    @property
    def weights(self) -> np.ndarray:
        return self.plan.source.weights

    @property
    def n_atoms(self) -> int:
        return len(self.plan.source)

    @property
    def length(self) -> float:
        return float(np.sqrt(self.plan.cost()))

    def positions(self, t: float) -> np.ndarray:
        _check_t(t)
        if t == 0.0:
            return self._start
        if t == 1.0:
            return self._end
        return self.manifold.exp(self._start, t * self._velocity0)

    def evaluate(self, t: float) -> DiscreteMeasure:
        return DiscreteMeasure(self.manifold, self.positions(t), self.weights)

    def w2_between(self, s: float, t: float) -> float:
        return abs(t - s) * self.length

    def velocity_values(self, t: float) -> np.ndarray:
        """Velocity of each trajectory at time ``t`` (ambient components)."""
        _check_t(t)
        return self.manifold.transport(self._start, self.positions(t), self._velocity0)

    def velocity_field(self, t: float):
        from .tangent import TangentField

        return TangentField(self.evaluate(t), self.velocity_values(t))

    def transport_values(self, s: float, t: float, values) -> np.ndarray:
        """Parallel transport of per-atom vectors along each trajectory from s to t."""
        _check_t(s, t)
        return self.manifold.transport(self.positions(s), self.positions(t), values)

    def _estimate_lipschitz(self) -> float:
        n = self.n_atoms
        if n < 2:
            return 0.0
        m = self.manifold
        best = 0.0
        iu = np.triu_indices(n, 1)
        for t in _LIP_TIMES:
            x = self.positions(t)
            v = self.velocity_values(t)
            xa, xb = x[iu[0]], x[iu[1]]
            dist = m.distance(xa, xb)
            moved = m.transport(xb, xa, v[iu[1]])
            diff = np.linalg.norm(v[iu[0]] - moved, axis=-1)
            ok = dist > 1e-12
            if ok.any():
                best = max(best, float(np.max(diff[ok] / dist[ok])))
        return best

    def reversed(self) -> "MongeGeodesic":
        p = self.plan
        back = TransportPlan(p.target, p.source, p.cols, p.rows, p.mass)
        return MongeGeodesic(back, self.lipschitz_bound)


@dataclass(frozen=True, eq=False)
class GaussianGeodesic:
    """Wasserstein geodesic between two Gaussians on R^d.

    The particle map from time 0 to time t is
    ``x -> m_t + K_t (x - m_0)`` with ``K_t = (1 - t) I + t K`` and ``K`` the
    symmetric optimal linear map.
    """

    source: GaussianMeasure
    target: GaussianMeasure

    def __post_init__(self):
        if self.source.dim != self.target.dim:
            raise InvalidMeasure("endpoint Gaussians differ in dimension")
        object.__setattr__(self, "_k", bures_map(self.source, self.target))

    @property
    def dim(self) -> int:
        return self.source.dim

    @property
    def manifold(self) -> Manifold:
        return Manifold.euclidean(self.dim)

    @property
    def map_linear(self) -> np.ndarray:
        return self._k

    @property
    def length(self) -> float:
        return gaussian_w2(self.source, self.target)

    def k_t(self, t: float) -> np.ndarray:
        eye = np.eye(self.dim)
        return (1.0 - t) * eye + t * self._k

    def mean_t(self, t: float) -> np.ndarray:
        return (1.0 - t) * self.source.mean + t * self.target.mean

    def cov_t(self, t: float) -> np.ndarray:
        k = self.k_t(t)
        c = k @ self.source.cov @ k
        return 0.5 * (c + c.T)

    def evaluate(self, t: float) -> GaussianMeasure:
        _check_t(t)
        if t == 0.0:
            return self.source
        if t == 1.0:
            return self.target
        return GaussianMeasure(self.mean_t(t), self.cov_t(t))

    def w2_between(self, s: float, t: float) -> float:
        return abs(t - s) * self.length

    def step_map(self, s: float, t: float) -> np.ndarray:
        """Linear part of the particle map from time s to time t."""
        _check_t(s, t)
        return self.k_t(t) @ np.linalg.inv(self.k_t(s))

    def velocity_linear(self, t: float) -> np.ndarray:
        """Spatial derivative of the velocity field at time t."""
        _check_t(t)
        return (self._k - np.eye(self.dim)) @ np.linalg.inv(self.k_t(t))

    def velocity_field(self, t: float):
        from .tangent import TangentField

        return TangentField(
            self.evaluate(t), linear=self.velocity_linear(t), const=self.target.mean - self.source.mean
        )

    @property
    def lipschitz_bound(self) -> float:
        """Sup over time of the spectral norm of the velocity derivative.

        The eigenvalues of ``(K - I) K_t^{-1}`` are monotone in t, so the
        supremum sits at an endpoint.
        """
        return max(float(np.linalg.norm(self.velocity_linear(t), 2)) for t in (0.0, 1.0))

    def reversed(self) -> "GaussianGeodesic":
        return GaussianGeodesic(self.target, self.source)


@dataclass
class MongeReport:
    times: np.ndarray
    min_distance: np.ndarray
    threshold: float = 1e-9

    @property
    def overall_min(self) -> float:
        return float(self.min_distance.min()) if self.min_distance.size else np.inf

    @property
    def violation(self) -> bool:
        return self.overall_min < self.threshold

    @property
    def crossing_times(self) -> np.ndarray:
        return self.times[self.min_distance < self.threshold]


def check_monge_interior(
    g: MongeGeodesic, samples: int = 31, max_pairs: int = 200_000, seed: int = 0
) -> MongeReport:
    """Minimum pairwise distance between distinct trajectories at interior times.

    Times are the uniform grid ``k / (samples + 1)``; pairs are exhaustive up
    to ``max_pairs`` and randomly sampled beyond.
    """
    times = np.arange(1, samples + 1) / (samples + 1)
    n = g.n_atoms
    if n < 2:
        return MongeReport(times, np.full(times.size, np.inf))
    iu = np.triu_indices(n, 1)
    if iu[0].size > max_pairs:
        rng = np.random.default_rng(seed)
        pick = rng.choice(iu[0].size, size=max_pairs, replace=False)
        iu = (iu[0][pick], iu[1][pick])
    m = g.manifold
    mins = np.empty(times.size)
    for k, t in enumerate(times):
        x = m.exp(g._start, t * g._velocity0)
        mins[k] = m.distance(x[iu[0]], x[iu[1]]).min()
    return MongeReport(times, mins)
