"""Base manifolds: Euclidean space, flat torus and the round 2-sphere.

Points are numpy arrays whose last axis holds ambient coordinates, so every
method broadcasts over leading axes. Sphere points are stored as unit vectors
in R^3 and tangent vectors as ambient R^3 vectors orthogonal to their base;
distances and tangent lengths carry the radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AntipodalPoints, BaseMismatch, InvalidPoint

EUCLIDEAN = "euclidean"
FLAT_TORUS = "flat_torus"
SPHERE = "sphere"
KINDS = (EUCLIDEAN, FLAT_TORUS, SPHERE)

# 1 + <p, q> below this is treated as an antipodal pair
_ANTIPODAL_TOL = 1e-12
_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Manifold:
    """Descriptor of a constant-curvature base manifold.

    Use the :meth:`euclidean`, :meth:`flat_torus` and :meth:`sphere`
    constructors rather than filling the fields by hand.
    """

    kind: str
    dim: int
    period: tuple = field(default=())
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.kind == SPHERE and self.dim != 2:
            raise ValueError("only the 2-sphere is supported")
        if self.kind == FLAT_TORUS:
            if len(self.period) != self.dim or min(self.period) <= 0:
                raise ValueError("torus needs one positive period per axis")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @classmethod
    def euclidean(cls, dim: int) -> "Manifold":
        return cls(EUCLIDEAN, int(dim))

    @classmethod
    def flat_torus(cls, period) -> "Manifold":
        period = tuple(float(p) for p in np.atleast_1d(period))
        return cls(FLAT_TORUS, len(period), period)

    @classmethod
    def sphere(cls, radius: float = 1.0) -> "Manifold":
        return cls(SPHERE, 2, (), float(radius))

    @property
    def ambient_dim(self) -> int:
        return 3 if self.kind == SPHERE else self.dim

    @property
    def curvature_bound(self) -> float:
        if self.kind == SPHERE:
            return 1.0 / self.radius**2
        return 0.0

    @property
    def _period(self) -> np.ndarray:
        return np.asarray(self.period, dtype=float)

    # -- membership -------------------------------------------------------

    def canonical(self, x) -> np.ndarray:
        """Return ``x`` mapped onto the manifold's canonical representation."""
        x = np.asarray(x, dtype=float)
        if self.kind == FLAT_TORUS:
            p = self._period
            x = np.mod(x, p)
            # np.mod can round tiny negatives up to exactly the period
            return np.where(x >= p, x - p, x)
        if self.kind == SPHERE:
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        return x

    def validate(self, x) -> np.ndarray:
        """Check shape and membership, returning canonical coordinates."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.ambient_dim,):
            raise InvalidPoint(
                f"expected last axis of size {self.ambient_dim}, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise InvalidPoint("non-finite coordinates")
        if self.kind == SPHERE:
            norms = np.linalg.norm(x, axis=-1)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise InvalidPoint("sphere points must have unit norm")
        return self.canonical(x)

    def contains(self, x, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == FLAT_TORUS:
            return bool(np.all((x >= 0) & (x < self._period)))
        if self.kind == SPHERE:
            return bool(np.all(np.abs(np.linalg.norm(x, axis=-1) - 1.0) <= atol))
        return bool(np.all(np.isfinite(x)))

    # -- tangent spaces ---------------------------------------------------

    def project_tangent(self, p, v) -> np.ndarray:
        """Orthogonal projection of ambient vectors onto T_p N."""
        v = np.asarray(v, dtype=float)
        if self.kind != SPHERE:
            return v
        p = np.asarray(p, dtype=float)
        return v - np.sum(p * v, axis=-1, keepdims=True) * p

    def frame(self, p) -> np.ndarray:
        """Orthonormal tangent frame at ``p`` as an array of shape (..., D, k)."""
        p = np.asarray(p, dtype=float)
        if self.kind != SPHERE:
            eye = np.eye(self.dim)
            return np.broadcast_to(eye, p.shape[:-1] + eye.shape).copy()
        # seed with the coordinate axis least aligned with p
        axis = np.argmin(np.abs(p), axis=-1)
        seed = np.eye(3)[axis]
        e1 = seed - np.sum(seed * p, axis=-1, keepdims=True) * p
        e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
        e2 = np.cross(p, e1)
        return np.stack([e1, e2], axis=-1)

    @property
    def tangent_dim(self) -> int:
        return self.dim

    # -- metric geometry --------------------------------------------------

    def _sphere_cos(self, p, q):
        c = np.clip(np.sum(p * q, axis=-1), -1.0, 1.0)
        if np.any(1.0 + c < _ANTIPODAL_TOL):
            raise AntipodalPoints("antipodal points have no unique geodesic")
        return c

    def log(self, p, q) -> np.ndarray:
        """Initial velocity of the minimizing unit-time geodesic from p to q."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == EUCLIDEAN:
            return q - p
        if self.kind == FLAT_TORUS:
            per = self._period
            # representative in [-P/2, P/2): ties go to the smaller lattice shift
            return np.mod(q - p + per / 2.0, per) - per / 2.0
        c = self._sphere_cos(p, q)
        w = q - c[..., None] * p
        s = np.linalg.norm(w, axis=-1)
        theta = np.arctan2(s, c)
        factor = np.where(s > 1e-300, theta / np.where(s > 1e-300, s, 1.0), 1.0)
        return self.radius * factor[..., None] * w

    def exp(self, p, v) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == EUCLIDEAN:
            return p + v
        if self.kind == FLAT_TORUS:
            return self.canonical(p + v)
        n = np.linalg.norm(v, axis=-1)
        a = n / self.radius
        # sin(a)/n without dividing by zero
        sinc = np.where(n > 1e-300, np.sin(a) / np.where(n > 1e-300, n, 1.0), 1.0 / self.radius)
        q = np.cos(a)[..., None] * p + sinc[..., None] * v
        return self.canonical(q)

    def distance(self, p, q) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == SPHERE:
            c = np.clip(np.sum(p * q, axis=-1), -1.0, 1.0)
            s = np.linalg.norm(np.cross(p, q), axis=-1)
            return self.radius * np.arctan2(s, c)
        return np.linalg.norm(self.log(p, q), axis=-1)

    def sq_distance_matrix(self, x, y) -> np.ndarray:
        """Pairwise squared distances between point sets of shape (n, D), (m, D)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == EUCLIDEAN:
            diff = x[:, None, :] - y[None, :, :]
            return np.einsum("ijk,ijk->ij", diff, diff)
        return self.distance(x[:, None, :], y[None, :, :]) ** 2

    def geodesic(self, p, q, t) -> np.ndarray:
        """Point at parameter ``t`` of the minimizing geodesic from p to q."""
        t = np.asarray(t, dtype=float)
        v = self.log(p, q)
        if t.ndim:
            t = t[..., None]
        return self.exp(p, t * v)

    def transport(self, p, q, v) -> np.ndarray:
        """Parallel transport of ``v`` in T_p N along the minimizing geodesic to q."""
        v = np.asarray(v, dtype=float)
        if self.kind != SPHERE:
            return np.broadcast_to(v, np.broadcast_shapes(v.shape, np.shape(q))).copy()
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        c = self._sphere_cos(p, q)
        coef = np.sum(q * v, axis=-1) / (1.0 + c)
        return v - coef[..., None] * (p + q)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        out = {"manifold": self.kind, "dim": self.dim}
        if self.kind == FLAT_TORUS:
            out["period"] = list(self.period)
        if self.kind == SPHERE:
            out["radius"] = self.radius
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Manifold":
        kind = d["manifold"]
        if kind == EUCLIDEAN:
            return cls.euclidean(d["dim"])
        if kind == FLAT_TORUS:
            return cls.flat_torus(d["period"])
        if kind == SPHERE:
            return cls.sphere(d.get("radius", 1.0))
        raise ValueError(f"unknown manifold kind {kind!r}")


@dataclass(frozen=True, eq=False)
class TangentVec:
    """A single tangent vector with its base point."""

    base_point: np.ndarray
    components: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.components))


def _check_tangent(m: Manifold, v: TangentVec, atol: float = 1e-9) -> None:
    if m.kind == SPHERE:
        if abs(float(np.dot(v.base_point, v.components))) > atol * max(1.0, v.norm()):
            raise BaseMismatch("sphere tangent vector is not orthogonal to its base")


def geodesic_point(m: Manifold, p, q, t: float) -> np.ndarray:
    """Point at parameter ``t`` in [0, 1] on the minimizing geodesic p -> q."""
    p, q = m.validate(p), m.validate(q)
    return m.geodesic(p, q, float(t))


def log_map(m: Manifold, p, q) -> TangentVec:
    p, q = m.validate(p), m.validate(q)
    return TangentVec(p, m.log(p, q))


def exp_map(m: Manifold, p, v) -> np.ndarray:
    if isinstance(v, TangentVec):
        if not np.allclose(v.base_point, p, atol=1e-12):
            raise BaseMismatch("tangent vector is based at another point")
        v = v.components
    p = m.validate(p)
    return m.exp(p, m.project_tangent(p, v))


def parallel_transport_vec(m: Manifold, p, q, v: TangentVec) -> TangentVec:
    p, q = m.validate(p), m.validate(q)
    if not np.allclose(v.base_point, p, atol=1e-12):
        raise BaseMismatch("tangent vector is not based at the start point")
    _check_tangent(m, v)
    return TangentVec(q, m.transport(p, q, v.components))
