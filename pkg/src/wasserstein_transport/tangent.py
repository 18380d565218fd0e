"""Tangent fields over Wasserstein points and the ParT / Push / T operators.

Every field space L^2(mu) is given orthonormal coordinates so operators are
plain matrices and operator norms are spectral norms:

* discrete measures: ``sqrt(w_i) * frame_i^T v_i`` stacked atom by atom;
* Gaussians N(m, S): a field ``x -> A (x - m) + c`` has coordinates
  ``vec(A S^{1/2})`` (row-major) followed by ``c``.

On Gaussians only affine fields are represented. That subspace splits
exactly into the tangent part (symmetric ``A`` plus constants) and the
normal part (``A = S Omega`` with ``Omega`` antisymmetric).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import BaseMismatch, ParameterOutOfRange, SolverFailure
from .geodesic import GaussianGeodesic, MongeGeodesic
from .manifold import SPHERE
from .measures import DiscreteMeasure, GaussianMeasure

Measure = Union[DiscreteMeasure, GaussianMeasure]
Geodesic = Union[MongeGeodesic, GaussianGeodesic]

LYAPUNOV_RESIDUAL = 1e-8


def _sym_sqrt(cov: np.ndarray, inverse: bool = False) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    p = -0.5 if inverse else 0.5
    return (vecs * vals**p) @ vecs.T


@dataclass(frozen=True, eq=False)
class TangentField:
    """Vector field in L^2(mu).

    Discrete bases carry per-atom ambient ``values``; Gaussian bases carry
    the affine field ``x -> linear @ (x - mean) + const``.
    """

    base: Measure
    values: np.ndarray = None
    linear: np.ndarray = None
    const: np.ndarray = None

    def __post_init__(self):
        if isinstance(self.base, DiscreteMeasure):
            v = np.asarray(self.values, dtype=float).reshape(self.base.points.shape)
            m = self.base.manifold
            if m.kind == SPHERE:
                normal = np.sum(v * self.base.points, axis=-1)
                scale = max(1.0, float(np.abs(v).max(initial=0.0)))
                if np.abs(normal).max() > 1e-8 * scale:
                    raise BaseMismatch("sphere field values must be tangent to their atoms")
                v = m.project_tangent(self.base.points, v)
            object.__setattr__(self, "values", v)
        elif isinstance(self.base, GaussianMeasure):
            d = self.base.dim
            a = np.zeros((d, d)) if self.linear is None else np.asarray(self.linear, dtype=float)
            c = np.zeros(d) if self.const is None else np.asarray(self.const, dtype=float)
            if a.shape != (d, d) or c.shape != (d,):
                raise BaseMismatch("affine field does not match the Gaussian dimension")
            object.__setattr__(self, "linear", a)
            object.__setattr__(self, "const", c)
        else:
            raise TypeError("tangent fields live over discrete or Gaussian measures")

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.base, GaussianMeasure)

    def __add__(self, other: "TangentField") -> "TangentField":
        _same_base(self, other)
        if self.is_gaussian:
            return TangentField(self.base, linear=self.linear + other.linear, const=self.const + other.const)
        return TangentField(self.base, self.values + other.values)

    def __sub__(self, other: "TangentField") -> "TangentField":
        return self + other.scaled(-1.0)

    def scaled(self, s: float) -> "TangentField":
        if self.is_gaussian:
            return TangentField(self.base, linear=s * self.linear, const=s * self.const)
        return TangentField(self.base, s * self.values)

    def __call__(self, x) -> np.ndarray:
        """Evaluate a Gaussian-base field at points ``x``."""
        if not self.is_gaussian:
            raise TypeError("discrete fields are only defined on their atoms")
        x = np.asarray(x, dtype=float)
        return (x - self.base.mean) @ self.linear.T + self.const

    def norm(self) -> float:
        return float(np.sqrt(max(inner(self.base, self, self), 0.0)))


def _same_base(u: TangentField, v: TangentField) -> None:
    if u.base is v.base:
        return
    if not u.base.same_as(v.base):
        raise BaseMismatch("fields live over different measures")


@dataclass(frozen=True, eq=False)
class TangentDecomposition:
    tangent_part: TangentField
    normal_part: TangentField


def inner(mu: Measure, u: TangentField, v: TangentField) -> float:
    """L^2(mu) inner product of two fields."""
    _same_base(u, v)
    if isinstance(mu, GaussianMeasure):
        return float(np.trace(u.linear.T @ v.linear @ mu.cov) + u.const @ v.const)
    return float(np.sum(mu.weights * np.sum(u.values * v.values, axis=-1)))


# -- coordinates -------------------------------------------------------------


def full_dim(mu: Measure) -> int:
    if isinstance(mu, GaussianMeasure):
        return mu.dim * mu.dim + mu.dim
    return len(mu) * mu.manifold.tangent_dim


def coords(v: TangentField) -> np.ndarray:
    mu = v.base
    if isinstance(mu, GaussianMeasure):
        return np.concatenate([(v.linear @ _sym_sqrt(mu.cov)).ravel(), v.const])
    frames = mu.manifold.frame(mu.points)
    c = np.einsum("ndk,nd->nk", frames, v.values)
    return (np.sqrt(mu.weights)[:, None] * c).ravel()


def from_coords(mu: Measure, x) -> TangentField:
    x = np.asarray(x, dtype=float)
    if isinstance(mu, GaussianMeasure):
        d = mu.dim
        a = x[: d * d].reshape(d, d) @ _sym_sqrt(mu.cov, inverse=True)
        return TangentField(mu, linear=a, const=x[d * d :].copy())
    k = mu.manifold.tangent_dim
    c = x.reshape(len(mu), k) / np.sqrt(mu.weights)[:, None]
    frames = mu.manifold.frame(mu.points)
    return TangentField(mu, np.einsum("ndk,nk->nd", frames, c))


def tangent_basis(mu: Measure) -> np.ndarray:
    """Orthonormal basis of T(mu) as columns in full coordinates."""
    if isinstance(mu, DiscreteMeasure):
        return np.eye(full_dim(mu))
    d = mu.dim
    root = _sym_sqrt(mu.cov)
    cols = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            e[i, j] = e[j, i] = 1.0
            cols.append(np.concatenate([(e @ root).ravel(), np.zeros(d)]))
    q, _ = np.linalg.qr(np.array(cols).T)
    consts = np.vstack([np.zeros((d * d, d)), np.eye(d)])
    return np.hstack([q, consts])


def tangent_projector(mu: Measure) -> np.ndarray:
    b = tangent_basis(mu)
    return b @ b.T


# -- projection --------------------------------------------------------------


def solve_lyapunov_sym(cov: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``X cov + cov X = rhs`` through the eigendecomposition of ``cov``."""
    vals, vecs = np.linalg.eigh(cov)
    r = vecs.T @ rhs @ vecs
    x = vecs @ (r / (vals[:, None] + vals[None, :])) @ vecs.T
    resid = np.linalg.norm(x @ cov + cov @ x - rhs)
    if resid > LYAPUNOV_RESIDUAL * max(1.0, np.linalg.norm(rhs)):
        raise SolverFailure(f"Lyapunov residual {resid:.3e} above tolerance")
    return x


def project_tangent(mu: Measure, v: TangentField) -> TangentDecomposition:
    """Orthogonal split of ``v`` into its T(mu) and N(mu) parts.

    Discrete measures in general position have T(mu) = L^2(mu), so the
    normal part is zero. For Gaussians the symmetric part ``S`` of the
    linear map solves ``S cov + cov S = A cov + cov A^T``.
    """
    if isinstance(mu, GaussianMeasure):
        a = v.linear
        s = solve_lyapunov_sym(mu.cov, a @ mu.cov + mu.cov @ a.T)
        s = 0.5 * (s + s.T)
        tan = TangentField(mu, linear=s, const=v.const)
        return TangentDecomposition(tan, TangentField(mu, linear=a - s))
    zero = TangentField(mu, np.zeros_like(v.values))
    return TangentDecomposition(v, zero)


# -- operators along a geodesic ----------------------------------------------


def _check_field_time(g: Geodesic, t1: float, v: TangentField) -> None:
    for t in (t1,):
        if not 0.0 <= t <= 1.0:
            raise ParameterOutOfRange(f"time {t} outside [0, 1]")
    if not v.base.same_as(g.evaluate(t1), atol=1e-9):
        raise BaseMismatch("field is not based at the geodesic point mu_t1")


def part_field(g: Geodesic, t1: float, t2: float, v: TangentField) -> TangentField:
    """Particle-wise parallel transport of ``v`` from mu_t1 to mu_t2."""
    _check_field_time(g, t1, v)
    if not 0.0 <= t2 <= 1.0:
        raise ParameterOutOfRange(f"time {t2} outside [0, 1]")
    target = g.evaluate(t2)
    if isinstance(g, GaussianGeodesic):
        m = g.step_map(t1, t2)
        return TangentField(target, linear=v.linear @ np.linalg.inv(m), const=v.const)
    return TangentField(target, g.transport_values(t1, t2, v.values))


def push_field(g: Geodesic, t1: float, t2: float, v: TangentField) -> TangentField:
    """Pushforward of ``v`` by the Monge map mu_t1 -> mu_t2.

    For Gaussians this is ``z -> M A M^{-1} (z - m) + M c`` with ``M`` the
    differential of the map. Discrete bases have no differential off the
    atoms, so Push is relabeling plus parallel transport there.
    """
    if isinstance(g, GaussianGeodesic):
        _check_field_time(g, t1, v)
        m = g.step_map(t1, t2)
        return TangentField(g.evaluate(t2), linear=m @ v.linear @ np.linalg.inv(m), const=m @ v.const)
    return part_field(g, t1, t2, v)


def t_op(g: Geodesic, t1: float, t2: float, v: TangentField) -> TangentField:
    """Tangent projection at mu_t2 of the parallel-transported field."""
    moved = part_field(g, t1, t2, v)
    return project_tangent(moved.base, moved).tangent_part


def estimate_c(g: Geodesic) -> float:
    """Constant bounding ||Push - ParT|| per unit of Wasserstein distance.

    Ratio of the velocity field's spatial Lipschitz bound to the geodesic
    length. Exact on Gaussians; on atoms it is a finite-difference
    heuristic over atom pairs and a time grid.
    """
    length = g.length
    if length <= 1e-15:
        return 0.0
    return float(g.lipschitz_bound / length)


# -- matrix representations --------------------------------------------------


def part_matrix(g: Geodesic, t1: float, t2: float) -> np.ndarray:
    """ParT_{t1,t2} in orthonormal full coordinates."""
    if isinstance(g, GaussianGeodesic):
        d = g.dim
        m = g.step_map(t1, t2)
        rot = _sym_sqrt(g.cov_t(t1), inverse=True) @ np.linalg.inv(m) @ _sym_sqrt(g.cov_t(t2))
        out = np.zeros((d * d + d, d * d + d))
        out[: d * d, : d * d] = np.kron(np.eye(d), rot.T)
        out[d * d :, d * d :] = np.eye(d)
        return out
    return _discrete_transport_matrix(g, t1, t2)


def push_matrix(g: Geodesic, t1: float, t2: float) -> np.ndarray:
    if isinstance(g, GaussianGeodesic):
        d = g.dim
        m = g.step_map(t1, t2)
        rot = _sym_sqrt(g.cov_t(t1), inverse=True) @ np.linalg.inv(m) @ _sym_sqrt(g.cov_t(t2))
        out = np.zeros((d * d + d, d * d + d))
        out[: d * d, : d * d] = np.kron(m, rot.T)
        out[d * d :, d * d :] = m
        return out
    return _discrete_transport_matrix(g, t1, t2)


def _discrete_transport_matrix(g: MongeGeodesic, t1: float, t2: float) -> np.ndarray:
    man = g.manifold
    x1, x2 = g.positions(t1), g.positions(t2)
    f1, f2 = man.frame(x1), man.frame(x2)
    k = man.tangent_dim
    n = g.n_atoms
    # transport each frame column, then express in the target frame
    moved = np.stack([man.transport(x1, x2, f1[:, :, c]) for c in range(k)], axis=-1)
    blocks = np.einsum("ndk,ndl->nkl", f2, moved)
    out = np.zeros((n * k, n * k))
    for i in range(n):
        out[i * k : (i + 1) * k, i * k : (i + 1) * k] = blocks[i]
    return out


def t_matrix(g: Geodesic, t1: float, t2: float) -> np.ndarray:
    """T_{t1,t2} = proj_{T mu_t2} ParT_{t1,t2} in full coordinates."""
    if isinstance(g, MongeGeodesic):
        return part_matrix(g, t1, t2)
    return tangent_projector(g.evaluate(t2)) @ part_matrix(g, t1, t2)


# -- operators and norms -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldOperator:
    """Linear map L^2(source) -> L^2(target) in orthonormal full coordinates."""

    matrix: np.ndarray
    source: Measure
    target: Measure

    def __call__(self, v: TangentField) -> TangentField:
        _same_base(v, TangentField(self.source, **_zero_kwargs(self.source)))
        return from_coords(self.target, self.matrix @ coords(v))

    def __matmul__(self, other: "FieldOperator") -> "FieldOperator":
        return FieldOperator(self.matrix @ other.matrix, other.source, self.target)

    def on_tangent(self) -> np.ndarray:
        """Matrix restricted to T(source) (columns in the tangent basis)."""
        return self.matrix @ tangent_basis(self.source)


def _zero_kwargs(mu: Measure) -> dict:
    if isinstance(mu, GaussianMeasure):
        return {}
    return {"values": np.zeros_like(mu.points)}


@dataclass
class PowerIterationResult:
    value: float
    vector: np.ndarray
    iterations: int
    seed: int


def power_iteration(
    a: np.ndarray, seed: int = 0, max_iter: int = 200, rtol: float = 1e-9, trials: int = 1
) -> PowerIterationResult:
    """Largest singular value of ``a`` by power iteration on ``a^T a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0 or not np.any(a):
        return PowerIterationResult(0.0, np.zeros(a.shape[1]), 0, seed)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, trials)):
        x = rng.standard_normal(a.shape[1])
        x /= np.linalg.norm(x)
        sigma = np.linalg.norm(a @ x)
        it = 0
        for it in range(1, max_iter + 1):
            y = a.T @ (a @ x)
            ny = np.linalg.norm(y)
            if ny == 0.0:
                sigma = 0.0
                break
            x = y / ny
            new = np.linalg.norm(a @ x)
            done = abs(new - sigma) <= rtol * max(new, 1e-300)
            sigma = new
            if done:
                break
        if best is None or sigma > best.value:
            best = PowerIterationResult(float(sigma), x, it, seed)
    return best


OperatorLike = Union[FieldOperator, np.ndarray, Callable[[TangentField], TangentField]]


def operator_matrix(op: OperatorLike, mu_source: Measure = None) -> np.ndarray:
    if isinstance(op, FieldOperator):
        return op.matrix
    if isinstance(op, np.ndarray):
        return op
    if mu_source is None:
        raise ValueError("a callable operator needs its source measure")
    dim = full_dim(mu_source)
    cols = [coords(op(from_coords(mu_source, e))) for e in np.eye(dim)]
    return np.array(cols).T


def operator_norm(
    op: OperatorLike,
    mu_source: Measure = None,
    trials: int = 1,
    seed: int = 0,
    tangent_only: bool = False,
) -> float:
    """Operator norm of a field-to-field map via power iteration.

    With ``tangent_only`` the map is restricted to T(mu_source).
    """
    a = operator_matrix(op, mu_source)
    if tangent_only:
        src = op.source if isinstance(op, FieldOperator) else mu_source
        a = a @ tangent_basis(src)
    return power_iteration(a, seed=seed, trials=trials).value
