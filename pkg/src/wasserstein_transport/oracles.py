"""Independent reference solutions used to cross-check the main solvers."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .cone import ConeElement
from .errors import DimensionMismatch, InvalidMeasure
from .geodesic import GaussianGeodesic, MongeGeodesic
from .measures import DiscreteMeasure, TransportPlan
from .tangent import TangentField, solve_lyapunov_sym

ODE_STEP = 1e-4


def oracle_1d_transport(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """Monotone (north-west corner) coupling of two measures on the real line."""
    if mu.manifold.kind != "euclidean" or mu.manifold.dim != 1 or nu.manifold != mu.manifold:
        raise DimensionMismatch("the monotone oracle needs measures on the real line")
    ia = np.argsort(mu.points[:, 0], kind="stable")
    ib = np.argsort(nu.points[:, 0], kind="stable")
    a = mu.weights[ia].copy()
    b = nu.weights[ib].copy()
    rows, cols, mass = [], [], []
    i = j = 0
    while i < a.size and j < b.size:
        m = min(a[i], b[j])
        if m > 0:
            rows.append(ia[i])
            cols.append(ib[j])
            mass.append(m)
        a[i] -= m
        b[j] -= m
        # advance whichever side is exhausted; ties advance both
        if a[i] <= 1e-15 and i < a.size:
            i += 1
        if j < b.size and b[j] <= 1e-15:
            j += 1
    mass = np.asarray(mass)
    return TransportPlan(mu, nu, np.asarray(rows), np.asarray(cols), mass * (1.0 / mass.sum()))


def brute_force_assignment(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple:
    """Exhaustive search over permutations for uniform measures with equal size.

    Returns ``(cost, permutation)`` with ``cost`` the weighted squared
    distance of the best assignment.
    """
    n = len(mu)
    if n != len(nu) or not (mu.is_uniform and nu.is_uniform):
        raise InvalidMeasure("brute force needs two uniform measures of equal size")
    if n > 9:
        raise InvalidMeasure("brute force is limited to 9 atoms")
    c = mu.manifold.sq_distance_matrix(mu.points, nu.points)
    idx = np.arange(n)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        val = c[idx, perm].sum()
        if val < best:
            best, best_perm = val, perm
    return best / n, np.asarray(best_perm)


def _linear_rhs(g: GaussianGeodesic, t: float, s: np.ndarray) -> np.ndarray:
    cov = g.cov_t(t)
    d = g.velocity_linear(t)
    sd = s @ d
    return -solve_lyapunov_sym(cov, sd @ cov + cov @ sd.T)


def oracle_gaussian_transport(g: GaussianGeodesic, a: float, b: float, v0: TangentField, step: float = ODE_STEP) -> TangentField:
    """Integrate the projected transport equation for an affine field with RK4.

    The field is first projected onto the tangent space at mu_a. Its
    symmetric part then follows ``S' = -sym_cov(S D)`` where ``D`` is the
    spatial derivative of the velocity and ``sym_cov`` is the tangent
    projection at the current covariance; the constant part is unchanged.
    """
    mu_a = g.evaluate(a)
    if v0.base.dim != g.dim:
        raise DimensionMismatch("field and geodesic dimensions differ")
    cov = mu_a.cov
    s = solve_lyapunov_sym(cov, v0.linear @ cov + cov @ v0.linear.T)
    s = 0.5 * (s + s.T)
    n = max(1, int(math.ceil(abs(b - a) / step - 1e-9)))
    h = (b - a) / n
    t = a
    for k in range(n):
        k1 = _linear_rhs(g, t, s)
        k2 = _linear_rhs(g, t + h / 2, s + h / 2 * k1)
        k3 = _linear_rhs(g, t + h / 2, s + h / 2 * k2)
        k4 = _linear_rhs(g, t + h, s + h * k3)
        s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s = 0.5 * (s + s.T)
        t = a + (k + 1) * h
    return TangentField(g.evaluate(b), linear=s, const=v0.const.copy())


def oracle_1d_cone_map(g, s: float, t: float, e: ConeElement, eps: float) -> ConeElement:
    """Cone map on the real line by monotone rearrangement.

    Each entry's displacement is carried unchanged to the moved atom; the
    displaced masses are then matched to the atoms of mu_t in sorted order.
    Gaussian elements on the line keep their constant part and scale their
    linear part by the inverse step map.
    """
    if isinstance(g, GaussianGeodesic):
        if g.dim != 1:
            raise DimensionMismatch("the line oracle needs one-dimensional Gaussians")
        m = float(g.step_map(s, t)[0, 0])
        return ConeElement(g.evaluate(t), e.radius, linear=e.linear / m, const=e.const.copy(), horizon=math.inf)
    if not isinstance(g, MongeGeodesic) or g.manifold.kind != "euclidean" or g.manifold.dim != 1:
        raise DimensionMismatch("the line oracle needs a geodesic on the real line")
    seg = eps * e.radius
    mu_t = g.evaluate(t)
    if seg == 0.0:
        return ConeElement.vertex(mu_t)
    y = g.positions(t)[e.rows, 0] + seg * e.velocities[:, 0]
    # sort atoms and displaced entries, then couple by cumulative mass
    ia = np.argsort(mu_t.points[:, 0], kind="stable")
    ib = np.argsort(y, kind="stable")
    a = mu_t.weights[ia].copy()
    b = e.mass[ib].copy()
    rows, vel, mass = [], [], []
    i = j = 0
    while i < a.size and j < b.size:
        m = min(a[i], b[j])
        if m > 1e-15:
            rows.append(ia[i])
            vel.append(y[ib[j]] - mu_t.points[ia[i], 0])
            mass.append(m)
        a[i] -= m
        b[j] -= m
        if a[i] <= 1e-15:
            i += 1
        if j < b.size and b[j] <= 1e-15:
            j += 1
    vel = np.asarray(vel)[:, None]
    mass = np.asarray(mass)
    w = math.sqrt(float(np.sum(mass * vel[:, 0] ** 2)))
    return ConeElement(mu_t, w / eps, np.asarray(rows), vel / w, mass, horizon=w)
