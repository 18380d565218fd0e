import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wasserstein_transport.errors import NegativeF, NoConvergence
from wasserstein_transport.experiments import (
    anisotropic_gaussian_geodesic,
    fit_slope,
    gaussian_scaling_geodesic,
    random_discrete_geodesic,
    sphere_atom_geodesic,
    translation_geodesic,
)
from wasserstein_transport.geodesic import GaussianGeodesic
from wasserstein_transport.linear import (
    MAX_BUDGET,
    Subdivision,
    check_f_approximation,
    default_f,
    direct_operator,
    dyadic_schedule,
    f_width,
    homogenize,
    linear_parallel_transport,
    unitarity_defect,
)
from wasserstein_transport.measures import GaussianMeasure
from wasserstein_transport.tangent import FieldOperator, estimate_c, t_matrix, tangent_basis

GENERAL = GaussianGeodesic(
    GaussianMeasure([0.0, 1.0], [[2.0, 0.3], [0.3, 1.0]]), GaussianMeasure([1.0, 0.0], [[1.0, -0.2], [-0.2, 0.5]])
)
ANISO = anisotropic_gaussian_geodesic()


def tangent_norm(g, t, m):
    return np.linalg.norm(m @ tangent_basis(g.evaluate(t)), 2)


class TestSubdivision:
    @pytest.mark.parametrize("pts", [(0.5,), (0.2, 0.2), (0.5, 0.1), (-0.1, 0.5), (0.0, 1.5)])
    def test_invalid(self, pts):
        with pytest.raises(ValueError):
            Subdivision(pts)

    def test_uniform_hits_endpoints(self):
        s = Subdivision.uniform(0.1, 0.7, 3)
        assert s.points[0] == 0.1 and s.points[-1] == 0.7
        np.testing.assert_allclose(s.gaps, 0.2)

    def test_with_point(self):
        assert Subdivision((0.0, 1.0)).with_point(0.25).points == (0.0, 0.25, 1.0)


class TestFWidth:
    def test_zero_f(self):
        assert f_width(Subdivision((0.0, 1.0)), lambda t: 0.0) == 0.0

    def test_three_points(self):
        assert f_width(Subdivision((0.0, 0.5, 1.0)), lambda t: t * t) == pytest.approx(math.exp(0.5) - 1, rel=1e-15)
        assert f_width(Subdivision((0.0, 0.5, 1.0)), lambda t: t * t) == pytest.approx(0.64872, abs=1e-5)

    @pytest.mark.parametrize("k", [0.5, 1.0, 3.0])
    def test_uniform_closed_form(self, k):
        widths = [f_width(Subdivision.uniform(0, 1, n), lambda t: k * t * t) for n in (1, 2, 4, 8, 16)]
        np.testing.assert_allclose(widths, [math.expm1(k / n) for n in (1, 2, 4, 8, 16)], rtol=1e-14)
        assert all(b < a for a, b in zip(widths, widths[1:]))

    def test_negative_f(self):
        with pytest.raises(NegativeF):
            f_width(Subdivision((0.0, 1.0)), lambda t: -t)

    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=8, unique=True), st.floats(0.001, 0.999), st.floats(0.1, 5))
    def test_refinement_never_increases(self, pts, extra, k):
        s = Subdivision(tuple(sorted({0.0, 1.0, *pts})))
        f = lambda t: k * t * t  # noqa: E731
        assert f_width(s.with_point(extra), f) <= f_width(s, f) * (1 + 1e-12)


class TestHomogenize:
    def test_two_points(self):
        fam = homogenize(GENERAL, Subdivision((0.2, 0.6)))
        np.testing.assert_array_equal(fam.total.matrix, t_matrix(GENERAL, 0.2, 0.6))

    def test_discrete_is_relabeling(self):
        g = random_discrete_geodesic(seed=2)
        fam = homogenize(g, Subdivision.uniform(0, 1, 5))
        np.testing.assert_allclose(fam.total.matrix, np.eye(12), atol=0)
        assert fam.total.target.same_as(g.evaluate(1.0))

    def test_composition_exact(self):
        fam = homogenize(GENERAL, Subdivision.uniform(0, 1, 6))
        for a, c in [(0, 5), (1, 6), (2, 3)]:
            # appending one neighbor is exactly the fixed evaluation order
            np.testing.assert_array_equal(fam.neighbors[c - 1] @ fam.op(a, c - 1).matrix, fam.op(a, c).matrix)
        for a, b, c in [(0, 2, 5), (1, 3, 6), (0, 4, 6)]:
            np.testing.assert_allclose(fam.op(b, c).matrix @ fam.op(a, b).matrix, fam.op(a, c).matrix, atol=1e-14)

    def test_composition_bit_reproducible(self):
        fam = homogenize(GENERAL, Subdivision.uniform(0, 1, 6))
        again = homogenize(GENERAL, Subdivision.uniform(0, 1, 6))
        np.testing.assert_array_equal(fam.total.matrix, again.total.matrix)
        acc = fam.neighbors[0]
        for k in range(1, 6):
            acc = fam.neighbors[k] @ acc
        np.testing.assert_array_equal(acc, fam.total.matrix)

    def test_getitem(self):
        fam = homogenize(GENERAL, Subdivision((0.0, 0.5, 1.0)))
        assert fam[0.0, 1.0] is fam.total

    @pytest.mark.parametrize("g", [GENERAL, ANISO, gaussian_scaling_geodesic()], ids=["general", "aniso", "scaling"])
    @pytest.mark.parametrize("pts", [(0.0, 0.5, 1.0), (0.1, 0.2, 0.7), (0.3, 0.31, 0.4)])
    def test_three_point_bound(self, g, pts):
        a, b, c = pts
        fam = homogenize(g, Subdivision(pts))
        disc = tangent_norm(g, a, fam.total.matrix - t_matrix(g, a, c))
        bound = estimate_c(g) ** 2 * g.w2_between(a, b) * g.w2_between(b, c)
        assert disc <= bound + 1e-9

    def test_reverse_direction(self):
        fam = homogenize(GENERAL, Subdivision((0.2, 0.6)), reverse=True)
        np.testing.assert_array_equal(fam.total.matrix, t_matrix(GENERAL, 0.6, 0.2))


class TestFApproximation:
    @pytest.mark.parametrize("g", [gaussian_scaling_geodesic(), gaussian_scaling_geodesic(dim=1, factor=3.0), ANISO, GENERAL],
                             ids=["scaling2", "scaling1", "aniso", "general"])
    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_no_violations(self, g, n):
        rep = check_f_approximation(g, Subdivision.uniform(0, 1, n))
        assert rep.violations == 0
        assert rep.max_ratio <= 1.0 + 1e-9

    def test_discrete_zero(self):
        rep = check_f_approximation(random_discrete_geodesic(seed=4), Subdivision.uniform(0, 1, 4))
        assert max(p[2] for p in rep.pairs) == 0.0

    def test_zero_f_detects(self):
        rep = check_f_approximation(ANISO, Subdivision.uniform(0, 1, 4), f=lambda t: 0.0)
        assert rep.violations > 0
        assert rep.max_ratio == math.inf

    def test_default_f(self):
        f = default_f(ANISO)
        assert f(0.5) == pytest.approx((estimate_c(ANISO) * ANISO.length) ** 2 / 4)


class TestDiscrepancySlope:
    @pytest.mark.parametrize("g", [ANISO, GENERAL], ids=["aniso", "general"])
    def test_slope_two(self, g):
        gaps = [2.0**-k for k in range(1, 7)]
        disc = []
        for d in gaps:
            fam = homogenize(g, Subdivision((0.0, d / 2, d)))
            disc.append(tangent_norm(g, 0.0, fam.total.matrix - t_matrix(g, 0.0, d)))
        slope, _ = fit_slope(gaps, disc)
        assert abs(slope - 2.0) <= 0.3


class TestUnitarity:
    def test_identity(self):
        mu = GENERAL.evaluate(0.0)
        op = FieldOperator(np.eye(6), mu, mu)
        assert unitarity_defect(op) == 0.0

    def test_single_large_step_loses_norm(self):
        assert unitarity_defect(direct_operator(ANISO, 0.0, 1.0)) > 1e-3

    def test_discrete_isometric(self):
        g = sphere_atom_geodesic()
        assert unitarity_defect(direct_operator(g, 0.0, 1.0)) < 1e-12


class TestLinearParallelTransport:
    def test_equal_endpoints(self):
        r = linear_parallel_transport(GENERAL, 0.4, 0.4)
        np.testing.assert_array_equal(r.operator.matrix, np.eye(6))

    def test_translation_converges_at_two(self):
        r = linear_parallel_transport(translation_geodesic(), 0.0, 1.0, tol=1e-6)
        assert r.converged_n == 2
        np.testing.assert_allclose(r.operator.matrix, np.eye(12), atol=1e-12)

    def test_scaling_converges(self):
        r = linear_parallel_transport(gaussian_scaling_geodesic(), 0.0, 1.0, tol=1e-6)
        assert r.trace[-1].successive_diff < 1e-6
        assert r.trace[-1].unitarity_defect < 1e-4

    def test_cauchy_rows(self):
        r = linear_parallel_transport(anisotropic_gaussian_geodesic((1.5, 1.0)), 0.0, 1.0, tol=1e-4)
        assert all(row.cauchy_ok for row in r.trace)
        for prev, row in zip(r.trace, r.trace[1:]):
            assert row.successive_diff <= prev.width + 1e-12

    def test_first_order_refinement(self):
        r = linear_parallel_transport(anisotropic_gaussian_geodesic((1.5, 1.0)), 0.0, 1.0, tol=1e-4)
        diffs = [row.successive_diff for row in r.trace[2:]]
        ratios = np.array(diffs[1:]) / np.array(diffs[:-1])
        np.testing.assert_allclose(ratios, 0.5, atol=0.05)

    @pytest.mark.parametrize("scales,tol", [((1.5, 1.0), 1e-4), ((2.0, 1.0), 1e-4)])
    def test_refinement_independence(self, scales, tol):
        g = anisotropic_gaussian_geodesic(scales)
        r1 = linear_parallel_transport(g, 0.0, 1.0, tol=tol)
        r2 = linear_parallel_transport(g, 0.0, 1.0, tol=tol, schedule=[3 * 2**k for k in range(11)])
        assert tangent_norm(g, 0.0, r1.operator.matrix - r2.operator.matrix) <= 10 * tol

    def test_limit_isometric(self):
        r = linear_parallel_transport(anisotropic_gaussian_geodesic((1.5, 1.0)), 0.0, 1.0, tol=1e-4)
        assert r.trace[-1].unitarity_defect < 1e-4

    def test_budget_exceeded(self):
        with pytest.raises(NoConvergence) as info:
            linear_parallel_transport(ANISO, 0.0, 1.0, tol=1e-6, budget=16)
        assert [row.n for row in info.value.trace] == [1, 2, 4, 8, 16]

    def test_dyadic_schedule(self):
        assert dyadic_schedule(MAX_BUDGET) == [2**k for k in range(13)]

    def test_reverse_inverts(self):
        g = anisotropic_gaussian_geodesic((1.5, 1.0))
        fwd = linear_parallel_transport(g, 0.0, 1.0, tol=1e-4)
        back = linear_parallel_transport(g, 1.0, 0.0, tol=1e-4)
        b0 = tangent_basis(g.evaluate(0.0))
        loop = back.operator.matrix @ fwd.operator.matrix @ b0
        assert np.linalg.norm(loop - b0, 2) < 1e-3

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            linear_parallel_transport(GENERAL, 0.0, 1.0, tol=0.0)
