import numpy as np
import pytest

from wasserstein_transport.errors import DimensionMismatch, InvalidMeasure
from wasserstein_transport.experiments import anisotropic_gaussian_geodesic, gaussian_scaling_geodesic
from wasserstein_transport.geodesic import GaussianGeodesic
from wasserstein_transport.manifold import Manifold
from wasserstein_transport.measures import DiscreteMeasure, GaussianMeasure
from wasserstein_transport.oracles import brute_force_assignment, oracle_1d_transport, oracle_gaussian_transport
from wasserstein_transport.tangent import TangentField, coords

R1 = Manifold.euclidean(1)


def line(*xs):
    return DiscreteMeasure.uniform(R1, np.array(xs, dtype=float)[:, None])


class TestOracle1D:
    def test_identity(self):
        mu = line(0, 1, 4)
        plan = oracle_1d_transport(mu, mu)
        assert plan.cost() == 0.0
        np.testing.assert_array_equal(plan.rows, plan.cols)

    def test_order_preserving(self):
        plan = oracle_1d_transport(line(0, 1), line(2, 3))
        assert plan.cost() == pytest.approx(4.0)
        np.testing.assert_array_equal(plan.cols[np.argsort(plan.rows)], [0, 1])

    def test_input_order_independent(self):
        a = oracle_1d_transport(line(0, 1, 5), line(2, 3, -1))
        b = oracle_1d_transport(line(5, 0, 1), line(-1, 3, 2))
        assert a.cost() == pytest.approx(b.cost())
        ya = sorted((float(a.source.points[i, 0]), float(a.target.points[j, 0])) for i, j in zip(a.rows, a.cols))
        yb = sorted((float(b.source.points[i, 0]), float(b.target.points[j, 0])) for i, j in zip(b.rows, b.cols))
        assert ya == yb

    def test_rejects_plane(self):
        m = DiscreteMeasure.uniform(Manifold.euclidean(2), [[0.0, 0.0]])
        with pytest.raises(DimensionMismatch):
            oracle_1d_transport(m, m)


class TestBruteForce:
    def test_known(self):
        cost, perm = brute_force_assignment(line(0, 1), line(2, 3))
        assert cost == pytest.approx(4.0)
        np.testing.assert_array_equal(perm, [0, 1])

    def test_needs_uniform_equal_size(self):
        with pytest.raises(InvalidMeasure):
            brute_force_assignment(line(0, 1), line(2))


class TestGaussianOracle:
    def test_translation_constant(self):
        g = GaussianGeodesic(GaussianMeasure(np.zeros(2), np.eye(2)), GaussianMeasure([1.0, 2.0], np.eye(2)))
        v = TangentField(g.evaluate(0.0), linear=np.zeros((2, 2)), const=[0.3, -1.0])
        out = oracle_gaussian_transport(g, 0.0, 1.0, v, step=1e-2)
        np.testing.assert_allclose(out.const, v.const)
        np.testing.assert_allclose(out.linear, 0, atol=1e-15)

    def test_zero(self):
        g = anisotropic_gaussian_geodesic()
        out = oracle_gaussian_transport(g, 0.0, 1.0, TangentField(g.evaluate(0.0)), step=1e-2)
        assert out.norm() == 0.0

    def test_isotropic_symmetric_norm(self):
        g = gaussian_scaling_geodesic()
        v = TangentField(g.evaluate(0.0), linear=[[1.0, 0.5], [0.5, -2.0]])
        out = oracle_gaussian_transport(g, 0.0, 1.0, v)
        np.testing.assert_allclose(out.linear, out.linear.T, atol=1e-15)
        assert out.norm() == pytest.approx(v.norm(), rel=1e-6)

    def test_anisotropic_norm_preserved(self):
        g = anisotropic_gaussian_geodesic()
        v = TangentField(g.evaluate(0.0), linear=[[1.0, 0.5], [0.5, -2.0]], const=[1.0, 0.0])
        out = oracle_gaussian_transport(g, 0.0, 1.0, v, step=1e-3)
        assert out.norm() == pytest.approx(v.norm(), rel=1e-10)

    @pytest.mark.slow
    def test_step_halving(self):
        g = anisotropic_gaussian_geodesic()
        v = TangentField(g.evaluate(0.0), linear=[[1.0, 0.5], [0.5, -2.0]])
        a = oracle_gaussian_transport(g, 0.0, 1.0, v)
        b = oracle_gaussian_transport(g, 0.0, 1.0, v, step=5e-5)
        assert np.max(np.abs(coords(a) - coords(b))) < 1e-8

    def test_dimension_mismatch(self):
        g = anisotropic_gaussian_geodesic()
        with pytest.raises(DimensionMismatch):
            oracle_gaussian_transport(g, 0.0, 1.0, TangentField(GaussianMeasure([0.0], [[1.0]])))
