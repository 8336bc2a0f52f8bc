import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpamr.geometry import (BarComponent, EmptyUnionError, ProjectionParams, bars_to_array,
                            composite_density, effective_density, ersatz_scale, ks_max,
                            ks_upper, projected_density_2d, projected_density_3d,
                            signed_distance)
from oracles import (ball_fraction_mc, disc_fraction_mc, ks_mpmath,
                     stadium_signed_distance_bruteforce)

# frozen oracle outputs (see oracles.py)
RHO2D_HALF = 0.19550  # quasi Monte Carlo, 2**20 points: 0.195487
KS_10_PAIR = 0.9306898218339271  # 50-digit evaluation of ln((e^10 + 1)/2)/10


def bar(p0, p1, w, a=1.0):
    return BarComponent(p0, p1, w, a)


class TestBarComponent:
    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            bar((1, 1), (1, 1), 1.0)

    @pytest.mark.parametrize("w,a", [(0.0, 0.5), (-1.0, 0.5), (1.0, -0.1), (1.0, 1.5)])
    def test_rejects_bad_values(self, w, a):
        with pytest.raises(ValueError):
            bar((0, 0), (1, 0), w, a)

    def test_array_round_trip(self):
        b = bar((0.5, 1), (2, 3), 0.7, 0.3)
        assert BarComponent.from_array(b.as_array()) == b
        assert bars_to_array([b, b]).shape == (2, 6)


class TestSignedDistance:
    def test_midpoint(self):
        assert signed_distance([[2, 0]], [bar((0, 0), (4, 0), 2)])[0, 0] == pytest.approx(-1.0)

    def test_on_boundary(self):
        b = [bar((0, 0), (4, 0), 2)]
        pts = [[2, 1], [5, 0], [4 + np.sqrt(0.5), np.sqrt(0.5)]]
        np.testing.assert_allclose(signed_distance(pts, b).ravel(), 0.0, atol=1e-14)

    def test_example_point(self):
        d = signed_distance([[2, 3]], [bar((0, 0), (4, 0), 2)])[0, 0]
        assert d == pytest.approx(2.0, abs=1e-12)

    def test_against_bruteforce(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p0, p1 = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            w = rng.uniform(0.2, 1.5)
            x = rng.uniform(-3, 3, 2)
            ref = stadium_signed_distance_bruteforce(x, p0, p1, w)
            d = signed_distance([x], [bar(p0, p1, w)])[0, 0]
            assert d == pytest.approx(ref, abs=1e-4)

    def test_gradient_fd(self):
        rng = np.random.default_rng(0)
        z = np.column_stack([rng.uniform(0, 4, (3, 4)), rng.uniform(0.3, 1, 3), np.ones(3)])
        x = rng.uniform(0, 4, (20, 2))
        d, g = signed_distance(x, z, return_gradient=True)
        h = 1e-6
        for j in range(5):
            zp, zm = z.copy(), z.copy()
            zp[:, j] += h
            zm[:, j] -= h
            fd = (signed_distance(x, zp) - signed_distance(x, zm)) / (2 * h)
            np.testing.assert_allclose(g[..., j], fd, atol=1e-7)

    def test_gradient_zero_on_segment(self):
        _, g = signed_distance([[1, 0]], [bar((0, 0), (2, 0), 1)], return_gradient=True)
        np.testing.assert_array_equal(g[0, 0, :4], 0.0)


class TestProjectedDensity:
    def test_2d_values(self):
        np.testing.assert_allclose(projected_density_2d([0, 1, -1, 2, -2], 1.0),
                                   [0.5, 0, 1, 0, 1], atol=1e-15)
        assert projected_density_2d(0.5, 1.0) == pytest.approx(RHO2D_HALF, abs=1e-5)

    def test_2d_against_monte_carlo(self):
        assert projected_density_2d(0.5, 1.0) == pytest.approx(disc_fraction_mc(0.5, 1.0), abs=1e-3)

    def test_3d_values(self):
        assert projected_density_3d(0.5, 1.0) == 0.15625
        assert projected_density_3d(-1.0, 1.0) == 1.0
        assert projected_density_3d(0.0, 1.0) == 0.5
        assert projected_density_3d(0.5, 1.0) == pytest.approx(ball_fraction_mc(0.5, 1.0), abs=1e-3)

    def test_2d_derivative_at_zero(self):
        _, dr = projected_density_2d(0.0, 1.0, return_derivative=True)
        assert dr == pytest.approx(-2 / np.pi, rel=1e-14)
        h = 1e-6
        fd = (projected_density_2d(h, 1.0) - projected_density_2d(-h, 1.0)) / (2 * h)
        assert fd == pytest.approx(-2 / np.pi, rel=1e-8)

    @pytest.mark.parametrize("fun", [projected_density_2d, projected_density_3d])
    def test_continuous_at_window_edge(self, fun):
        R = 0.7
        for edge in (R, -R):
            inside = fun(edge * (1 - 1e-13), R)
            outside = fun(edge * (1 + 1e-13), R)
            assert abs(inside - outside) < 1e-12

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 2.0))
    def test_monotone(self, d1, d2, R):
        lo, hi = min(d1, d2), max(d1, d2)
        assert projected_density_2d(lo, R) >= projected_density_2d(hi, R)
        assert projected_density_3d(lo, R) >= projected_density_3d(hi, R) - 1e-15


def test_effective_density():
    assert effective_density(1.0, 0.0, 3) == 0.0
    assert effective_density(0.5, 1.0, 3) == 0.5
    assert effective_density(1.0, 0.7, 3) == pytest.approx(0.343, abs=1e-15)


def test_ersatz_scale():
    assert ersatz_scale(0.0, 1e-4) == 1e-4
    assert ersatz_scale(1.0, 1e-4) == 1.0
    assert ersatz_scale(0.5, 1e-4) == pytest.approx(0.50005, abs=1e-15)


class TestKS:
    def test_pair(self):
        assert ks_max([1.0, 0.0], 10) == pytest.approx(KS_10_PAIR, abs=1e-14)
        assert ks_max([1.0, 0.0], 10) == pytest.approx(ks_mpmath([1.0, 0.0], 10), abs=1e-14)

    def test_uniform_and_single(self):
        assert ks_max(np.full(7, 0.3), 10) == pytest.approx(0.3, abs=1e-15)
        assert ks_max([0.42], 123.0) == pytest.approx(0.42, abs=1e-15)

    def test_empty(self):
        with pytest.raises(EmptyUnionError):
            ks_max(np.zeros(0), 10)
        with pytest.raises(EmptyUnionError):
            composite_density([[0, 0]], np.zeros((0, 6)), ProjectionParams())

    def test_no_overflow(self):
        v = ks_max([1000.0, 999.0], 100.0)
        assert np.isfinite(v) and v <= 1000.0

    def test_weights_are_gradient(self):
        x = np.array([0.3, 0.9, 0.5])
        _, w = ks_max(x, 10, return_weights=True)
        h = 1e-7
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            assert (ks_max(x + e, 10) - ks_max(x - e, 10)) / (2 * h) == pytest.approx(w[i], rel=1e-6)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(1, 100))
    def test_bounds(self, values, k):
        v = np.array(values)
        ks = ks_max(v, k)
        assert ks <= v.max() + 1e-12
        assert ks >= v.max() - np.log(len(v)) / k - 1e-12
        up = ks_upper(v, k)
        assert v.max() - 1e-12 <= up <= v.max() + np.log(len(v)) / k + 1e-12


class TestCompositeDensity:
    params = ProjectionParams(radius=0.5, penalty=3.0, ks=10.0)

    def test_deep_inside(self):
        assert composite_density([[2, 0]], [bar((0, 0), (4, 0), 3)], self.params)[0] == 1.0

    def test_overlapping_identical(self):
        b = bar((0, 0), (4, 0), 3)
        assert composite_density([[2, 0]], [b, b], self.params)[0] == pytest.approx(1.0, abs=1e-15)

    def test_one_bar_absent(self):
        bars = [bar((0, 0), (4, 0), 3), bar((10, 10), (12, 10), 1)]
        assert composite_density([[2, 0]], bars, self.params)[0] == pytest.approx(KS_10_PAIR, abs=1e-12)

    def test_far_outside_zero_gradient(self):
        bars = [bar((0, 0), (4, 0), 1), bar((0, 3), (4, 3), 1)]
        rho, g = composite_density([[20, 20]], bars, self.params, return_gradient=True)
        assert rho[0] == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_gradient_fd(self):
        rng = np.random.default_rng(11)
        z = np.column_stack([rng.uniform(0, 3, (3, 4)), rng.uniform(0.5, 1.5, 3),
                             rng.uniform(0.3, 1.0, 3)])
        x = rng.uniform(0, 3, (40, 2))
        R = rng.uniform(0.2, 0.6, 40)
        _, g = composite_density(x, z, self.params, radius=R, return_gradient=True)
        h = 1e-6
        fd = np.zeros_like(g)
        for i in range(3):
            for j in range(6):
                zp, zm = z.copy(), z.copy()
                zp[i, j] += h
                zm[i, j] -= h
                fd[:, i, j] = (composite_density(x, zp, self.params, radius=R)
                               - composite_density(x, zm, self.params, radius=R)) / (2 * h)
        err = np.abs(fd - g) / np.maximum(np.abs(g).max(), 1e-30)
        assert err.max() <= 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.floats(-5, 5), st.floats(-5, 5))
    def test_rigid_motion_invariance(self, theta, tx, ty):
        rng = np.random.default_rng(1)
        z = np.column_stack([rng.uniform(0, 3, (4, 4)), rng.uniform(0.5, 1.5, 4),
                             rng.uniform(0.3, 1.0, 4)])
        x = rng.uniform(0, 3, (30, 2))
        c, s = np.cos(theta), np.sin(theta)
        Q = np.array([[c, -s], [s, c]])
        t = np.array([tx, ty])
        z2 = z.copy()
        z2[:, 0:2] = z[:, 0:2] @ Q.T + t
        z2[:, 2:4] = z[:, 2:4] @ Q.T + t
        a = composite_density(x, z, self.params)
        b = composite_density(x @ Q.T + t, z2, self.params)
        np.testing.assert_allclose(a, b, atol=1e-12)
