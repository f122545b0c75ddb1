import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magtopo.exceptions import ContrastError, ShapeError
from magtopo.materials import NU0
from magtopo.polarization import (disk, ellipse, ellipse_polarization_exact, panelize,
                                  polarization_matrix, polygon, solve_density)

AIR_IRON = (NU0, NU0 / 5100)
CONTRASTS = [(2.0, 1.0), AIR_IRON]


def disk_value(nu0, nu1):
    return 2 * math.pi * (nu0 - nu1) / (nu0 + nu1)


def rotation(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def regular_polygon(m, r=1.0, phase=0.1):
    t = phase + 2 * math.pi * np.arange(m) / m
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


class TestPanelize:
    def test_disk_area(self):
        s = disk(64)
        assert s.area == pytest.approx(0.5 * 64 * math.sin(2 * math.pi / 64), rel=1e-14)
        assert abs(s.area / math.pi - 1) < 2e-3

    def test_degenerate_ellipse_is_disk(self):
        a, b = ellipse(1.0, 1.0, n=64), disk(64)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.normals, b.normals)

    def test_clockwise_polygon_reoriented(self):
        sq = [(-1, -1), (-1, 1), (1, 1), (1, -1)]
        with pytest.warns(UserWarning, match="reoriented"):
            s = polygon(sq, 64)
        assert s.area == pytest.approx(4.0)

    def test_self_intersecting(self):
        with pytest.raises(ShapeError, match="self-intersecting"):
            polygon([(-1, -1), (1, 1), (1, -1), (-1, 1)], 64)

    def test_origin_outside(self):
        with pytest.raises(ShapeError, match="origin"):
            polygon([(1, 1), (2, 1), (2, 2), (1, 2)], 64)

    def test_too_few_panels(self):
        with pytest.raises(ShapeError):
            disk(8)

    @pytest.mark.parametrize("spec", ["disk", "ellipse:2,1", "ellipse:2,1,0.3",
                                      "polygon:-1,-1;1,-1;1,1;-1,1"])
    def test_specs(self, spec):
        s = panelize(spec, 64)
        assert s.n_panels == 64
        assert abs(s.divergence_area() / s.area - 1) < 1e-6

    @pytest.mark.parametrize("spec", ["circle", "ellipse:2", "ellipse:a,b", "polygon:1,2;3"])
    def test_bad_specs(self, spec):
        with pytest.raises(ShapeError):
            panelize(spec, 64)

    @settings(max_examples=40, deadline=None)
    @given(a=st.floats(0.2, 5), b=st.floats(0.2, 5), angle=st.floats(-3.2, 3.2),
           n=st.integers(64, 300))
    def test_moment_identity(self, a, b, angle, n):
        s = ellipse(a, b, angle, n)
        assert np.abs(s.moment_matrix() - s.area * np.eye(2)).max() <= 5e-3 * s.area
        assert abs(s.divergence_area() / s.area - 1) < 1e-6
        # closed counterclockwise polyline with unit outward normals
        np.testing.assert_allclose(np.linalg.norm(s.normals, axis=1), 1.0)
        assert s.area > 0


class TestDensity:
    @pytest.mark.parametrize("nu0,nu1", CONTRASTS)
    def test_disk_closed_form(self, nu0, nu1):
        s = disk(256)
        g = np.array([0.6, -0.8])
        q = solve_density(s, nu0, nu1, g).q
        exact = 2 * (nu0 - nu1) / (nu0 + nu1) * (s.normals @ g)
        assert np.abs(q - exact).max() <= 1e-3 * np.abs(exact).max()

    def test_zero_data(self):
        d = solve_density(ellipse(2, 1, n=64), 2.0, 1.0, [0.0, 0.0])
        assert np.all(d.q == 0)

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(0.3, 3), b=st.floats(0.3, 3), gx=st.floats(-1, 1), gy=st.floats(-1, 1),
           k=st.sampled_from([1.5, 3.0, 100.0, 5100.0]))
    def test_zero_mean(self, a, b, gx, gy, k):
        s = ellipse(a, b, n=96)
        d = solve_density(s, k, 1.0, [gx, gy])
        assert abs(np.sum(d.q * s.lengths)) <= 1e-10 * max(np.linalg.norm(d.q), 1e-300)
        assert d.residual <= 1e-10

    def test_contrast_error(self):
        with pytest.raises(ContrastError):
            solve_density(disk(32), 2.0, 2.0, [1, 0])


class TestPolarization:
    @pytest.mark.parametrize("nu0,nu1", CONTRASTS)
    def test_disk(self, nu0, nu1):
        P = polarization_matrix(disk(256), nu0, nu1).matrix
        ref = disk_value(nu0, nu1)
        assert np.abs(np.diag(P) / ref - 1).max() < 1e-3
        assert abs(P[0, 1]) <= 1e-6 * np.linalg.norm(P)
        assert abs(P[1, 0]) <= 1e-6 * np.linalg.norm(P)

    def test_disk_two_one_value(self):
        P = polarization_matrix(disk(256), 2.0, 1.0).matrix
        np.testing.assert_allclose(P, 2 * math.pi / 3 * np.eye(2), rtol=1e-3, atol=1e-12)

    def test_disk_convergence_order(self):
        errs = [abs(polarization_matrix(disk(n), 2.0, 1.0).matrix[0, 0] / disk_value(2, 1) - 1)
                for n in (64, 128, 256)]
        assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5

    def test_contrast_sweep_to_zero(self):
        s = ellipse(2, 1, n=128)
        norms = [np.linalg.norm(polarization_matrix(s, 1.0 + e, 1.0).matrix)
                 for e in (1.0, 0.1, 0.01, 1e-3, 1e-5)]
        assert np.all(np.diff(norms) < 0)
        assert norms[-1] < 1e-4

    def test_ellipse_self_convergence(self):
        Ps = [polarization_matrix(ellipse(2, 1, n=n), 2.0, 1.0).matrix for n in (64, 128, 256, 512)]
        ch = [np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(Ps, Ps[1:])]
        assert ch[0] / ch[1] >= 2 and ch[1] / ch[2] >= 2

    @pytest.mark.parametrize("a,b,nu0,nu1", [(2, 1, 2.0, 1.0), (1, 3, 10.0, 1.0), (2, 1, *AIR_IRON)])
    def test_ellipse_closed_form(self, a, b, nu0, nu1):
        P = polarization_matrix(ellipse(a, b, n=512), nu0, nu1).matrix
        ref = ellipse_polarization_exact(a, b, nu0, nu1)
        assert np.abs(P - ref).max() <= 1e-3 * np.abs(ref).max()

    @settings(max_examples=10, deadline=None)
    @given(alpha=st.floats(0, 2 * math.pi))
    def test_rotational_equivariance(self, alpha):
        P0 = polarization_matrix(ellipse(2, 1, 0.0, 256), 3.0, 1.0).matrix
        Pa = polarization_matrix(ellipse(2, 1, alpha, 256), 3.0, 1.0).matrix
        R = rotation(alpha)
        assert np.abs(Pa - R @ P0 @ R.T).max() <= 1e-3 * np.linalg.norm(P0)

    @pytest.mark.parametrize("shape", [disk(128), ellipse(2, 1, 0.4, 128),
                                       polygon(regular_polygon(6), 120),
                                       polygon(regular_polygon(4), 128)])
    def test_symmetric(self, shape):
        P = polarization_matrix(shape, 4.0, 1.0).matrix
        assert abs(P[0, 1] - P[1, 0]) <= 1e-6 * np.linalg.norm(P)

    def test_reports_moment_error(self):
        pm = polarization_matrix(ellipse(2, 1, n=128), 2.0, 1.0)
        assert pm.moment_error <= 5e-3
        assert np.asarray(pm).shape == (2, 2)

    def test_square_between_inscribed_and_circumscribed_disks(self):
        # monotonicity of P in the domain for nu0 > nu1
        sq = polarization_matrix(polygon([(-1, -1), (1, -1), (1, 1), (-1, 1)], 256), 2.0, 1.0).matrix
        inner = disk_value(2, 1)
        outer = disk_value(2, 1) * 2
        assert inner < sq[0, 0] < outer
        assert abs(sq[0, 0] - sq[1, 1]) <= 1e-6 * sq[0, 0]
