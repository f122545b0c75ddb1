import math

import numpy as np
import pytest

from _oracles import ls_fit, pearson, uniform_band_problem
from magtopo.exceptions import UnsupportedModeError
from magtopo.fem import solve_state
from magtopo.materials import LINEAR, NONLINEAR, DesignState
from magtopo.mesh import AIR, DESIGN, Mesh
from magtopo.objective import TargetCurve, build_gap_circle, objective, solve_adjoint
from magtopo.polarization import ellipse, polarization_matrix
from magtopo.sensitivity import (disk_polarization, interior_design_mask, onoff_sensitivities,
                                 sensitivity_fd_oracle, topological_derivative_field)


def reference_triangle():
    return Mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], [DESIGN], [(0, 1), (1, 2), (2, 0)], [1, 1, 1])


def solved(mesh, model, gap, target, mode):
    st_ = DesignState(mesh, mode=mode)
    u = solve_state(mesh, model, st_).u
    p = solve_adjoint(mesh, model, st_, u, gap, target).p
    return st_, u, p


class TestClosedForms:
    def test_orthogonal_gradients(self):
        mesh = reference_triangle()
        x, y = mesh.nodes.T
        s = onoff_sensitivities(mesh, DesignState(mesh), x, y)
        assert s.onoff[0] == 0.0

    def test_parallel_gradients(self):
        mesh = reference_triangle()
        x = mesh.nodes[:, 0]
        s = onoff_sensitivities(mesh, DesignState(mesh), 2 * x, 3 * x)
        assert s.onoff[0] == pytest.approx(3.0, rel=1e-15)

    def test_topo_disk_substitution(self):
        mesh = reference_triangle()
        x = mesh.nodes[:, 0]
        G = topological_derivative_field(mesh, x, x, 2.0, 1.0)
        assert G[0] == pytest.approx(2 * math.pi / 3, rel=1e-14)

    def test_topo_zero_contrast(self, coarse_mesh, rng):
        u, p = rng.normal(size=(2, coarse_mesh.n_nodes))
        assert np.all(topological_derivative_field(coarse_mesh, u, p, 3.0, 3.0) == 0)

    def test_topo_nonlinear_unsupported(self, coarse_mesh):
        z = np.zeros(coarse_mesh.n_nodes)
        with pytest.raises(UnsupportedModeError):
            topological_derivative_field(coarse_mesh, z, z, 2.0, 1.0, mode=NONLINEAR)

    def test_length_mismatch(self, coarse_mesh):
        with pytest.raises(ValueError):
            onoff_sensitivities(coarse_mesh, DesignState(coarse_mesh), np.zeros(3), np.zeros(3))

    def test_custom_matrix_equals_disk(self, coarse_mesh, rng):
        u, p = rng.normal(size=(2, coarse_mesh.n_nodes))
        a = topological_derivative_field(coarse_mesh, u, p, 2.0, 1.0, "disk")
        b = topological_derivative_field(coarse_mesh, u, p, 2.0, 1.0, disk_polarization(2.0, 1.0))
        np.testing.assert_array_equal(a, b)

    def test_one_value_per_design_element(self, coarse_mesh, model, coarse_gap, target):
        st_, u, p = solved(coarse_mesh, model, coarse_gap, target, LINEAR)
        s = onoff_sensitivities(coarse_mesh, st_, u, p)
        np.testing.assert_array_equal(s.elements, coarse_mesh.design_elements)
        assert np.all(np.isfinite(s.onoff))


class TestFiniteDifferenceOracle:
    @pytest.mark.parametrize("mode,tol", [(LINEAR, 1e-3), (NONLINEAR, 5e-3)])
    def test_matches_adjoint_on_largest(self, coarse_mesh, model, coarse_gap, target, mode, tol):
        st_, u, p = solved(coarse_mesh, model, coarse_gap, target, mode)
        s = onoff_sensitivities(coarse_mesh, st_, u, p)
        for k in np.argsort(-np.abs(s.onoff))[:5]:
            fd = sensitivity_fd_oracle(coarse_mesh, model, st_, int(s.elements[k]), 1e-4 * model.nu1,
                                       coarse_gap, target)
            assert abs(fd - s.onoff[k]) <= tol * abs(s.onoff[k])

    def test_step_consistency(self, coarse_mesh, model, coarse_gap, target):
        st_, u, p = solved(coarse_mesh, model, coarse_gap, target, LINEAR)
        s = onoff_sensitivities(coarse_mesh, st_, u, p)
        k = int(np.argmax(np.abs(s.onoff)))
        e = int(s.elements[k])
        fd = [sensitivity_fd_oracle(coarse_mesh, model, st_, e, h * model.nu1, coarse_gap, target)
              for h in (1e-2, 1e-3, 1e-4)]
        # truncation is below rounding at these steps: all estimates agree
        assert np.ptp(fd) <= 1e-6 * abs(fd[0])
        # at larger steps the error is visibly quadratic in h
        errs = [abs(sensitivity_fd_oracle(coarse_mesh, model, st_, e, h * model.nu1, coarse_gap, target)
                    - s.onoff[k]) for h in (40.0, 20.0, 10.0)]
        np.testing.assert_allclose([errs[0] / errs[1], errs[1] / errs[2]], 4.0, rtol=0.05)

    def test_zero_load(self, coarse_mesh, model, coarse_gap, target):
        m = coarse_mesh.with_tags(np.where(coarse_mesh.magnet_mask, AIR, coarse_mesh.tags), {})
        st_ = DesignState(m)
        e = int(m.design_elements[0])
        assert sensitivity_fd_oracle(m, model, st_, e, 1e-4 * model.nu1, coarse_gap, target) == 0.0

    def test_sign_agreement(self, coarse_mesh, model, coarse_gap, target):
        st_, u, p = solved(coarse_mesh, model, coarse_gap, target, LINEAR)
        s = onoff_sensitivities(coarse_mesh, st_, u, p)
        big = np.abs(s.onoff) > np.percentile(np.abs(s.onoff), 25)
        agree = []
        for k in np.flatnonzero(big):
            fd = sensitivity_fd_oracle(coarse_mesh, model, st_, int(s.elements[k]), 1e-4 * model.nu1,
                                       coarse_gap, target)
            agree.append(np.sign(fd) == np.sign(s.onoff[k]))
        assert np.mean(agree) >= 0.95


def test_scaling_covariance(coarse_mesh, model, coarse_gap):
    # u is linear in M; p is linear in the misfit, so the target scales with M as well
    c = 2.5
    base = TargetCurve()
    mesh_c = coarse_mesh.with_magnets({k: (c * mx, c * my) for k, (mx, my) in coarse_mesh.magnets.items()})
    out = []
    for mesh, tgt in ((coarse_mesh, base), (mesh_c, TargetCurve(c * base.amplitude, base.frequency))):
        st_, u, p = solved(mesh, model, coarse_gap, tgt, LINEAR)
        s = onoff_sensitivities(mesh, st_, u, p)
        G = topological_derivative_field(mesh, u, p, model.nu0, model.nu1)
        out.append((u, p, s.onoff, G))
    (u1, p1, s1, g1), (uc, pc, sc, gc) = out
    np.testing.assert_allclose(uc, c * u1, rtol=1e-8, atol=1e-8 * np.abs(uc).max())
    np.testing.assert_allclose(pc, c * p1, rtol=1e-8, atol=1e-8 * np.abs(pc).max())
    np.testing.assert_allclose(sc, c * c * s1, rtol=1e-8, atol=1e-8 * np.abs(sc).max())
    np.testing.assert_allclose(gc, c * c * g1, rtol=1e-8, atol=1e-8 * np.abs(gc).max())


@pytest.fixture(scope="module")
def fields(model):
    mesh = uniform_band_problem()
    gap = build_gap_circle(mesh, 0.0525, 720)
    st_, u, p = solved(mesh, model, gap, TargetCurve(), LINEAR)
    return mesh, u, p, onoff_sensitivities(mesh, st_, u, p)


class TestEquivalence:
    def test_uniform_areas(self, fields):
        mesh = fields[0]
        a = mesh.areas[mesh.design_elements]
        assert np.ptp(a) <= 1e-12 * a.mean()

    def test_disk_constant_factor(self, fields, model):
        mesh, u, p, s = fields
        G = topological_derivative_field(mesh, u, p, model.nu0, model.nu1)
        mask = interior_design_mask(mesh)
        area = mesh.areas[mesh.design_elements][0]
        c, rel = ls_fit(s.onoff[mask], G[mask] * area)
        assert rel <= 0.05
        assert pearson(s.onoff[mask], G[mask]) > 0.99
        expected = 1.0 / (model.nu1 * 2 * math.pi * (model.nu0 - model.nu1) / (model.nu0 + model.nu1))
        assert c == pytest.approx(expected, rel=1e-10)

    def test_elongated_inclusion_breaks_proportionality(self, fields, model):
        # an anisotropic P is not a multiple of the identity, so only the disk gives a
        # global constant factor
        mesh, u, p, s = fields
        P = polarization_matrix(ellipse(4.0, 0.25, n=256), model.nu0, model.nu1)
        G = topological_derivative_field(mesh, u, p, model.nu0, model.nu1, P)
        mask = interior_design_mask(mesh)
        _, rel = ls_fit(s.onoff[mask], G[mask])
        assert rel > 1e-3
