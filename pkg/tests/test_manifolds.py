"""Charts, frames, flow-outs, and the Lagrangian/eikonal residual checks."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagflow.manifolds import (
    BesselCylinder,
    GlancingDetectedError,
    ManifoldChart,
    NoIntersectionError,
    chart_to_csv,
    eikonal_residual,
    flow_out,
    flow_out_circle,
    flow_out_energy,
    lagrangian_residual,
    plane_section,
    sphere_direction,
    sphere_frame,
    symmetry_relation_residual,
    vertical_fiber,
    vertical_fiber_polar,
)
from lagflow.phase_space import (
    PhasePoint,
    PolynomialField,
    make_hamiltonian,
    symplectic_product,
)

RHO_RADIAL = PolynomialField.parse("1+x^2+y^2")


class TestSphereFrames:
    @pytest.mark.parametrize("n,psi", [(2, [0.7]), (2, [4.0]), (3, [1.1, 0.4]),
                                       (3, [2.0, 5.5])])
    def test_orthonormal_direct(self, n, psi):
        w, perp = sphere_frame(psi, n)
        basis = np.vstack([w, perp])
        assert np.allclose(basis @ basis.T, np.eye(n), atol=1e-12)
        assert np.linalg.det(basis) == pytest.approx(1.0, abs=1e-12)


class TestBesselCylinder:
    def test_point_values(self):
        cyl = BesselCylinder(2)
        z = cyl.point(2.0, [0.0])
        assert np.allclose(z.x, [2, 0]) and np.allclose(z.p, [1, 0])

    def test_axis_point(self):
        cyl = BesselCylinder(2)
        z = cyl.point(0.0, [1.234])
        assert np.allclose(z.x, 0.0)
        assert np.linalg.norm(z.p) == pytest.approx(1.0)

    def test_three_dimensional_point(self):
        cyl = BesselCylinder(3)
        z = cyl.point(1.0, [math.pi / 2, 0.0])
        assert np.allclose(z.x, z.p, atol=1e-15)
        assert np.linalg.norm(z.p) == pytest.approx(1.0)

    def test_offset_cylinder(self):
        cyl = BesselCylinder(2, offset=[1.5, 0.0])
        z = cyl.point(2.0, [math.pi])
        assert np.allclose(z.x, [-0.5, 0.0])
        assert np.allclose(z.p, [-1.0, 0.0])

    def test_tangent_frame_degenerate_axis(self):
        frame = BesselCylinder(2).tangent_frame(0.0, [0.3])
        w, perp = sphere_frame([0.3], 2)
        assert np.allclose(frame[0].x, w) and np.allclose(frame[0].p, 0)
        assert np.allclose(frame[1].x, 0) and np.allclose(frame[1].p, perp[0])

    def test_tangent_frame_explicit(self):
        frame = BesselCylinder(2).tangent_frame(3.0, [0.0])
        assert np.allclose(frame[1].x, [0, 3]) and np.allclose(frame[1].p, [0, 1])
        assert symplectic_product(frame[0], frame[1]) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("n,phi,psi", [(2, 1.3, [0.9]), (3, -0.7, [1.0, 2.0]),
                                           (2, 0.0, [2.2])])
    def test_frame_rank_and_isotropy(self, n, phi, psi):
        frame = BesselCylinder(n).tangent_frame(phi, psi)
        G = np.array([[float(np.dot(a.as_array(), b.as_array())) for b in frame]
                      for a in frame])
        assert np.linalg.matrix_rank(G, tol=1e-10) == n
        for i in range(n):
            for j in range(n):
                assert abs(symplectic_product(frame[i], frame[j])) <= 1e-13


@settings(max_examples=40, deadline=None)
@given(phi=st.floats(-5, 5), psi=st.floats(0, 2 * math.pi))
def test_unit_momentum_everywhere(phi, psi):
    z = BesselCylinder(2).point(phi, [psi])
    assert np.linalg.norm(z.p) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(z.x, phi * z.p, atol=1e-12)


class TestFlowOut:
    def test_translation_flow_out(self):
        cyl = BesselCylinder(2).chart(phi_range=(-2, 2))
        H = make_hamiltonian("pn", 2)
        lam = flow_out(cyl, H, 2.0, tol=1e-11)
        u = np.array([1.2, 0.8, 1.5])
        z = lam.embed(u)
        w = sphere_direction([0.8], 2)
        assert np.allclose(z.x[:2], 1.2 * w + 1.5 * np.array([0, 1]), atol=1e-10)
        assert np.allclose(z.p[:2], w, atol=1e-10)
        assert z.x[2] == pytest.approx(1.5)          # time slot
        assert -z.p[2] == pytest.approx(w[1])        # energy slot

    def test_restriction_at_zero_time(self):
        cyl = BesselCylinder(2)
        chart0 = cyl.chart(phi_range=(0.5, 2.0))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        lam = flow_out(chart0, H, 1.0, tol=1e-11)
        u = np.array([1.0, 0.4, 0.0])
        z = lam.embed(u)
        z0 = cyl.point(1.0, [0.4])
        assert np.allclose(z.x[:2], z0.x, atol=1e-14)
        assert np.allclose(z.p[:2], z0.p, atol=1e-14)

    def test_degree_one_eikonal_is_time_independent(self):
        chart0 = BesselCylinder(2).chart(phi_range=(0.5, 2.0))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        lam = flow_out(chart0, H, 1.0, tol=1e-11)
        for t in (0.0, 0.3, 0.9):
            assert lam.eikonal(np.array([1.1, 0.4, t])) == pytest.approx(
                1.1, abs=1e-9)

    def test_free_flow_actions(self):
        # spatial action phi + 2 E t; space-time primitive phi + E t (E = 1)
        chart0 = BesselCylinder(2).chart(phi_range=(0.5, 2.0))
        H = make_hamiltonian("free", 2)
        lam = flow_out(chart0, H, 1.0, tol=1e-11)
        u = np.array([1.0, 0.3, 0.7])
        assert lam.extras["spatial_action"](u) == pytest.approx(2.4, abs=1e-9)
        assert lam.eikonal(u) == pytest.approx(1.7, abs=1e-9)

    def test_lagrangian_residual_bessel(self, rng):
        chart = BesselCylinder(2).chart(phi_range=(-2, 2))
        assert lagrangian_residual(chart, samples=60, rng=rng) <= 1e-8

    def test_lagrangian_residual_flow_out(self, rng):
        chart0 = BesselCylinder(2).chart(phi_range=(0.5, 2.0))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        lam = flow_out(chart0, H, 1.0, tol=1e-11)
        assert lagrangian_residual(lam, samples=25, rng=rng) <= 1e-6

    def test_broken_chart_detected(self, rng):
        base = BesselCylinder(2).chart(phi_range=(-2, 2))

        def broken_embed(u):
            z = base.embed(u)
            return PhasePoint(z.x, z.p + np.array([1e-3 * math.sin(3 * u[1]), 0]))

        broken = ManifoldChart(dim=2, param_names=base.param_names,
                               embed=broken_embed, domain=base.domain,
                               n_spatial=2)
        assert lagrangian_residual(broken, samples=60, rng=rng) >= 1e-4

    def test_eikonal_residual_bessel(self, rng):
        chart = BesselCylinder(2).chart(phi_range=(-2, 2))
        assert eikonal_residual(chart, samples=40, rng=rng) <= 1e-6


class TestEnergyFlowOut:
    def test_model_pair(self):
        # fiber at the origin flowed by the last momentum at zero energy
        fib = vertical_fiber([0.0, 0.0], 2)
        H = make_hamiltonian("pn", 2)
        ec = flow_out_energy(fib, H, 0.0, 2.0, solve_axis=1)
        z = ec.embed(np.array([0.5, 1.2]))
        assert np.allclose(z.x, [0.0, 1.2], atol=1e-12)
        assert np.allclose(z.p, [0.5, 0.0], atol=1e-12)

    def test_energy_is_pinned(self):
        chart0 = BesselCylinder(2).chart(phi_range=(0.2, 2.5))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        ec = flow_out_energy(chart0, H, 0.5, 0.8, tol=1e-11)
        for psi in (0.0, 1.0, 4.0):
            for t in (0.0, 0.5):
                z = ec.embed(np.array([psi, t]))
                assert H.value(z) == pytest.approx(0.5, abs=1e-8)

    def test_radial_reduction(self):
        # for a radial factor the solved radius depends on E alone
        chart0 = BesselCylinder(2).chart(phi_range=(0.2, 2.5))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        ec = flow_out_energy(chart0, H, 0.5, 0.8, tol=1e-11)
        roots = [ec.extras["root"](np.array([psi]))[0] for psi in (0.3, 2.0, 5.0)]
        assert np.allclose(roots, 1.0, atol=1e-10)

    def test_empty_intersection(self):
        chart0 = BesselCylinder(2).chart(phi_range=(0.2, 2.5))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        # the restriction 1/(1+phi^2) stays below 1 on the box
        with pytest.raises(NoIntersectionError):
            flow_out_energy(chart0, H, 2.0, 0.5).embed(np.array([0.3, 0.1]))

    def test_glancing_detected(self):
        # constant restriction: every point is critical
        chart0 = BesselCylinder(2).chart(phi_range=(-2, 2))
        H = make_hamiltonian("free", 2)
        with pytest.raises(GlancingDetectedError):
            flow_out_energy(chart0, H, 1.0, 0.5).embed(np.array([0.3, 0.1]))

    def test_lagrangian_residual(self, rng):
        chart0 = BesselCylinder(2).chart(phi_range=(0.2, 2.5))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        ec = flow_out_energy(chart0, H, 0.5, 0.8, tol=1e-11)
        assert lagrangian_residual(ec, samples=20, rng=rng) <= 1e-6


class TestSymmetryRelation:
    def test_radial_energy_chart(self):
        chart0 = BesselCylinder(2).chart(phi_range=(0.2, 2.5))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        ec = flow_out_energy(chart0, H, 0.9, 0.8, tol=1e-11)
        assert symmetry_relation_residual(ec, samples=15) <= 1e-6

    def test_free_flow_fiber(self):
        fib = vertical_fiber_polar([0.3, -0.2], r_range=(0.5, 1.5))
        H = make_hamiltonian("free", 2)
        ec = flow_out_energy(fib, H, 1.0, 1.0, tol=1e-11)
        assert symmetry_relation_residual(ec, samples=15) <= 1e-8

    def test_forced_parametrization_off_radial(self):
        # constant-radius circle is no energy level when rho is not radial;
        # the residual equals the energy variation along the circle
        rho = PolynomialField.parse("2-2*x+x^2+y^2")  # 1+(x-1)^2+y^2
        H = make_hamiltonian("conformal1", 2, rho)
        cyl = BesselCylinder(2)
        surf = flow_out_circle(cyl, H, 1.0, 0.6, tol=1e-11)
        res = symmetry_relation_residual(surf, samples=40)
        psis = np.linspace(0, 2 * math.pi, 200)
        dE = np.gradient([H.value(cyl.point(1.0, [p])) for p in psis], psis)
        assert res >= 0.05
        assert res == pytest.approx(np.max(np.abs(dE)), rel=0.05)


class TestChartDump:
    def test_csv_header_and_determinism(self, tmp_path):
        chart0 = BesselCylinder(2).chart(phi_range=(0.5, 2.0),
                                         psi_range=((0.0, 1.0),))
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        lam = flow_out(chart0, H, 0.5, tol=1e-11)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        n1 = chart_to_csv(lam, (3, 2, 2), p1)
        chart_to_csv(lam, (3, 2, 2), p2)
        header = p1.read_text().splitlines()[0]
        assert header == "phi,psi1,t,X1,X2,P1,P2,t,E,S"
        assert n1 == 12
        assert p1.read_bytes() == p2.read_bytes()

    def test_plane_chart(self):
        pl = plane_section([1.0, 0.0])
        z = pl.embed(np.array([0.2, -0.3]))
        assert np.allclose(z.x, [0.2, -0.3]) and np.allclose(z.p, [1, 0])
        assert pl.eikonal(np.array([0.2, -0.3])) == pytest.approx(0.2)
