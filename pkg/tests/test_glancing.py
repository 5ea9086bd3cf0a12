"""Glancing detection, restricted Hessians, and the double-bracket table."""
import math

import numpy as np
import pytest

from lagflow.glancing import (
    DegenerateFamilyError,
    NotGlancingError,
    NotGlancingPairError,
    NotLagrangianPairError,
    case_iv_search,
    conformal_glancing_test,
    glancing_residual,
    glancing_search,
    melrose_g,
    pair_classification,
    quadratic_phase_lagrangian,
    representation_iv_fields,
    restricted_gradient,
    restricted_hessian,
    tangency_residual,
    transversality,
)
from lagflow.manifolds import BesselCylinder, sphere_direction
from lagflow.phase_space import (
    PhasePoint,
    PolynomialField,
    ScalarField,
    make_hamiltonian,
    poisson_bracket,
    shifted_paraboloid,
)

ORIGIN = PhasePoint([0.0, 0.0], [0.0, 0.0])


def bump_hamiltonian(phi, psi):
    """|p| over the centered bump (1 + (x - x0)^2)/2 with x0 on the cylinder."""
    x0 = phi * sphere_direction([psi], 2)
    return make_hamiltonian("conformal1", 2, shifted_paraboloid(x0))


class TestGlancingResidual:
    def test_centered_bump_is_glancing(self):
        H = bump_hamiltonian(2.0, 0.7)
        res = glancing_residual(H, 2.0, [0.7], 2.0)
        assert res.shape == (4,)
        assert np.max(np.abs(res)) <= 1e-10

    def test_free_hamiltonian_all_glancing(self):
        H = make_hamiltonian("free", 2)
        for phi, psi in ((0.0, 0.3), (1.5, 2.0), (-2.0, 5.0)):
            res = glancing_residual(H, phi, [psi], 1.0)
            assert np.max(np.abs(res)) <= 1e-12

    def test_off_bump_not_glancing(self):
        rho = PolynomialField.parse("1+x^2")
        H = make_hamiltonian("conformal1", 2, rho)
        res = glancing_residual(H, 1.0, [0.0], H.value(BesselCylinder(2).point(1.0, [0.0])))
        assert np.max(np.abs(res)) >= 0.1

    def test_requires_declared_degree(self):
        from lagflow.phase_space import HamiltonianModel
        H = HamiltonianModel(name="anon", func=lambda x, p: float(p[0]))
        with pytest.raises(ValueError):
            glancing_residual(H, 0.0, [0.0], 0.0)


class TestTangency:
    def test_translation_field_along_axis(self):
        H = make_hamiltonian("pn", 2)
        for phi in (-1.0, 0.0, 2.0):
            assert tangency_residual(H, phi, [math.pi / 2]) <= 1e-14

    def test_translation_field_transverse(self):
        H = make_hamiltonian("pn", 2)
        assert tangency_residual(H, 0.0, [0.0]) == pytest.approx(1.0)

    def test_consistency_with_energy_form(self):
        # with a declared degree: tangent and on the level <=> glancing
        H = bump_hamiltonian(1.3, 0.4)
        z = BesselCylinder(2).point(1.3, [0.4])
        assert tangency_residual(H, 1.3, [0.4]) <= 1e-10
        assert np.max(np.abs(glancing_residual(H, 1.3, [0.4], H.value(z)))) <= 1e-10
        # a non-tangent point fails both
        assert tangency_residual(H, 0.2, [0.4]) > 1e-3
        res = glancing_residual(H, 0.2, [0.4],
                                H.value(BesselCylinder(2).point(0.2, [0.4])))
        assert np.max(np.abs(res)) > 1e-3


class TestConformalDichotomy:
    def test_flat_point_off_axis(self):
        x0 = 2.0 * sphere_direction([0.7], 2)
        assert conformal_glancing_test(shifted_paraboloid(x0), 2.0, [0.7])

    def test_axis_point_orthogonal_gradient(self):
        rho = PolynomialField.parse("1+x")
        assert conformal_glancing_test(rho, 0.0, [math.pi / 2])

    def test_generic_point_is_not(self):
        rho = PolynomialField.parse("1+x")
        assert not conformal_glancing_test(rho, 1.0, [0.0])

    @pytest.mark.parametrize("name", ["conformal1", "conformal2"])
    def test_agrees_with_tangency(self, name):
        rho = PolynomialField.parse("1+x^2+y^2")
        H = make_hamiltonian(name, 2, rho)
        for phi in (0.0, 0.8, -1.5):
            for psi in np.linspace(0, 2 * math.pi, 7):
                said = conformal_glancing_test(rho, phi, [psi])
                measured = tangency_residual(H, phi, [psi]) <= 1e-9
                assert said == measured


class TestRestrictedHessian:
    def test_gradient_formula_matches_differences(self):
        H = make_hamiltonian("conformal1", 2,
                             PolynomialField.parse("2-2*x+x^2+y^2"))
        cyl = BesselCylinder(2)
        for phi, psi in ((0.7, 0.2), (1.4, 3.0)):
            g = restricted_gradient(H, phi, [psi])
            step = 1e-6
            fd = np.array([
                (H.value(cyl.point(phi + step, [psi]))
                 - H.value(cyl.point(phi - step, [psi]))) / (2 * step),
                (H.value(cyl.point(phi, [psi + step]))
                 - H.value(cyl.point(phi, [psi - step]))) / (2 * step),
            ])
            assert np.max(np.abs(g - fd)) <= 1e-6

    @pytest.mark.parametrize("phi,det_want,tr_want", [
        (2.0, 64.0, -20.0),   # phi^2 / rho^4 and -(1+phi^2) / rho^2 at rho=1/2
        (1.0, 16.0, -8.0),
    ])
    def test_bump_hessian_identities(self, phi, det_want, tr_want):
        H = bump_hamiltonian(phi, 0.9)
        rep = restricted_hessian(H, phi, [0.9])
        assert rep.det == pytest.approx(det_want, rel=1e-5)
        assert rep.trace == pytest.approx(tr_want, rel=1e-5)
        assert rep.kind == "max"
        assert rep.energy == pytest.approx(2.0, abs=1e-13)

    def test_flat_restriction_is_degenerate(self):
        H = make_hamiltonian("free", 2)
        rep = restricted_hessian(H, 1.0, [0.3])
        assert rep.kind == "degenerate"
        assert np.max(np.abs(rep.hessian)) <= 1e-6

    def test_rejects_non_glancing(self):
        H = make_hamiltonian("conformal1", 2, PolynomialField.parse("1+x"))
        with pytest.raises(NotGlancingError):
            restricted_hessian(H, 1.0, [0.0])

    def test_search_locates_bump_point(self):
        H = bump_hamiltonian(1.5, 1.0)
        reports = glancing_search(H, phi_range=(0.2, 2.8), n_phi=9, n_psi=12)
        hits = [r for r in reports
                if abs(r.phi - 1.5) < 1e-6
                and abs((r.psi[0] - 1.0 + math.pi) % (2 * math.pi) - math.pi) < 1e-6]
        assert hits and hits[0].kind == "max"
        assert hits[0].energy == pytest.approx(2.0, abs=1e-10)


class TestPairClassification:
    def test_case_i_closed_form(self):
        f1, f2, rep = quadratic_phase_lagrangian("I", 2.0)
        pc = pair_classification(f1, f2, melrose_g(), ORIGIN)
        assert np.allclose(pc.A, [[2, 4], [4, 8]], atol=1e-8)
        assert np.allclose(pc.B, [-4, 2], atol=1e-8)
        assert pc.case_index == 7 and rep.transversal and not pc.marginal

    @pytest.mark.parametrize("case,param", [("II", 1.7), ("II", -0.4),
                                            ("III", 2.0), ("III", -1.1)])
    def test_cases_ii_iii_parameter_free(self, case, param):
        f1, f2, rep = quadratic_phase_lagrangian(case, param)
        pc = pair_classification(f1, f2, melrose_g(), ORIGIN)
        assert np.allclose(pc.A, [[0, 0], [0, 2]], atol=1e-8)
        assert np.allclose(pc.B, [2, 0], atol=1e-8)
        assert pc.case_index == 7 and rep.transversal

    def test_case_iii_field_values(self):
        f1, f2, _ = quadratic_phase_lagrangian("III", 2.0)
        z = PhasePoint([1.0, 1.0], [0.5, 0.0])
        assert f1.value(z) == pytest.approx(1.0 + 2.0 * (0.5 + 1.0))
        assert f2.value(z) == pytest.approx(0.0 - 2.0 * (0.5 + 1.0))

    def test_scaling_covariance(self):
        base = pair_classification(*quadratic_phase_lagrangian("I", 1.5)[:2],
                                   melrose_g(), ORIGIN)
        for c in (0.5, 3.0, -2.0):
            f1, f2, _ = quadratic_phase_lagrangian("I", 1.5)
            sf1 = ScalarField(func=lambda z, f=f1: c * f.value(z),
                              grad=lambda z, f=f1: tuple(c * gg for gg in f.gradient(z)))
            sf2 = ScalarField(func=lambda z, f=f2: c * f.value(z),
                              grad=lambda z, f=f2: tuple(c * gg for gg in f.gradient(z)))
            pc = pair_classification(sf1, sf2, melrose_g(), ORIGIN)
            assert np.allclose(pc.A, c * c * base.A, rtol=1e-6, atol=1e-8)
            assert np.allclose(pc.B, c * base.B, rtol=1e-6, atol=1e-8)
            assert pc.det_A == pytest.approx(c ** 4 * base.det_A, abs=1e-8)
            assert pc.quad_form == pytest.approx(c ** 4 * base.quad_form, abs=1e-7)
            assert pc.case_index == base.case_index

    def test_rejects_non_tangent_pair(self):
        f1, f2, _ = quadratic_phase_lagrangian("I", 2.0)
        z = PhasePoint([0.3, 0.0], [0.0, 0.0])  # f2(z) != 0
        with pytest.raises(NotGlancingPairError):
            pair_classification(f1, f2, melrose_g(), z)

    def test_rejects_non_lagrangian_pair(self):
        # f1 = p1 + x2, f2 = x1: tangency conditions hold but {f1,f2} = 1
        f1 = PolynomialField.from_table(
            [[1, 0, 0, 1, 0], [1, 0, 1, 0, 0]], 4).as_scalar_field()
        f2 = PolynomialField.from_table([[1, 1, 0, 0, 0]], 4).as_scalar_field()
        with pytest.raises(NotLagrangianPairError):
            pair_classification(f1, f2, melrose_g(), ORIGIN)

    def test_marginal_flag_near_threshold(self):
        c = 7e-4
        f1, f2, _ = quadratic_phase_lagrangian("I", 1.0)
        sf1 = ScalarField(func=lambda z: c * f1.value(z),
                          grad=lambda z: tuple(c * gg for gg in f1.gradient(z)))
        sf2 = ScalarField(func=lambda z: c * f2.value(z),
                          grad=lambda z: tuple(c * gg for gg in f2.gradient(z)))
        pc = pair_classification(sf1, sf2, melrose_g(), ORIGIN)
        assert pc.marginal

    def test_ten_way_table(self):
        # exercise the sign table directly through synthetic A, B values
        from lagflow.glancing import _sgn
        assert _sgn(5.0, 1e-6) == 1 and _sgn(-5.0, 1e-6) == -1
        assert _sgn(1e-8, 1e-6) == 0


class TestQuadraticPhases:
    def test_param_zero_rejected(self):
        with pytest.raises(DegenerateFamilyError):
            quadratic_phase_lagrangian("I", 0.0)

    def test_unknown_case(self):
        with pytest.raises(ValueError):
            quadratic_phase_lagrangian("V", 1.0)

    def test_case_i_field_values(self):
        f1, f2, _ = quadratic_phase_lagrangian("I", 1.0)
        z = PhasePoint([0.2, 0.7], [0.5, -0.1])
        assert f1.value(z) == pytest.approx(0.5 - 0.2 + 0.7)
        assert f2.value(z) == pytest.approx(-0.1 + 0.2)

    def test_transversality_rank(self):
        f1, f2, rep = quadratic_phase_lagrangian("II", 3.0)
        assert rep.rank == 3 and rep.transversal

    def test_fourth_representation_never_admissible(self):
        assert case_iv_search(np.linspace(-2, 2, 5)) == []

    def test_fourth_representation_obstruction(self):
        # {g, f1}(0) = 1 for every member: the tangency condition cannot hold
        g = melrose_g()
        for alpha, beta, gamma in ((0.0, 0.0, 0.0), (1.0, -2.0, 0.5)):
            f1, f2 = representation_iv_fields(alpha, beta, gamma)
            assert poisson_bracket(g, f1, ORIGIN) == pytest.approx(1.0)
            assert transversality(f1, f2, ORIGIN).transversal
