"""Core phase-space primitives: fields, flows, brackets, polynomials."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagflow.phase_space import (
    DomainError,
    HamiltonianModel,
    IntegrationError,
    PhasePoint,
    PolynomialField,
    ScalarField,
    UnsupportedDepthError,
    flow,
    flow_path,
    hamilton_vector_field,
    make_hamiltonian,
    nested_bracket,
    poisson_bracket,
    shifted_paraboloid,
    symplectic_product,
)

RHO_RADIAL = PolynomialField.parse("1+x^2+y^2")


def field_from_table(rows):
    return PolynomialField.from_table(rows, 4).as_scalar_field()


# p1 - a x1 + x2, p2 + x1, p1^2 - x1 - p2 for a given a
def case_i_fields(a):
    f1 = field_from_table([[1, 0, 0, 1, 0], [-a, 1, 0, 0, 0], [1, 0, 1, 0, 0]])
    f2 = field_from_table([[1, 0, 0, 0, 1], [1, 1, 0, 0, 0]])
    g = field_from_table([[1, 0, 0, 2, 0], [-1, 1, 0, 0, 0], [-1, 0, 0, 0, 1]])
    return f1, f2, g


class TestPhasePoint:
    def test_roundtrip(self):
        z = PhasePoint([1.0, 2.0], [3.0, 4.0])
        assert np.array_equal(PhasePoint.from_array(z.as_array()).x, z.x)
        assert z.n == 2

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            PhasePoint([1.0], [1.0, 2.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PhasePoint([np.inf, 0.0], [0.0, 0.0])


class TestHamiltonField:
    def test_translation_generator(self):
        H = make_hamiltonian("pn", 2)
        v = hamilton_vector_field(H, PhasePoint([0, 0], [0, 1]))
        assert np.allclose(v.x, [0, 1]) and np.allclose(v.p, [0, 0])

    def test_free_stationary_at_zero_momentum(self):
        H = make_hamiltonian("free", 2)
        v = hamilton_vector_field(H, PhasePoint([1, 0], [0, 0]))
        assert np.allclose(v.as_array(), 0.0)

    def test_conformal_at_flat_point(self):
        # grad rho vanishes at the origin, so the momentum is frozen there
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        v = hamilton_vector_field(H, PhasePoint([0, 0], [1, 0]))
        assert np.allclose(v.x, [1, 0], atol=1e-12)
        assert np.allclose(v.p, [0, 0], atol=1e-12)

    def test_momentum_guard(self):
        H = make_hamiltonian("conformal1", 2, RHO_RADIAL)
        with pytest.raises(DomainError):
            H.value(PhasePoint([0, 0], [0, 1e-12]))


class TestFlow:
    def test_translation_flow(self):
        H = make_hamiltonian("pn", 2)
        z = flow(H, PhasePoint([0, 0], [0, 1]), 3.0)
        assert np.allclose(z.x, [0, 3], atol=1e-12)
        assert np.allclose(z.p, [0, 1], atol=1e-12)

    def test_free_flow(self):
        H = make_hamiltonian("free", 2)
        z = flow(H, PhasePoint([1, 0], [1, 0]), 1.0)
        assert np.allclose(z.x, [3, 0], atol=1e-10)

    def test_zero_time_is_identity(self):
        H = make_hamiltonian("free", 2)
        z0 = PhasePoint([1, 2], [3, 4])
        assert flow(H, z0, 0.0) is z0

    def test_against_independent_integrator(self):
        # stiff-family solver at much tighter tolerance as the oracle
        from scipy.integrate import solve_ivp
        H = make_hamiltonian("conformal2", 2, RHO_RADIAL)
        z0 = PhasePoint([0, 0], [1, 0])
        got = flow(H, z0, 0.5, tol=1e-10)

        def rhs(t, y):
            z = PhasePoint.from_array(y)
            return np.concatenate([H.gradient_p(z), -H.gradient_x(z)])

        ref = solve_ivp(rhs, (0, 0.5), z0.as_array(), method="Radau",
                        rtol=1e-13, atol=1e-13).y[:, -1]
        assert np.max(np.abs(got.as_array() - ref)) <= 1e-8

    def test_energy_conservation_along_path(self):
        H = make_hamiltonian("conformal2", 2, RHO_RADIAL)
        z0 = PhasePoint([0.2, -0.1], [0.9, 0.4])
        tol = 1e-10
        sol = flow_path(H, z0, 1.5, tol=tol)
        E0 = H.value(z0)
        drift = max(abs(H.value(PhasePoint.from_array(sol.sol(t))) - E0)
                    for t in np.linspace(0, 1.5, 200))
        assert drift <= 10 * tol * (1 + abs(E0))

    def test_blowup_reports_last_good_time(self):
        H = HamiltonianModel(name="shear-blowup",
                             func=lambda x, p: x[0] ** 2 * p[0])
        with pytest.raises(IntegrationError) as exc:
            flow(H, PhasePoint([1.0], [1.0]), 2.0, tol=1e-10)
        assert 0.0 < exc.value.last_time < 2.0

    def test_symplecticity_probe(self):
        # finite-difference Jacobian of the time-1/2 map preserves the form
        H = make_hamiltonian("conformal2", 2, RHO_RADIAL)
        z0 = np.array([0.1, 0.2, 0.8, -0.3])
        t, fd = 0.5, 3e-5
        J = np.empty((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = fd
            zp = flow(H, PhasePoint.from_array(z0 + e), t, tol=1e-11).as_array()
            zm = flow(H, PhasePoint.from_array(z0 - e), t, tol=1e-11).as_array()
            J[:, j] = (zp - zm) / (2 * fd)
        Om = np.block([[np.zeros((2, 2)), np.eye(2)],
                       [-np.eye(2), np.zeros((2, 2))]])
        assert np.max(np.abs(J.T @ Om @ J - Om)) <= 1e-5


class TestBrackets:
    def test_canonical_pair(self):
        f = field_from_table([[1, 0, 0, 1, 0]])   # p1
        g = field_from_table([[1, 1, 0, 0, 0]])   # x1
        z = PhasePoint([0.3, -0.2], [0.1, 0.9])
        assert poisson_bracket(f, g, z) == pytest.approx(1.0)

    def test_tangency_bracket_vanishes_at_origin(self):
        _, f2, g = case_i_fields(2.0)
        assert poisson_bracket(f2, g, PhasePoint([0, 0], [0, 0])) == pytest.approx(0.0)

    def test_case_i_bracket_value(self):
        f1, _, g = case_i_fields(2.0)
        z = PhasePoint([0, 0], [0.3, 0.0])
        assert poisson_bracket(f1, g, z) == pytest.approx(1.2, abs=1e-12)

    def test_nested_double_bracket(self):
        _, f2, g = case_i_fields(2.0)
        z = PhasePoint([0, 0], [0, 0])
        assert nested_bracket(f2, g, z, "ffg") == pytest.approx(2.0, abs=1e-9)

    def test_nested_antisymmetry_degenerate(self):
        f = field_from_table([[1, 0, 0, 1, 0], [2, 1, 0, 0, 0]])
        z = PhasePoint([0.4, 0.1], [0.2, -0.7])
        assert nested_bracket(f, f, z, "fg") == pytest.approx(0.0, abs=1e-12)

    def test_nested_b_entry(self):
        f1, _, g = case_i_fields(3.0)
        z = PhasePoint([0, 0], [0, 0])
        assert nested_bracket(g, f1, z, "ffg") == pytest.approx(-6.0, abs=1e-8)

    def test_depth_guard(self):
        f1, f2, _ = case_i_fields(1.0)
        with pytest.raises(UnsupportedDepthError):
            nested_bracket(f1, f2, PhasePoint([0, 0], [0, 0]), "ffgg")
        with pytest.raises(ValueError):
            nested_bracket(f1, f2, PhasePoint([0, 0], [0, 0]), "fx")

    def test_double_brackets_convention_invariant(self):
        # each entry differences twice, so the global sign flip cancels
        f1, f2, g = case_i_fields(2.0)
        z = PhasePoint([0, 0], [0, 0])
        for a, b in ((f2, g), (g, f1), (g, f2)):
            plus = nested_bracket(a, b, z, "ffg", sign=1)
            minus = nested_bracket(a, b, z, "ffg", sign=-1)
            assert plus == pytest.approx(minus, abs=1e-8)

    def test_jacobi_identity(self, rng):
        def random_poly():
            rows = [[rng.uniform(-2, 2), *map(int, rng.integers(0, 3, 4))]
                    for _ in range(4)]
            return field_from_table(rows)

        f, g, h = (random_poly() for _ in range(3))
        z = PhasePoint(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))

        # {f,{g,h}} + {g,{h,f}} + {h,{f,g}}; double differencing is loose
        def cyc(a, b, c):
            inner = ScalarField(func=lambda w: poisson_bracket(b, c, w),
                                fd_step=1e-4)
            return poisson_bracket(a, inner, z)

        total = cyc(f, g, h) + cyc(g, h, f) + cyc(h, f, g)
        assert abs(total) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3),
       px=st.floats(-2, 2), py=st.floats(0.5, 2))
def test_bracket_antisymmetry(a, b, px, py):
    f = PolynomialField.from_table(
        [[a, 1, 0, 1, 0], [1, 0, 2, 0, 0]], 4).as_scalar_field()
    g = PolynomialField.from_table(
        [[b, 0, 1, 0, 1], [1, 2, 0, 0, 0]], 4).as_scalar_field()
    z = PhasePoint([a / 3, b / 3], [px, py])
    assert poisson_bracket(f, g, z) == pytest.approx(
        -poisson_bracket(g, f, z), abs=1e-8)


class TestRegistry:
    @pytest.mark.parametrize("name,rho", [
        ("pn", None), ("py", None), ("free", None),
        ("conformal1", RHO_RADIAL), ("conformal2", RHO_RADIAL),
    ])
    def test_euler_identity(self, name, rho, rng):
        H = make_hamiltonian(name, 2, rho)
        m = H.homogeneity
        for _ in range(15):
            z = PhasePoint(rng.uniform(-2, 2, 2),
                           rng.uniform(0.4, 2.0, 2) * rng.choice([-1, 1], 2))
            lhs = float(np.dot(z.p, H.gradient_p(z)))
            assert lhs == pytest.approx(m * H.value(z), rel=1e-8, abs=1e-10)

    @pytest.mark.parametrize("name,rho", [
        ("free", None), ("conformal1", RHO_RADIAL), ("conformal2", RHO_RADIAL),
    ])
    def test_analytic_gradients_match_differences(self, name, rho, rng):
        H = make_hamiltonian(name, 2, rho)
        bare = HamiltonianModel(name="fd", func=H.func)
        for _ in range(10):
            z = PhasePoint(rng.uniform(-1.5, 1.5, 2),
                           rng.uniform(0.5, 1.5, 2))
            scale = 1 + float(np.linalg.norm(H.gradient_x(z)))
            assert np.max(np.abs(H.gradient_x(z) - bare.gradient_x(z))) <= 1e-6 * scale
            assert np.max(np.abs(H.gradient_p(z) - bare.gradient_p(z))) <= 1e-6 * scale

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            make_hamiltonian("nope")

    def test_symplectic_product_convention(self):
        # omega(v_f, v_g) = {f, g} with the fixed sign
        f1, _, g = case_i_fields(2.0)
        z = PhasePoint([0.1, 0.2], [0.4, 0.3])
        fx, fp = f1.gradient(z)
        gx, gp = g.gradient(z)
        vf = PhasePoint(fp, -fx)
        vg = PhasePoint(gp, -gx)
        assert symplectic_product(vf, vg) == pytest.approx(
            poisson_bracket(f1, g, z), abs=1e-12)


class TestPolynomialField:
    def test_parse_and_eval(self):
        p = PolynomialField.parse("1+x^2+y^2")
        assert p.value([2.0, 3.0]) == pytest.approx(14.0)
        assert np.allclose(p.grad([2.0, 3.0]), [4.0, 6.0])
        assert np.allclose(p.hessian([2.0, 3.0]), 2 * np.eye(2))

    def test_parse_coefficients_and_products(self):
        p = PolynomialField.parse("2 - 0.5*x*y^2 + 3*x")
        assert p.value([1.0, 2.0]) == pytest.approx(2 - 2.0 + 3.0)
        assert np.allclose(p.grad([1.0, 2.0]), [-0.5 * 4 + 3, -0.5 * 2 * 2])

    def test_parse_scientific_notation(self):
        p = PolynomialField.parse("1e-3*x + 2.5E+1")
        assert p.value([2.0, 0.0]) == pytest.approx(0.002 + 25.0)

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            PolynomialField.parse("1+zebra")

    def test_table_roundtrip(self):
        p = PolynomialField.from_table([{"coeff": 2.0, "exponents": [1, 1]}])
        q = PolynomialField.from_table(p.to_table())
        assert q.value([3.0, 4.0]) == pytest.approx(24.0)

    def test_shifted_paraboloid(self):
        x0 = np.array([1.0, -2.0])
        p = shifted_paraboloid(x0)
        assert p.value(x0) == pytest.approx(0.5)
        assert np.allclose(p.grad(x0), 0.0, atol=1e-14)
        assert p.value([2.0, -2.0]) == pytest.approx(1.0)
