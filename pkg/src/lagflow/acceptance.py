"""Acceptance checks: closed-form identities and property verifications.

Each criterion is a standalone function returning a CriterionResult; the
CLI ``verify-all`` command and the test suite both run these, printing one
pass/fail line per criterion.  Tolerances are fixed here, not calibrated.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import erf

from lagflow import families, glancing, manifolds, normal_form, semiclassical
from lagflow.manifolds import BesselCylinder, plane_section, sphere_direction
from lagflow.phase_space import (
    PhasePoint,
    PolynomialField,
    make_hamiltonian,
    shifted_paraboloid,
)

__all__ = ["CriterionResult", "run_all", "CRITERIA"]


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} [{self.index:2d}] {self.name}: {self.detail}"


def _result(index, name, checks, detail) -> CriterionResult:
    return CriterionResult(index=index, name=name,
                           passed=all(checks), detail=detail)


def criterion_1(rng) -> CriterionResult:
    """Glancing identities for the centered conformal bump."""
    worst_res, worst_det, worst_tr, worst_e = 0.0, 0.0, 0.0, 0.0
    for _ in range(10):
        phi = float(rng.uniform(0.5, 2.5) * rng.choice([-1.0, 1.0]))
        psi = float(rng.uniform(0.0, 2.0 * math.pi))
        x0 = phi * sphere_direction([psi], 2)
        H = make_hamiltonian("conformal1", 2, shifted_paraboloid(x0))
        res = glancing.glancing_residual(H, phi, [psi], 2.0)
        worst_res = max(worst_res, float(np.max(np.abs(res))))
        rep = glancing.restricted_hessian(H, phi, [psi])
        r2 = 0.25  # rho(x0) = 1/2
        worst_det = max(worst_det, abs(r2 * r2 * rep.det - phi * phi) / (phi * phi))
        worst_tr = max(worst_tr,
                       abs(r2 * rep.trace + (1 + phi * phi)) / (1 + phi * phi))
        worst_e = max(worst_e, abs(rep.energy - 2.0))
    checks = [worst_res <= 1e-8, worst_det <= 1e-5, worst_tr <= 1e-5,
              worst_e <= 1e-13]
    return _result(1, "glancing identities (conformal bump)", checks,
                   f"residual {worst_res:.2e} (<=1e-8), det rel {worst_det:.2e}, "
                   f"trace rel {worst_tr:.2e} (<=1e-5), |E0-2| {worst_e:.2e}")


def criterion_2(rng) -> CriterionResult:
    """Quadratic-phase bracket matrices and the missing fourth family."""
    g = glancing.melrose_g()
    z = PhasePoint([0.0, 0.0], [0.0, 0.0])
    worst = 0.0
    cases_ok = True
    for _ in range(20):
        a = float(rng.uniform(0.3, 5.0) * rng.choice([-1.0, 1.0]))
        for case in ("I", "II", "III"):
            f1, f2, rep = glancing.quadratic_phase_lagrangian(case, a)
            pc = glancing.pair_classification(f1, f2, g, z)
            if case == "I":
                A_ref = 2.0 * np.array([[1.0, a], [a, a * a]])
                B_ref = 2.0 * np.array([-a, 1.0])
            else:
                A_ref = 2.0 * np.array([[0.0, 0.0], [0.0, 1.0]])
                B_ref = 2.0 * np.array([1.0, 0.0])
            scale = 1.0 + float(np.linalg.norm(A_ref))
            worst = max(worst,
                        float(np.max(np.abs(pc.A - A_ref))) / scale,
                        float(np.max(np.abs(pc.B - B_ref))) / scale)
            cases_ok = cases_ok and pc.case_index == 7 and rep.transversal
    empty_iv = glancing.case_iv_search(np.linspace(-3.0, 3.0, 9))
    checks = [worst <= 1e-5, cases_ok, len(empty_iv) == 0]
    return _result(2, "tangent-pair bracket matrices", checks,
                   f"closed-form dev {worst:.2e} (<=1e-5), all case 7: "
                   f"{cases_ok}, fourth-family admissible members: {len(empty_iv)}")


def criterion_3(rng) -> CriterionResult:
    """Invariant density against det(P, P_psi) on a parameter grid."""
    worst, worst_t0 = 0.0, 0.0
    for rho_text in (None, "1+x^2+y^2"):
        rho = None if rho_text is None else PolynomialField.parse(rho_text)
        H = make_hamiltonian("conformal1", 2, rho)
        fam = families.phi_family(H, t_max=0.85)
        for phi in np.linspace(0.6, 2.0, 5):
            for psi in np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False):
                for t in np.linspace(0.0, 0.8, 6):
                    zt, _, _, _ = fam.flow_data.state(phi, psi, t)
                    F = families.invariant_density(
                        fam, [1.0, phi, psi], [*zt.x, t])
                    d = families.det_p_ppsi(fam, phi, psi, t)
                    worst = max(worst, abs(abs(F) - abs(d)) / abs(d))
                    if t == 0.0:
                        worst_t0 = max(worst_t0, abs(abs(F) - 1.0))
    checks = [worst <= 1e-5, worst_t0 <= 1e-6]
    return _result(3, "density identity F = +-det(P, P_psi)", checks,
                   f"rel dev {worst:.2e} (<=1e-5), | |F(t=0)| - 1 | {worst_t0:.2e}")


def criterion_4(rng) -> CriterionResult:
    """Fixed-energy family against the direct flow-out, plus Hamilton-Jacobi."""
    rho = PolynomialField.parse("1+x^2+y^2")
    H = make_hamiltonian("conformal1", 2, rho)
    cyl = BesselCylinder(2)
    chart0 = cyl.chart(phi_range=(0.3, 2.5), psi_range=((-0.7, 0.7),))
    E = 0.5  # H at phi = 1
    echart = manifolds.flow_out_energy(chart0, H, E, t_max=0.8, tol=1e-12)
    fam = families.phi_plus_family(H, E, t_max=0.85, tol=1e-12)

    chart_pts, iota_pts = [], []
    for psi in np.linspace(-0.5, 0.5, 5):
        root = echart.extras["root"](np.array([psi]))
        for t in np.linspace(0.15, 0.75, 4):
            z = echart.embed(np.array([psi, t]))
            chart_pts.append(np.concatenate([z.x, z.p]))
            seeds = [np.array([1.0, root[0] + 0.03, psi + 0.02, t + 0.03])]
            roots = families.critical_set_solve(fam, z.x, seeds=seeds)
            for r in roots:
                iota_pts.append(np.concatenate([r.xbase, r.p]))
    ok_counts = len(iota_pts) == len(chart_pts)
    A, B = np.array(chart_pts), np.array(iota_pts)
    hd = 0.0
    if ok_counts:
        hd = max(float(cKDTree(B).query(A)[0].max()),
                 float(cKDTree(A).query(B)[0].max()))

    famt = families.phi_family(H, t_max=0.85, tol=1e-12)
    worst_hj = 0.0
    for phi in np.linspace(0.6, 1.8, 4):
        for psi in np.linspace(0.0, 2 * math.pi, 4, endpoint=False):
            for t in np.linspace(0.05, 0.8, 4):
                zt, _, _, _ = famt.flow_data.state(phi, psi, t)
                theta = np.array([1.0, phi, psi])
                xb = np.array([*zt.x, t])
                dt_phi = famt.grad_x(theta, xb)[2]
                hj = dt_phi + H.value(PhasePoint(zt.x, famt.grad_x(theta, xb)[:2]))
                worst_hj = max(worst_hj, abs(hj))
    checks = [ok_counts, hd <= 1e-5, worst_hj <= 1e-6]
    return _result(4, "energy family vs flow-out cross-check", checks,
                   f"Hausdorff {hd:.2e} (<=1e-5) over {len(chart_pts)} points, "
                   f"HJ residual {worst_hj:.2e} (<=1e-6)")


def criterion_5(rng) -> CriterionResult:
    """Worked-example canonical map: exact model identities, symplectic to 1e-9."""
    T = 1.0
    worst_alg, worst_symp = 0.0, 0.0
    for _ in range(100):
        x = float(rng.uniform(-1.0, 1.0))
        y = float(rng.uniform(-1.0, 1.0))
        t = float(rng.uniform(-1.0, 1.0))
        pt = normal_form.example_manifold_point(x, y, t)
        nc = normal_form.example_canonical_map(*pt, T=T)
        worst_alg = max(worst_alg, max(abs(r) for r in nc.manifold_residuals()))
    for _ in range(5):
        at = rng.uniform(-1.0, 1.0, size=6)
        worst_symp = max(worst_symp, normal_form.map_symplectic_residual(
            lambda *v: normal_form.example_canonical_map(*v, T=T).as_array(), at))
    checks = [worst_alg <= 1e-14, worst_symp <= 1e-9]
    return _result(5, "worked-example cusp normal form", checks,
                   f"algebraic residual {worst_alg:.2e} (zero), "
                   f"symplectic residual {worst_symp:.2e} (<=1e-9)")


def criterion_6(rng) -> CriterionResult:
    """Transition regimes and the figure-eight section diagnostics."""
    rho = PolynomialField.parse("1+x^2+y^2")
    H = make_hamiltonian("conformal2", 2, rho)
    chart = plane_section([1.0, 0.0], box=((-0.8, 0.8), (-0.8, 0.8)))
    expected = ["infinity-curve", "infinity-curve", "degenerate-trajectory",
                "empty", "empty"]
    regimes, details = [], []
    curve_ok = True
    deriv_worst = 0.0
    for E, want in zip((0.90, 0.95, 1.00, 1.05, 1.10), expected):
        n_alpha = 320 if want == "infinity-curve" else 64
        s = normal_form.transition_sample(H, chart, E, n_alpha=n_alpha,
                                          t_span=1.2)
        regimes.append(s.regime)
        if s.regime == "infinity-curve":
            _, _, info = normal_form.figure_data(s)
            deriv = normal_form.phase_derivative_residual(s)
            deriv_worst = max(deriv_worst, deriv)
            curve_ok = curve_ok and info["self_intersections"] == 1 \
                and info["cusp_count"] == 2 and s.ys.size == n_alpha
            details.append(f"E={E}: {s.regime} x{info['self_intersections']} "
                           f"cusps {info['cusp_count']}")
        else:
            details.append(f"E={E}: {s.regime}")
    checks = [regimes == expected, curve_ok, deriv_worst <= 1e-5]
    return _result(6, "glancing transition regimes", checks,
                   "; ".join(details) + f"; dS/dy identity {deriv_worst:.2e} (<=1e-5)")


def criterion_7(rng) -> CriterionResult:
    """Five-point residual of the exact radial solution is O(delta^2)."""
    h = 0.1
    angles = rng.uniform(0.0, 2 * math.pi, size=50)
    radii = np.linspace(0.15, 3.0, 50)
    res = {}
    for delta in (1e-3, 5e-4):
        vals = [semiclassical.helmholtz_fivepoint_residual(
            r * np.array([math.cos(a), math.sin(a)]), h, delta)
            for r, a in zip(radii, angles)]
        res[delta] = float(np.sqrt(np.mean(np.square(vals))))
    ratio = res[1e-3] / res[5e-4]
    measured_const = semiclassical.bessel_source([0.0, 0.0], h)  # (2 pi/h)^(1/2)
    checks = [3.8 <= ratio <= 4.2]
    return _result(7, "exact radial solution (five-point residual)", checks,
                   f"Richardson ratio {ratio:.3f} in [3.8, 4.2]; rhs is plain J0 "
                   f"(beam normalization (2pi/h)^(1/2) = {measured_const:.6f} "
                   "reported, not absorbed)")


def criterion_8(rng) -> CriterionResult:
    """Cutoff time integral of the translated Gaussian vs the erf closed form."""
    prof = lambda xi: math.exp(-float(np.dot(xi, xi)) / 2.0)
    h = 0.05
    worst = 0.0
    for xn in (0.0, 0.04, -0.08):
        got = semiclassical.model_pair_integral(prof, [xn], h, t0=10.0)
        want = 1j * math.sqrt(math.pi / 2.0) * (1.0 + erf(xn / h / math.sqrt(2.0)))
        worst = max(worst, abs(got - want) / abs(want))
    v10 = semiclassical.model_pair_integral(prof, [0.0], h, t0=10.0)
    v20 = semiclassical.model_pair_integral(prof, [0.0], h, t0=20.0)
    cut = abs(v10 - v20)
    checks = [worst <= 1e-8, cut <= 1e-10]
    return _result(8, "model-pair cutoff integral", checks,
                   f"closed-form rel dev {worst:.2e} (<=1e-8), "
                   f"cutoff dependence {cut:.2e} (<=1e-10)")


def criterion_9(rng) -> CriterionResult:
    """Stationary phase vs quadrature error scales like h for the cusp phase."""
    x, E = 0.3, 0.73

    def S(t):
        return -x * x * t - t ** 3 / 3.0

    def bump(t):
        u = (t - 1.0) / 0.8
        return math.exp(-1.0 / (1.0 - u * u)) if abs(u) < 1.0 else 0.0

    hs = np.array([0.04, 0.02, 0.01])
    errs = []
    for h in hs:
        q = semiclassical.oscillatory_quad(bump, lambda t: S(t) + E * t,
                                           0.2, 1.8, h, rtol=1e-10)
        spa = semiclassical.stationary_phase_value(bump, lambda t: S(t) + E * t,
                                                   0.2, 1.8, h)
        errs.append(abs(q - spa) / abs(q))
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    checks = [slope >= 0.8]
    return _result(9, "oscillatory quadrature vs stationary phase", checks,
                   f"relative errors {[f'{e:.3g}' for e in errs]}, "
                   f"log-log slope {slope:.2f} (>=0.8)")


def criterion_10(rng) -> CriterionResult:
    """Structural invariants: Lagrangian residuals, eikonal, Euler identity."""
    rho = PolynomialField.parse("1+x^2+y^2")
    cyl = BesselCylinder(2)
    chart0 = cyl.chart(phi_range=(0.4, 2.2), psi_range=((0.0, 2 * math.pi),))
    worst_lag = manifolds.lagrangian_residual(chart0, samples=40, rng=rng)

    H1 = make_hamiltonian("conformal1", 2, rho)
    lam1 = manifolds.flow_out(chart0, H1, 0.8, tol=1e-11)
    worst_lag = max(worst_lag,
                    manifolds.lagrangian_residual(lam1, samples=25, rng=rng))
    Hf = make_hamiltonian("free", 2)
    lamf = manifolds.flow_out(chart0, Hf, 0.8, tol=1e-11)
    worst_lag = max(worst_lag,
                    manifolds.lagrangian_residual(lamf, samples=25, rng=rng))
    echart = manifolds.flow_out_energy(chart0, H1, 0.5, t_max=0.8, tol=1e-11)
    worst_lag = max(worst_lag,
                    manifolds.lagrangian_residual(echart, samples=25, rng=rng))

    # degree-1 charts keep a t-independent eikonal
    worst_eik = 0.0
    for phi in np.linspace(0.5, 2.0, 3):
        for psi in np.linspace(0.0, 2 * math.pi, 4, endpoint=False):
            for t in np.linspace(0.0, 0.8, 5):
                worst_eik = max(worst_eik,
                                abs(lam1.eikonal(np.array([phi, psi, t])) - phi))

    worst_euler = 0.0
    models = [make_hamiltonian("pn", 2), make_hamiltonian("py", 2),
              Hf, H1, make_hamiltonian("conformal2", 2, rho)]
    for H in models:
        m = H.homogeneity
        for _ in range(20):
            z = PhasePoint(rng.uniform(-2, 2, 2),
                           rng.uniform(0.3, 2.0, 2) * rng.choice([-1, 1], 2))
            lhs = float(np.dot(z.p, H.gradient_p(z)))
            val = H.value(z)
            worst_euler = max(worst_euler,
                              abs(lhs - m * val) / (1.0 + abs(val)))
    checks = [worst_lag <= 1e-6, worst_eik <= 1e-7, worst_euler <= 1e-8]
    return _result(10, "structural invariants", checks,
                   f"Lagrangian residual {worst_lag:.2e} (<=1e-6), eikonal "
                   f"t-drift {worst_eik:.2e} (<=1e-7), Euler {worst_euler:.2e} "
                   "(<=1e-8)")


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)


def run_all(seed: int = 20240817, indices=None, verbose: bool = True) -> list:
    """Run the acceptance criteria; prints one line per criterion."""
    master = np.random.default_rng(seed)
    results = []
    for i, fn in enumerate(CRITERIA, start=1):
        sub = np.random.default_rng(master.integers(2 ** 32))
        if indices is not None and i not in indices:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = fn(sub)
        results.append(res)
        if verbose:
            print(res.line(), flush=True)
    return results
