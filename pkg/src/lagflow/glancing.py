"""Glancing-point detection on the ray cylinder and tangent-pair classification.

A point of the cylinder chart is glancing at energy E when the Hamilton
field is tangent to the cylinder there and H = E, equivalently when
(phi, psi) is a critical point of the restriction curlyH(phi, psi) =
H(point(phi, psi)) with critical value E.  The second half of the module
classifies a pair (Lagrangian germ, energy surface) at a common tangency
point through the double-bracket matrix A_z and vector B_z and a 10-way
sign table.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from lagflow.manifolds import BesselCylinder, sphere_frame
from lagflow.phase_space import (
    FD_STEP_NESTED,
    HamiltonianModel,
    PhasePoint,
    PolynomialField,
    ScalarField,
    nested_bracket,
    poisson_bracket,
)

__all__ = [
    "GlancingReport",
    "PairClassification",
    "TransversalityReport",
    "NotGlancingError",
    "NotGlancingPairError",
    "NotLagrangianPairError",
    "DegenerateFamilyError",
    "glancing_residual",
    "tangency_residual",
    "conformal_glancing_test",
    "restricted_gradient",
    "restricted_hessian",
    "glancing_search",
    "pair_classification",
    "quadratic_phase_lagrangian",
    "representation_iv_fields",
    "case_iv_search",
    "melrose_g",
    "transversality",
]


class NotGlancingError(ValueError):
    """The requested point is not a critical point of the restriction."""


class NotGlancingPairError(ValueError):
    """The tangency-pair preconditions fail at the given point."""


class NotLagrangianPairError(ValueError):
    """{f1, f2} does not vanish at the given point."""


class DegenerateFamilyError(ValueError):
    """The quadratic-phase family parameter must be nonzero."""


@dataclass(frozen=True)
class GlancingReport:
    z: PhasePoint
    phi: float
    psi: tuple
    energy: float
    grad: np.ndarray
    hessian: np.ndarray | None
    kind: str  # min | max | saddle | degenerate | non-glancing

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.hessian))

    @property
    def trace(self) -> float:
        return float(np.trace(self.hessian))


def glancing_residual(H: HamiltonianModel, phi: float, psi, E: float,
                      cyl: BesselCylinder | None = None) -> np.ndarray:
    """Residuals of the three glancing conditions at energy E.

    For H homogeneous of degree m in p, z = point(phi, psi) is glancing at
    energy E iff

        d_p H + phi d_x H = m H omega(psi),
        <-d_x H, omega(psi)> = 0,   H = E.

    Returns the concatenated residual numbers (n + 2 of them: the vector
    condition plus the two scalars).
    """
    if H.homogeneity is None:
        raise ValueError(
            f"{H.name} declares no homogeneity degree; use tangency_residual instead")
    cyl = cyl or BesselCylinder(2)
    z = cyl.point(phi, psi)
    w, _ = sphere_frame(psi, cyl.n)
    gx = H.gradient_x(z)
    gp = H.gradient_p(z)
    val = H.value(z)
    r1 = gp + phi * gx - H.homogeneity * val * w
    r2 = -float(np.dot(gx, w))
    r3 = val - E
    return np.concatenate([r1, [r2, r3]])


def tangency_residual(H: HamiltonianModel, phi: float, psi,
                      cyl: BesselCylinder | None = None) -> float:
    """Energy-free tangency test: 0 iff v_H lies in the cylinder tangent.

    Checks d_p H + phi d_x H = <d_p H, P> omega and <-d_x H, omega> = 0
    without using homogeneity; agrees with the glancing residual when the
    Euler identity applies.
    """
    cyl = cyl or BesselCylinder(2)
    z = cyl.point(phi, psi)
    w, _ = sphere_frame(psi, cyl.n)
    gx = H.gradient_x(z)
    gp = H.gradient_p(z)
    r1 = gp + phi * gx - float(np.dot(gp, z.p)) * w
    r2 = -float(np.dot(gx, w))
    return max(float(np.max(np.abs(r1))), abs(r2))


def conformal_glancing_test(rho: PolynomialField, phi: float, psi,
                            n: int = 2, tol: float = 1e-9) -> bool:
    """Glancing dichotomy for H = |p|^m / rho on the cylinder.

    True iff either phi != 0 and grad rho = 0 at x = phi omega(psi), or
    phi = 0 and <grad rho(0), omega(psi)> = 0.
    """
    from lagflow.manifolds import sphere_direction
    w = sphere_direction(psi, n)
    x = phi * w
    g = rho.grad(x)
    if abs(phi) > tol:
        return bool(np.linalg.norm(g) <= tol)
    return bool(abs(float(np.dot(g, w))) <= tol)


def restricted_gradient(H: HamiltonianModel, phi: float, psi,
                        cyl: BesselCylinder | None = None) -> np.ndarray:
    """Chain-rule gradient of curlyH(phi, psi) in cylinder coordinates.

    The phi slot is <d_x H, omega> (the derivative of H(phi w, w) in phi);
    the psi slots are phi <d_x H, w_j> + <d_p H, w_j>.
    """
    cyl = cyl or BesselCylinder(2)
    z = cyl.point(phi, psi)
    w, perp = sphere_frame(psi, cyl.n)
    gx = H.gradient_x(z)
    gp = H.gradient_p(z)
    out = [float(np.dot(gx, w))]
    for row in perp:
        out.append(phi * float(np.dot(gx, row)) + float(np.dot(gp, row)))
    return np.array(out)


def _restriction(H: HamiltonianModel, cyl: BesselCylinder):
    def f(u):
        return H.value(cyl.point(u[0], u[1:]))
    return f


def _fd_hessian(f, u, step):
    m = u.size
    out = np.empty((m, m))
    f0 = f(u)
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = step
        out[i, i] = (f(u + ei) + f(u - ei) - 2 * f0) / step ** 2
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = step
            out[i, j] = out[j, i] = (
                f(u + ei + ej) - f(u + ei - ej) - f(u - ei + ej) + f(u - ei - ej)
            ) / (4 * step ** 2)
    return out


def _classify_hessian(hess: np.ndarray, rel_tol: float = 1e-5) -> str:
    eig = np.linalg.eigvalsh(hess)
    thr = rel_tol * float(np.max(np.abs(eig))) + 1e-14
    if np.any(np.abs(eig) <= thr):
        return "degenerate"
    if np.all(eig > 0):
        return "min"
    if np.all(eig < 0):
        return "max"
    return "saddle"


def restricted_hessian(H: HamiltonianModel, phi: float, psi,
                       cyl: BesselCylinder | None = None,
                       grad_tol: float = 1e-6,
                       fd_step: float = 1e-4) -> GlancingReport:
    """Hessian of the restriction at a glancing point, with its sign class.

    The Hessian is taken in the (phi, psi) cylinder coordinates; for the
    conformal example rho = (1 + (x - x0)^2)/2 centered on the cylinder it
    satisfies rho^4 det = phi^2 and rho^2 Tr = -(1 + phi^2).
    """
    cyl = cyl or BesselCylinder(2)
    g = restricted_gradient(H, phi, psi, cyl)
    if np.linalg.norm(g) > grad_tol:
        raise NotGlancingError(
            f"|grad| = {np.linalg.norm(g):.3g} > {grad_tol:g} at (phi, psi) = "
            f"({phi:g}, {np.atleast_1d(psi).tolist()})")
    u = np.concatenate([[phi], np.atleast_1d(np.asarray(psi, dtype=float))])
    hess = _fd_hessian(_restriction(H, cyl), u, fd_step)
    z = cyl.point(phi, psi)
    return GlancingReport(z=z, phi=phi, psi=tuple(np.atleast_1d(psi)),
                          energy=H.value(z), grad=g, hessian=hess,
                          kind=_classify_hessian(hess))


def glancing_search(H: HamiltonianModel, cyl: BesselCylinder | None = None,
                    phi_range=(-3.0, 3.0), n_phi: int = 25, n_psi: int = 32,
                    grad_tol: float = 1e-8, dedup: float = 1e-4) -> list:
    """Coarse grid + damped Newton on grad(curlyH) = 0; n = 2 only."""
    cyl = cyl or BesselCylinder(2)
    if cyl.n != 2:
        raise ValueError("search implemented for n = 2")
    found = []
    f = _restriction(H, cyl)
    for phi0 in np.linspace(*phi_range, n_phi):
        for psi0 in np.linspace(0, 2 * math.pi, n_psi, endpoint=False):
            u = np.array([phi0, psi0])
            ok = False
            for _ in range(40):
                g = restricted_gradient(H, u[0], u[1:], cyl)
                if np.linalg.norm(g) < grad_tol:
                    ok = True
                    break
                hess = _fd_hessian(f, u, 1e-5)
                try:
                    step = np.linalg.solve(hess, g)
                except np.linalg.LinAlgError:
                    break
                # damping: do not jump more than one grid cell
                lim = max(abs(phi_range[1] - phi_range[0]) / n_phi, 0.3)
                scale = min(1.0, lim / max(np.linalg.norm(step), 1e-30))
                u = u - scale * step
            if not ok or not (phi_range[0] <= u[0] <= phi_range[1]):
                continue
            u[1] %= 2 * math.pi
            if any(np.linalg.norm(u - v) < dedup for v in found):
                continue
            found.append(u.copy())
    reports = []
    for u in found:
        hess = _fd_hessian(f, u, 1e-4)
        z = cyl.point(u[0], u[1:])
        reports.append(GlancingReport(
            z=z, phi=float(u[0]), psi=(float(u[1]),), energy=H.value(z),
            grad=restricted_gradient(H, u[0], u[1:], cyl), hessian=hess,
            kind=_classify_hessian(hess)))
    return reports


# ---------------------------------------------------------------------------
# Pair classification through double brackets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairClassification:
    A: np.ndarray
    B: np.ndarray
    det_A: float
    quad_form: float   # B^T A B
    case_index: int
    marginal: bool
    zero_tol: float


def melrose_g() -> ScalarField:
    """The tangency normal form g = p1^2 - x1 - p2 of the energy surface."""
    return PolynomialField.from_table(
        [[1, 0, 0, 2, 0], [-1, 1, 0, 0, 0], [-1, 0, 0, 0, 1]], 4
    ).as_scalar_field()


def _sgn(v: float, tol: float) -> int:
    if abs(v) <= tol:
        return 0
    return 1 if v > 0 else -1


def _is_marginal(quantities, tol: float) -> bool:
    # a decision is shaky when it sits within a decade of the threshold
    return any(tol / 10 < abs(q) < 10 * tol for q in quantities)


def pair_classification(f1: ScalarField, f2: ScalarField, g: ScalarField,
                        z: PhasePoint, tol: float = 1e-6,
                        zero_tol: float | None = None) -> PairClassification:
    """A_z, B_z and the 10-way case index for the pair (Lambda, {g = 0}).

    Preconditions checked at z to ``tol``: f1 = f2 = g = 0,
    {g, f1} = {g, f2} = 0 (tangency), {f1, f2} = 0 (Lambda Lagrangian).

    ``zero_tol`` decides signs in the case table; it defaults to
    1e-6 (1 + |A_z|).  Inputs whose decisive quantities sit within a
    decade of the threshold are flagged marginal rather than silently
    assigned.
    """
    for name, fld in (("f1", f1), ("f2", f2), ("g", g)):
        v = fld.value(z)
        if abs(v) > tol:
            raise NotGlancingPairError(f"{name}(z) = {v:.3g} != 0")
    for name, fld in (("f1", f1), ("f2", f2)):
        b = poisson_bracket(g, fld, z)
        if abs(b) > tol:
            raise NotGlancingPairError(f"{{g,{name}}}(z) = {b:.3g} != 0")
    b12 = poisson_bracket(f1, f2, z)
    if abs(b12) > tol:
        raise NotLagrangianPairError(f"{{f1,f2}}(z) = {b12:.3g} != 0")

    a11 = nested_bracket(f2, g, z, "ffg")            # {f2,{f2,g}}
    a22 = nested_bracket(f1, g, z, "ffg")            # {f1,{f1,g}}
    # mixed entries involve all three fields; realize the inner brackets
    # as fields differentiated with the widened step
    inner_f2g = ScalarField(func=lambda w: poisson_bracket(f2, g, w),
                            name="{f2,g}", fd_step=FD_STEP_NESTED)
    inner_f1g = ScalarField(func=lambda w: poisson_bracket(f1, g, w),
                            name="{f1,g}", fd_step=FD_STEP_NESTED)
    a12 = -poisson_bracket(f1, inner_f2g, z)
    a21 = -poisson_bracket(f2, inner_f1g, z)
    A = np.array([[a11, a12], [a21, a22]])
    B = np.array([nested_bracket(g, f1, z, "ffg"),   # {g,{g,f1}}
                  nested_bracket(g, f2, z, "ffg")])  # {g,{g,f2}}

    normA = float(np.linalg.norm(A))
    ztol = zero_tol if zero_tol is not None else 1e-6 * (1.0 + normA)
    sym_err = abs(a12 - a21)
    if sym_err > 10 * ztol:
        raise NotLagrangianPairError(
            f"A_z asymmetry {sym_err:.3g} exceeds tolerance; mixed double "
            "brackets disagree (is {f1,f2} = 0 near z?)")
    A = 0.5 * (A + A.T)

    det_A = float(np.linalg.det(A))
    quad = float(B @ A @ B)
    normB = float(np.linalg.norm(B))

    s_det = _sgn(det_A, ztol)
    b_zero = normB <= ztol
    a_zero = normA <= ztol
    q_zero = abs(quad) <= ztol
    if s_det > 0:
        case = 2 if b_zero else 1
    elif s_det < 0:
        case = 3 if not q_zero else (5 if b_zero else 4)
    else:
        if not q_zero:
            case = 6
        elif not a_zero and not b_zero:
            case = 7
        elif not a_zero:
            case = 8
        elif not b_zero:
            case = 9
        else:
            case = 10
    marginal = _is_marginal([det_A, quad, normA, normB], ztol)
    return PairClassification(A=A, B=B, det_A=det_A, quad_form=quad,
                              case_index=case, marginal=marginal, zero_tol=ztol)


# ---------------------------------------------------------------------------
# Quadratic-phase mixed representations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransversalityReport:
    rank: int
    transversal: bool


def transversality(f1: ScalarField, f2: ScalarField, z: PhasePoint,
                   hyper: ScalarField | None = None) -> TransversalityReport:
    """Check T_z Lambda intersects the symplectic-orthogonal of T_z F trivially.

    F defaults to {x1 = 0}.  T_z Lambda is the kernel of (df1, df2); the
    symplectic orthogonal of T_z F is spanned by the Hamilton field of the
    defining function.  The stacked spanning vectors have rank 3 in R^4
    exactly when the intersection is {0}.
    """
    if hyper is None:
        hyper = PolynomialField.from_table([[1, 1, 0, 0, 0]], 4).as_scalar_field()
    hx, hp = hyper.gradient(z)
    v = np.concatenate([hp, -hx])  # Hamilton field of the defining function
    g1x, g1p = f1.gradient(z)
    g2x, g2p = f2.gradient(z)
    grads = np.vstack([np.concatenate([g1x, g1p]), np.concatenate([g2x, g2p])])
    # tangent basis = null space of the two gradients
    _, s, Vt = np.linalg.svd(grads)
    tangent = Vt[2:]  # (2, 4)
    stacked = np.vstack([tangent, v])
    rank = int(np.linalg.matrix_rank(stacked, tol=1e-10))
    return TransversalityReport(rank=rank, transversal=(rank == 3))


def _phase_poly(rows) -> ScalarField:
    return PolynomialField.from_table(rows, 4).as_scalar_field()


def quadratic_phase_lagrangian(case: str, param: float):
    """Defining fields of the quadratic-phase Lagrangian germs.

    Case I:   phase (a x1^2 - 2 x1 x2)/2 in the position representation,
              f1 = p1 - a x1 + x2, f2 = p2 + x1.
    Case II:  phase (2 p1 p2 + c p2^2)/2 in the momentum representation,
              f1 = x1 + p2, f2 = x2 + p1 + c p2.
    Case III: phase b (p1 + x2)^2 / 2 in the mixed representation,
              f1 = x1 + b (p1 + x2), f2 = p2 - b (p1 + x2).

    Returns (f1, f2, transversality report at z = 0 against F = {x1 = 0}).
    """
    if param == 0.0:
        raise DegenerateFamilyError("family parameter must be nonzero")
    a = float(param)
    if case == "I":
        f1 = _phase_poly([[1, 0, 0, 1, 0], [-a, 1, 0, 0, 0], [1, 0, 1, 0, 0]])
        f2 = _phase_poly([[1, 0, 0, 0, 1], [1, 1, 0, 0, 0]])
    elif case == "II":
        f1 = _phase_poly([[1, 1, 0, 0, 0], [1, 0, 0, 0, 1]])
        f2 = _phase_poly([[1, 0, 1, 0, 0], [1, 0, 0, 1, 0], [a, 0, 0, 0, 1]])
    elif case == "III":
        f1 = _phase_poly([[1, 1, 0, 0, 0], [a, 0, 0, 1, 0], [a, 0, 1, 0, 0]])
        f2 = _phase_poly([[1, 0, 0, 0, 1], [-a, 0, 0, 1, 0], [-a, 0, 1, 0, 0]])
    else:
        raise ValueError(f"case must be I, II or III, got {case!r}")
    rep = transversality(f1, f2, PhasePoint([0.0, 0.0], [0.0, 0.0]))
    return f1, f2, rep


def representation_iv_fields(alpha: float, beta: float, gamma: float):
    """Defining fields for the representation-(IV) quadratic phase.

    phase (alpha x1^2 + 2 beta x1 p2 + gamma p2^2)/2 with
    p1 = d_{x1} phase and x2 = -d_{p2} phase.
    """
    f1 = _phase_poly([[1, 0, 0, 1, 0], [-alpha, 1, 0, 0, 0], [-beta, 0, 0, 0, 1]])
    f2 = _phase_poly([[1, 0, 1, 0, 0], [beta, 1, 0, 0, 0], [gamma, 0, 0, 0, 1]])
    return f1, f2


def case_iv_search(grid=None, tol: float = 1e-8) -> list:
    """Grid search for admissible representation-(IV) members.

    A member is admissible when the tangency-pair preconditions hold at 0
    and the germ is transversal to {x1 = 0}.  Returns the admissible
    parameter triples; expected empty, since {g, f1}(0) = 1 for every
    member of the family.
    """
    if grid is None:
        grid = np.linspace(-3.0, 3.0, 13)
    g = melrose_g()
    z = PhasePoint([0.0, 0.0], [0.0, 0.0])
    admissible = []
    for alpha, beta, gamma in itertools.product(grid, grid, grid):
        f1, f2 = representation_iv_fields(alpha, beta, gamma)
        conditions = [f1.value(z), f2.value(z), g.value(z),
                      poisson_bracket(g, f1, z), poisson_bracket(g, f2, z),
                      poisson_bracket(f1, f2, z)]
        if max(abs(c) for c in conditions) > tol:
            continue
        if transversality(f1, f2, z).transversal:
            admissible.append((float(alpha), float(beta), float(gamma)))
    return admissible
