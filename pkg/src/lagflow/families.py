"""Generating families, critical sets, and the invariant density.

A generating family Phi(theta, x) describes a Lagrangian germ through its
fiber-critical set C_Phi = {d_theta Phi = 0} and the immersion
(theta, x) -> (x, d_x Phi).  The families built here use a Lagrange
multiplier among the theta variables:

    Phi0(theta, x)     = (1 - lambda) phi + lambda <omega(psi), x>
    Phi(theta, x, t)   = phi + lambda <P(phi,psi,t), x - X(phi,psi,t)>
    Phi+E(theta+, x)   = Phi(lambda,phi,psi, x, t) + E t

for trajectories (X, P) of a degree-1 homogeneous Hamiltonian started on
the ray cylinder.  The invariant density F[Phi, dy] is the Jacobian
determinant of the combined map (y, d_theta Phi) with respect to
(x, theta), the unique coordinate realization of the volume-form quotient
dy ^ d(d_theta Phi) / (dx ^ d theta).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from lagflow.manifolds import BesselCylinder, sphere_frame
from lagflow.phase_space import (
    HamiltonianModel,
    PhasePoint,
    flow_with_variations,
)

__all__ = [
    "GeneratingFamily",
    "CriticalPoint",
    "ChartBreakdownError",
    "DensityDegenerateError",
    "phi0_family",
    "phi_family",
    "phi_plus_family",
    "critical_set_solve",
    "invariant_density",
    "det_p_ppsi",
]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
RANK_RATIO_MIN = 1e-6


class ChartBreakdownError(RuntimeError):
    """det(P, P_psi) vanished: the family stops generating the chart here."""


class DensityDegenerateError(RuntimeError):
    """The density determinant vanished at the requested point."""


@dataclass(frozen=True)
class GeneratingFamily:
    """Phi(theta, xbase) with analytic first derivatives.

    n_theta : number of fiber variables (N)
    n_base  : base dimension (d); space-time families put t last in xbase.
    """

    n_theta: int
    n_base: int
    value: Callable[[np.ndarray, np.ndarray], float]
    grad_theta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta_names: tuple
    base_names: tuple
    theta_domain: tuple | None = None
    default_y: tuple | None = None          # callables (theta, xbase) -> float
    seeds: Callable[[np.ndarray], list] | None = None


@dataclass
class CriticalPoint:
    theta: np.ndarray
    xbase: np.ndarray
    p: np.ndarray                 # d_x Phi at the critical point
    residual: float
    degenerate: bool = False
    rank_ratio: float = float("nan")


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------

def phi0_family(n: int = 2, offset=None) -> GeneratingFamily:
    """Generating family of the ray cylinder, theta = (lambda, phi, psi)."""
    if n != 2:
        raise ValueError("the multiplier family is implemented for n = 2")
    cyl = BesselCylinder(n, offset)

    def parts(theta, x):
        lam, phi, psi = theta
        w, perp = sphere_frame([psi], 2)
        xs = np.asarray(x, dtype=float) - cyl.offset
        return lam, phi, w, perp[0], xs

    def value(theta, x):
        lam, phi, w, _, xs = parts(theta, x)
        return (1.0 - lam) * phi + lam * float(np.dot(w, xs))

    def grad_theta(theta, x):
        lam, phi, w, wp, xs = parts(theta, x)
        return np.array([
            float(np.dot(w, xs)) - phi,      # d/d lambda
            1.0 - lam,                        # d/d phi
            lam * float(np.dot(wp, xs)),      # d/d psi
        ])

    def grad_x(theta, x):
        lam, phi, w, _, _ = parts(theta, x)
        return lam * w

    def seeds(x):
        xs = np.asarray(x, dtype=float) - cyl.offset
        r = float(np.linalg.norm(xs))
        ang = math.atan2(xs[1], xs[0]) if r > 0 else 0.0
        out = []
        for lam in (0.7, 1.0, 1.3):
            for dphi in (-0.2, 0.0, 0.2):
                for dpsi in (-0.3, 0.0, 0.3):
                    out.append(np.array([lam, r + dphi, ang + dpsi]))
                    out.append(np.array([lam, -r + dphi, ang + math.pi + dpsi]))
        return out

    return GeneratingFamily(
        n_theta=3, n_base=2, value=value, grad_theta=grad_theta, grad_x=grad_x,
        theta_names=("lambda", "phi", "psi"), base_names=("x1", "x2"),
        seeds=seeds,
    )


class _FlowData:
    """Trajectories from the ray cylinder with (phi, psi) first variations."""

    def __init__(self, H: HamiltonianModel, cyl: BesselCylinder,
                 t_max: float, tol: float):
        self.H = H
        self.cyl = cyl
        self.t_max = t_max
        self.tol = tol
        self._store: dict = {}

    def state(self, phi: float, psi: float, t: float, check: bool = True):
        key = (float(phi), float(psi))
        traj = self._store.get(key)
        if traj is None:
            w, perp = sphere_frame([psi], 2)
            dirs = [PhasePoint(w, np.zeros(2)),
                    PhasePoint(phi * perp[0], perp[0])]
            z0 = self.cyl.point(phi, [psi])
            traj = flow_with_variations(self.H, z0, dirs, self.t_max, tol=self.tol)
            self._store[key] = traj
        z, V, s_full, s_sp = traj.state(t)
        X, P = z.x, z.p
        X_phi, P_phi = V[0, :2], V[0, 2:]
        X_psi, P_psi = V[1, :2], V[1, 2:]
        if check:
            det = P[0] * P_psi[1] - P[1] * P_psi[0]
            if abs(det) < 1e-10:
                raise ChartBreakdownError(
                    f"det(P, P_psi) = {det:.3g} at (phi, psi, t) = "
                    f"({phi:g}, {psi:g}, {t:g}); caustic of the family")
        return z, (X_phi, P_phi, X_psi, P_psi), s_full, s_sp


def _require_degree_one(H: HamiltonianModel):
    if H.homogeneity != 1.0:
        raise ValueError(
            f"{H.name}: the multiplier family needs homogeneity degree 1 "
            f"(got {H.homogeneity})")


def phi_family(H: HamiltonianModel, t_max: float = 1.0, tol: float = 1e-12,
               offset=None, phi_range=(-3.0, 3.0)) -> GeneratingFamily:
    """Space-time family Phi = phi + lambda <P, x - X>, base (x1, x2, t).

    Requires H positively homogeneous of degree 1; Phi restricts to the
    cylinder family at t = 0 exactly, and after lambda = 1, x = X the
    Hamilton-Jacobi residual d_t Phi + H(x, d_x Phi) vanishes.
    """
    _require_degree_one(H)
    cyl = BesselCylinder(2, offset)
    data = _FlowData(H, cyl, t_max, tol)

    def value(theta, xb):
        lam, phi, psi = theta
        x, t = np.asarray(xb[:2], dtype=float), float(xb[2])
        z, _, _, _ = data.state(phi, psi, t)
        return phi + lam * float(np.dot(z.p, x - z.x))

    def grad_theta(theta, xb):
        lam, phi, psi = theta
        x, t = np.asarray(xb[:2], dtype=float), float(xb[2])
        z, (X_phi, P_phi, X_psi, P_psi), _, _ = data.state(phi, psi, t)
        dx = x - z.x
        return np.array([
            float(np.dot(z.p, dx)),
            1.0 + lam * (float(np.dot(P_phi, dx)) - float(np.dot(z.p, X_phi))),
            lam * (float(np.dot(P_psi, dx)) - float(np.dot(z.p, X_psi))),
        ])

    def grad_x(theta, xb):
        lam, phi, psi = theta
        x, t = np.asarray(xb[:2], dtype=float), float(xb[2])
        z, _, _, _ = data.state(phi, psi, t)
        xdot = H.gradient_p(z)
        pdot = -H.gradient_x(z)
        dt_phi = lam * (float(np.dot(pdot, x - z.x)) - float(np.dot(z.p, xdot)))
        return np.append(lam * z.p, dt_phi)

    ys = (lambda th, xb: th[1],       # phi
          lambda th, xb: th[2],       # psi
          lambda th, xb: xb[2])       # t

    fam = GeneratingFamily(
        n_theta=3, n_base=3, value=value, grad_theta=grad_theta, grad_x=grad_x,
        theta_names=("lambda", "phi", "psi"), base_names=("x1", "x2", "t"),
        theta_domain=((0.05, 20.0), phi_range, (-2 * math.pi, 4 * math.pi)),
        default_y=ys,
    )
    object.__setattr__(fam, "flow_data", data)
    return fam


def phi_plus_family(H: HamiltonianModel, E: float, t_max: float = 1.0,
                    tol: float = 1e-12, offset=None,
                    phi_range=(-3.0, 3.0)) -> GeneratingFamily:
    """Fixed-energy family Phi + E t, theta+ = (lambda, phi, psi, t), base x.

    Critical points reproduce the fixed-energy flow-out near a
    non-glancing trajectory; stationarity in t is the condition H = E.
    """
    _require_degree_one(H)
    base = phi_family(H, t_max=t_max, tol=tol, offset=offset, phi_range=phi_range)
    data = base.flow_data

    def split(theta):
        return theta[:3], float(theta[3])

    def value(theta, x):
        th, t = split(theta)
        return base.value(th, np.append(x, t)) + E * t

    def grad_theta(theta, x):
        th, t = split(theta)
        xb = np.append(x, t)
        g3 = base.grad_theta(th, xb)
        dt = base.grad_x(th, xb)[2] + E
        return np.append(g3, dt)

    def grad_x(theta, x):
        th, t = split(theta)
        return base.grad_x(th, np.append(x, t))[:2]

    def seeds(x):
        x = np.asarray(x, dtype=float)
        r = float(np.linalg.norm(x))
        ang = math.atan2(x[1], x[0]) if r > 0 else 0.0
        out = []
        for phi0 in np.linspace(phi_range[0], phi_range[1], 5):
            for dt in np.linspace(0.1, t_max - 0.05, 4):
                out.append(np.array([1.0, phi0, ang, dt]))
        return out

    fam = GeneratingFamily(
        n_theta=4, n_base=2, value=value, grad_theta=grad_theta, grad_x=grad_x,
        theta_names=("lambda", "phi", "psi", "t"), base_names=("x1", "x2"),
        theta_domain=((0.05, 20.0), phi_range, (-2 * math.pi, 4 * math.pi),
                      (0.0, t_max)),
        seeds=seeds,
    )
    object.__setattr__(fam, "flow_data", data)
    return fam


def det_p_ppsi(family: GeneratingFamily, phi: float, psi: float, t: float) -> float:
    """det(P, d_psi P) along the family's trajectory cache (n = 2)."""
    data = family.flow_data
    z, (_, _, _, P_psi), _, _ = data.state(phi, psi, t, check=False)
    return float(z.p[0] * P_psi[1] - z.p[1] * P_psi[0])


# ---------------------------------------------------------------------------
# Critical sets
# ---------------------------------------------------------------------------

def _clip_theta(theta, domain):
    if domain is None:
        return theta
    out = theta.copy()
    for i, bounds in enumerate(domain):
        if bounds is None:
            continue
        lo, hi = bounds
        out[i] = min(max(out[i], lo), hi)
    return out


def _fd_jacobian(fun, v, m_out, step_scale=1e-6):
    n = v.size
    J = np.empty((m_out, n))
    for j in range(n):
        h = step_scale * (1.0 + abs(v[j]))
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (fun(v + e) - fun(v - e)) / (2 * h)
    return J


def critical_set_solve(family: GeneratingFamily, xbase,
                       seeds: Sequence | None = None,
                       tol: float = NEWTON_TOL,
                       max_iter: int = NEWTON_MAX_ITER,
                       dedup: float = 1e-6) -> list:
    """Newton-polished roots of d_theta Phi = 0 at fixed base point.

    Each converged root is checked for the generating-family rank
    condition: the N x (d + N) matrix of second derivatives
    (d2_theta_theta, d2_theta_x) must have full rank N (smallest singular
    value >= 1e-6 of the largest).  Roots failing it keep a degenerate
    flag and a warning: the image may be a singular (isotropic) germ.
    """
    xbase = np.asarray(xbase, dtype=float)
    if seeds is None:
        if family.seeds is None:
            raise ValueError("no seeds given and the family has no default grid")
        seeds = family.seeds(xbase)

    roots: list[CriticalPoint] = []
    for seed in seeds:
        th = _clip_theta(np.asarray(seed, dtype=float).copy(), family.theta_domain)
        try:
            res = family.grad_theta(th, xbase)
        except ChartBreakdownError:
            continue
        ok = False
        for _ in range(max_iter):
            nr = float(np.linalg.norm(res))
            if nr <= tol:
                ok = True
                break
            try:
                J = _fd_jacobian(lambda v: family.grad_theta(v, xbase),
                                 th, family.n_theta)
                # least squares: tolerates the rank-deficient Jacobians of
                # degenerate (isotropic) critical manifolds
                step = np.linalg.lstsq(J, res, rcond=None)[0]
            except (np.linalg.LinAlgError, ChartBreakdownError):
                break
            # line search: halve until the residual actually drops
            lam = 1.0
            accepted = False
            for _ in range(25):
                cand = _clip_theta(th - lam * step, family.theta_domain)
                try:
                    cres = family.grad_theta(cand, xbase)
                except ChartBreakdownError:
                    lam *= 0.5
                    continue
                if float(np.linalg.norm(cres)) < nr:
                    th, res = cand, cres
                    accepted = True
                    break
                lam *= 0.5
            if not accepted:
                break
        if not ok:
            continue
        if any(np.linalg.norm(th - r.theta) < dedup * (1 + np.linalg.norm(th))
               for r in roots):
            continue

        def both(v):
            return family.grad_theta(v[: family.n_theta],
                                     v[family.n_theta:])
        vfull = np.concatenate([th, xbase])
        M = _fd_jacobian(both, vfull, family.n_theta)
        sv = np.linalg.svd(M, compute_uv=False)
        ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
        degenerate = ratio < RANK_RATIO_MIN
        if degenerate:
            warnings.warn(
                f"critical point at theta={th.tolist()} fails the rank "
                f"condition (sigma_N/sigma_1 = {ratio:.2e}); the generated "
                "germ may be singular (isotropic)", RuntimeWarning)
        roots.append(CriticalPoint(
            theta=th, xbase=xbase.copy(), p=family.grad_x(th, xbase),
            residual=float(np.linalg.norm(family.grad_theta(th, xbase))),
            degenerate=degenerate, rank_ratio=ratio))
    return roots


# ---------------------------------------------------------------------------
# Invariant density
# ---------------------------------------------------------------------------

def invariant_density(family: GeneratingFamily, theta, xbase,
                      y_funcs: Sequence | None = None,
                      fd_step: float = 1e-4) -> float:
    """F[Phi, dy] near C_Phi as one Jacobian determinant.

    Differentiates the combined map
        (x, theta) -> (y_1..y_d, d_theta Phi)
    with respect to (x_1..x_d, theta_1..theta_N) and returns its
    determinant (LU with partial pivoting).  The restriction to C_Phi does
    not depend on how the y coordinates are extended off the critical set.
    """
    theta = np.asarray(theta, dtype=float)
    xbase = np.asarray(xbase, dtype=float)
    ys = y_funcs if y_funcs is not None else family.default_y
    if ys is None:
        raise ValueError("no y coordinates supplied and the family has no default")
    if len(ys) != family.n_base:
        raise ValueError(f"need d = {family.n_base} y-functions, got {len(ys)}")
    d, N = family.n_base, family.n_theta

    def combined(v):
        xb, th = v[:d], v[d:]
        out = np.empty(d + N)
        for i, y in enumerate(ys):
            out[i] = y(th, xb)
        out[d:] = family.grad_theta(th, xb)
        return out

    v = np.concatenate([xbase, theta])
    J = _fd_jacobian(combined, v, d + N, step_scale=fd_step)
    det = float(np.linalg.det(J))
    if abs(det) < 1e-12:
        raise DensityDegenerateError(
            f"density determinant {det:.3g} at theta={theta.tolist()}, "
            f"x={xbase.tolist()}")
    return det
