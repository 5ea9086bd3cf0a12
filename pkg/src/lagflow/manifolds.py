"""Parametrized Lagrangian charts and Hamiltonian flow-outs.

Charts map parameter vectors to phase points.  Space-time charts embed into
n+1 slots, (X, t; P, -E), so the standard symplectic pairing on slots
evaluates dp ^ dx - dE ^ dt.  Charts are immutable after construction;
flow-out charts keep an eager per-parameter trajectory cache, and any
interpolation between cached trajectories is for plotting only, never for
invariant checks.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from lagflow.phase_space import (
    HamiltonianModel,
    IntegrationError,
    PhasePoint,
    PolynomialField,
    flow_with_variations,
    symplectic_product,
)

__all__ = [
    "ManifoldChart",
    "BesselCylinder",
    "sphere_direction",
    "sphere_frame",
    "vertical_fiber",
    "vertical_fiber_polar",
    "plane_section",
    "flow_out",
    "flow_out_energy",
    "flow_out_circle",
    "lagrangian_residual",
    "symmetry_relation_residual",
    "chart_to_csv",
    "NoIntersectionError",
    "GlancingDetectedError",
]


class NoIntersectionError(RuntimeError):
    """The initial manifold does not meet the requested energy surface."""


class GlancingDetectedError(RuntimeError):
    """The energy is critical for H restricted to the initial manifold.

    The transversal energy flow-out is not defined here; use the cusp
    normal-form tools (lagflow.normal_form) instead.
    """


def sphere_direction(psi, n: int = 2) -> np.ndarray:
    """Unit vector omega(psi) on S^{n-1}; psi has n-1 components."""
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    if n == 2:
        return np.array([math.cos(psi[0]), math.sin(psi[0])])
    if n == 3:
        th, ph = psi
        return np.array([math.sin(th) * math.cos(ph),
                         math.sin(th) * math.sin(ph),
                         math.cos(th)])
    raise ValueError("sphere charts implemented for n in {2, 3}")


def sphere_frame(psi, n: int = 2):
    """(omega, omega_perp) with omega_perp the direct orthonormal completion.

    omega_perp is returned as an (n-1, n) array of rows; for n = 2 the row
    is (-sin psi, cos psi), for n = 3 the rows are the usual unit
    theta- and phi-vectors (so det[omega; rows] = +1).
    """
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    w = sphere_direction(psi, n)
    if n == 2:
        perp = np.array([[-math.sin(psi[0]), math.cos(psi[0])]])
    else:
        th, ph = psi
        perp = np.array([
            [math.cos(th) * math.cos(ph), math.cos(th) * math.sin(ph), -math.sin(th)],
            [-math.sin(ph), math.cos(ph), 0.0],
        ])
    return w, perp


@dataclass(frozen=True)
class ManifoldChart:
    """A parametrized Lagrangian chart.

    embed : params (dim,) -> PhasePoint
    eikonal : params -> S with dS = P . dX on the chart (space-time charts
        use the n+1-slot pairing, i.e. p dx - E dt), or None.
    domain : per-parameter (lo, hi) intervals.
    """

    dim: int
    param_names: tuple
    embed: Callable[[np.ndarray], PhasePoint]
    domain: tuple
    eikonal: Callable[[np.ndarray], float] | None = None
    space_time: bool = False
    n_spatial: int = 2
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    def grid(self, counts) -> list:
        """Full-factorial parameter grid (list of 1-d arrays)."""
        axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(self.domain, counts)]
        return [np.array(u) for u in itertools.product(*axes)]

    def sample(self, rng, count: int) -> list:
        lows = np.array([d[0] for d in self.domain])
        highs = np.array([d[1] for d in self.domain])
        return [lows + rng.random(self.dim) * (highs - lows) for _ in range(count)]


class BesselCylinder:
    """The cylinder {x = offset + phi omega(psi), p = omega(psi)}.

    |P| = 1 exactly and the eikonal is S = phi (p dx = d phi on the chart).
    The optional offset shifts the axis point, matching a source at
    offset instead of the origin.
    """

    def __init__(self, n: int = 2, offset=None):
        if n not in (2, 3):
            raise ValueError("Bessel cylinder implemented for n in {2, 3}")
        self.n = n
        self.offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    def point(self, phi: float, psi) -> PhasePoint:
        w = sphere_direction(psi, self.n)
        return PhasePoint(self.offset + phi * w, w)

    def tangent_frame(self, phi: float, psi) -> list:
        """n tangent vectors: (omega, 0) for d phi, (phi w_j, w_j) for d psi_j."""
        w, perp = sphere_frame(psi, self.n)
        frame = [PhasePoint(w, np.zeros(self.n))]
        for row in perp:
            frame.append(PhasePoint(phi * row, row))
        return frame

    def chart(self, phi_range=(-3.0, 3.0), psi_range=None) -> ManifoldChart:
        if psi_range is None:
            psi_range = ((0.0, 2.0 * math.pi),) if self.n == 2 else \
                ((0.3, math.pi - 0.3), (0.0, 2.0 * math.pi))
        names = ("phi",) + tuple(f"psi{i+1}" for i in range(self.n - 1))

        def embed(u):
            return self.point(u[0], u[1:])

        return ManifoldChart(
            dim=self.n, param_names=names, embed=embed,
            domain=(tuple(phi_range),) + tuple(tuple(r) for r in psi_range),
            eikonal=lambda u: float(u[0]),
            space_time=False, n_spatial=self.n,
        )


def vertical_fiber(x0, n: int = 2, p_range=(-2.0, 2.0)) -> ManifoldChart:
    """The fiber {x = x0} parametrized by p (Cartesian)."""
    x0 = np.asarray(x0, dtype=float)

    def embed(u):
        return PhasePoint(x0.copy(), np.asarray(u, dtype=float))

    # p dx = 0 on a fiber, so S is constant
    return ManifoldChart(
        dim=n, param_names=tuple(f"p{i+1}" for i in range(n)),
        embed=embed, domain=tuple(tuple(p_range) for _ in range(n)),
        eikonal=lambda u: 0.0, space_time=False, n_spatial=n,
    )


def vertical_fiber_polar(x0, r_range=(0.1, 2.0)) -> ManifoldChart:
    """The n=2 fiber {x = x0} in polar momentum parameters (r, psi_p)."""
    x0 = np.asarray(x0, dtype=float)

    def embed(u):
        r, psi = u
        return PhasePoint(x0.copy(), r * sphere_direction(psi, 2))

    return ManifoldChart(
        dim=2, param_names=("r", "psi_p"), embed=embed,
        domain=(tuple(r_range), (0.0, 2.0 * math.pi)),
        eikonal=lambda u: 0.0, space_time=False, n_spatial=2,
    )


def plane_section(p0, box=((-1.0, 1.0), (-1.0, 1.0))) -> ManifoldChart:
    """The plane {p = p0} parametrized by x, with eikonal <p0, x>."""
    p0 = np.asarray(p0, dtype=float)
    n = p0.size

    def embed(u):
        return PhasePoint(np.asarray(u, dtype=float), p0.copy())

    return ManifoldChart(
        dim=n, param_names=tuple(f"x{i+1}" for i in range(n)),
        embed=embed, domain=tuple(tuple(b) for b in box),
        eikonal=lambda u: float(np.dot(p0, np.asarray(u, dtype=float))),
        space_time=False, n_spatial=n,
    )


# ---------------------------------------------------------------------------
# Flow-outs
# ---------------------------------------------------------------------------

class _TrajectoryCache:
    """Eager dense trajectories keyed by the base-chart parameter tuple."""

    def __init__(self, chart0: ManifoldChart, H: HamiltonianModel,
                 t_max: float, tol: float):
        self.chart0 = chart0
        self.H = H
        self.t_max = t_max
        self.tol = tol
        self._store: dict = {}

    def get(self, u) -> object:
        key = tuple(float(v) for v in u)
        traj = self._store.get(key)
        if traj is None:
            z0 = self.chart0.embed(np.asarray(u, dtype=float))
            traj = flow_with_variations(self.H, z0, [], self.t_max, tol=self.tol)
            self._store[key] = traj
        return traj

    def prebuild(self, counts):
        for u in self.chart0.grid(counts):
            self.get(u)


def flow_out(chart0: ManifoldChart, H: HamiltonianModel, t_max: float,
             tol: float = 1e-10, prebuild_counts=None) -> ManifoldChart:
    """Space-time flow-out: parameters (params of chart0, t), embedding
    (X(u,t), t; P(u,t), -H).

    The chart eikonal is S0(u) plus the integral of p xdot - H, which
    vanishes identically for degree-1 homogeneous H (so S = S0 there).
    The chart also exposes extras["spatial_action"], the integral of
    p xdot alone (equal to S0 + 2 E t for H = p^2).
    """
    cache = _TrajectoryCache(chart0, H, t_max, tol)
    if prebuild_counts is not None:
        cache.prebuild(prebuild_counts)
    nsp = chart0.n_spatial

    def embed(v):
        u, t = v[:-1], float(v[-1])
        try:
            z, _, s_full, _ = cache.get(u).state(t)
        except IntegrationError:
            raise IntegrationError(
                f"flow-out failed at parameters {np.asarray(u).tolist()}", t)
        E = H.value(z)
        return PhasePoint(np.append(z.x, t), np.append(z.p, -E))

    def eikonal(v):
        u, t = v[:-1], float(v[-1])
        _, _, s_full, _ = cache.get(u).state(t)
        s0 = chart0.eikonal(np.asarray(u, dtype=float)) if chart0.eikonal else 0.0
        return s0 + s_full

    def spatial_action(v):
        u, t = v[:-1], float(v[-1])
        _, _, _, s_sp = cache.get(u).state(t)
        s0 = chart0.eikonal(np.asarray(u, dtype=float)) if chart0.eikonal else 0.0
        return s0 + s_sp

    return ManifoldChart(
        dim=chart0.dim + 1,
        param_names=chart0.param_names + ("t",),
        embed=embed,
        domain=chart0.domain + ((0.0, t_max),),
        eikonal=eikonal if chart0.eikonal else None,
        space_time=True, n_spatial=nsp,
        extras={"spatial_action": spatial_action, "cache": cache, "H": H},
    )


def _restricted_value(chart0, H, u):
    return H.value(chart0.embed(np.asarray(u, dtype=float)))


def _restricted_grad(chart0, H, u, step=1e-6):
    u = np.asarray(u, dtype=float)
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step * (1.0 + abs(u[i]))
        g[i] = (_restricted_value(chart0, H, u + e)
                - _restricted_value(chart0, H, u - e)) / (2 * e[i])
    return g


def _solve_energy_axis(chart0, H, E, others, axis, newton_tol, glancing_tol):
    """1-d Newton along one parameter axis for H(embed(u)) = E.

    Seeds come from a coarse sweep of the axis interval; the derivative is
    differenced through the chart.  Raises when no root exists or when the
    root is a critical point of the restriction (glancing).
    """
    lo, hi = chart0.domain[axis]
    others = np.asarray(others, dtype=float)

    def make_u(s):
        u = np.empty(chart0.dim)
        mask = np.ones(chart0.dim, dtype=bool)
        mask[axis] = False
        u[mask] = others
        u[axis] = s
        return u

    def f(s):
        return _restricted_value(chart0, H, make_u(s)) - E

    grid = np.linspace(lo, hi, 33)
    vals = np.array([f(s) for s in grid])
    band = 1e-12 * (1.0 + abs(E))
    if vals.min() > band or vals.max() < -band:
        raise NoIntersectionError(
            f"H restricted to the chart stays in [{(vals.min() + E):.6g}, "
            f"{(vals.max() + E):.6g}] on the axis interval; E={E:g} not attained")
    # seed at the sign change closest to the axis-interval interior
    idx = int(np.argmin(np.abs(vals)))
    s = float(grid[idx])
    h = 1e-7 * (1.0 + abs(s))
    for _ in range(60):
        fs = f(s)
        dfs = (f(s + h) - f(s - h)) / (2 * h)
        if abs(dfs) < 1e-14:
            break
        step = fs / dfs
        # damped: keep the iterate inside a generous interval
        while abs(step) > 0.5 * (hi - lo):
            step *= 0.5
        s -= step
        if abs(fs) < newton_tol:
            break
    if abs(f(s)) > 1e-8:
        raise NoIntersectionError(
            f"Newton did not converge on the energy surface (residual {f(s):.3g})")
    u = make_u(s)
    g = _restricted_grad(chart0, H, u)
    if np.linalg.norm(g) < glancing_tol:
        raise GlancingDetectedError(
            f"E={E:g} is critical for H restricted to the chart at {u.tolist()}; "
            "the transversal flow-out is undefined (see the cusp normal form)")
    return u


def flow_out_energy(chart0: ManifoldChart, H: HamiltonianModel, E: float,
                    t_max: float, tol: float = 1e-10, solve_axis: int = 0,
                    newton_tol: float = 1e-12,
                    glancing_tol: float = 1e-6) -> ManifoldChart:
    """Fixed-energy flow-out: parameters (chart0 params minus the solve
    axis, t); every emitted point satisfies |H - E| <= 1e-8.

    The intersection with the energy surface is computed per remaining
    parameter value by 1-d Newton along ``solve_axis`` (a graph over the
    other parameters in the transversal case).
    """
    reduced_names = tuple(nm for i, nm in enumerate(chart0.param_names) if i != solve_axis)
    reduced_domain = tuple(d for i, d in enumerate(chart0.domain) if i != solve_axis)
    root_cache: dict = {}
    traj_cache: dict = {}

    def root(others):
        key = tuple(float(v) for v in others)
        if key not in root_cache:
            root_cache[key] = _solve_energy_axis(
                chart0, H, E, others, solve_axis, newton_tol, glancing_tol)
        return root_cache[key]

    def traj(others):
        key = tuple(float(v) for v in others)
        if key not in traj_cache:
            z0 = chart0.embed(root(others))
            traj_cache[key] = flow_with_variations(H, z0, [], t_max, tol=tol)
        return traj_cache[key]

    def embed(v):
        others, t = v[:-1], float(v[-1])
        z, _, _, s_sp = traj(others).state(t)
        return z

    def eikonal(v):
        others, t = v[:-1], float(v[-1])
        _, _, _, s_sp = traj(others).state(t)
        s0 = chart0.eikonal(root(others)) if chart0.eikonal else 0.0
        return s0 + s_sp

    return ManifoldChart(
        dim=chart0.dim, param_names=reduced_names + ("t",),
        embed=embed, domain=reduced_domain + ((0.0, t_max),),
        eikonal=eikonal if chart0.eikonal else None,
        space_time=False, n_spatial=chart0.n_spatial,
        extras={"energy": E, "root": root, "H": H},
    )


def flow_out_circle(cyl: BesselCylinder, H: HamiltonianModel, phi_fixed: float,
                    t_max: float, tol: float = 1e-10) -> ManifoldChart:
    """(psi, t) surface swept by flowing the constant-phi circle.

    This is the forced (t, psi) parametrization: it coincides with the
    energy flow-out only when H is constant on the circle (radial case);
    otherwise the surface is not Lagrangian, which the symmetry-relation
    residual detects.
    """
    cache: dict = {}

    def traj(psi):
        key = float(psi)
        if key not in cache:
            z0 = cyl.point(phi_fixed, [psi])
            cache[key] = flow_with_variations(H, z0, [], t_max, tol=tol)
        return cache[key]

    def embed(v):
        psi, t = float(v[0]), float(v[1])
        z, _, _, _ = traj(psi).state(t)
        return z

    return ManifoldChart(
        dim=2, param_names=("psi1", "t"), embed=embed,
        domain=((0.0, 2.0 * math.pi), (0.0, t_max)),
        space_time=False, n_spatial=cyl.n,
    )


# ---------------------------------------------------------------------------
# Residual checks
# ---------------------------------------------------------------------------

def _chart_tangent(chart: ManifoldChart, u: np.ndarray, i: int,
                   step: float) -> PhasePoint:
    e = np.zeros_like(u)
    e[i] = step
    zp = chart.embed(u + e)
    zm = chart.embed(u - e)
    return PhasePoint((zp.x - zm.x) / (2 * step), (zp.p - zm.p) / (2 * step))


def lagrangian_residual(chart: ManifoldChart, samples: int = 100,
                        rng=None, fd_step: float = 1e-5) -> float:
    """Max |omega(d_u embed, d_v embed)| over sampled parameter pairs.

    Space-time charts carry the extra (t, -E) slots, so the same pairing
    evaluates dp ^ dx - dE ^ dt.  Finite-difference tangents; the bound is
    set by the integrator tolerance for flow-out charts.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    pts = chart.sample(rng, samples)
    for u in pts:
        # keep the stencil inside the t >= 0 part of flow-out domains
        uu = u.copy()
        for i, (lo, hi) in enumerate(chart.domain):
            uu[i] = min(max(uu[i], lo + 2 * fd_step), hi - 2 * fd_step)
        tangents = [_chart_tangent(chart, uu, i, fd_step) for i in range(chart.dim)]
        for i in range(chart.dim):
            for j in range(i + 1, chart.dim):
                worst = max(worst, abs(symplectic_product(tangents[i], tangents[j])))
    return worst


def eikonal_residual(chart: ManifoldChart, samples: int = 50, rng=None,
                     fd_step: float = 1e-6) -> float:
    """Max |directional dS - <P, directional dX>| over samples and directions."""
    if chart.eikonal is None:
        raise ValueError("chart carries no eikonal")
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for u in chart.sample(rng, samples):
        uu = u.copy()
        for i, (lo, hi) in enumerate(chart.domain):
            uu[i] = min(max(uu[i], lo + 2 * fd_step), hi - 2 * fd_step)
        z = chart.embed(uu)
        for i in range(chart.dim):
            e = np.zeros_like(uu)
            e[i] = fd_step
            ds = (chart.eikonal(uu + e) - chart.eikonal(uu - e)) / (2 * fd_step)
            zp, zm = chart.embed(uu + e), chart.embed(uu - e)
            dX = (zp.x - zm.x) / (2 * fd_step)
            worst = max(worst, abs(ds - float(np.dot(z.p, dX))))
    return worst


def symmetry_relation_residual(chart: ManifoldChart, samples: int = 60,
                               rng=None, fd_step: float = 1e-6) -> float:
    """Max |<Xdot, P_psi> - <Pdot, X_psi>| for a (psi, t)-parametrized surface.

    Zero iff the surface is Lagrangian in these parameters (the residual is
    the symplectic area of the coordinate tangents).
    """
    if "t" not in chart.param_names:
        raise ValueError("chart has no time parameter")
    it = chart.param_names.index("t")
    ipsi = 0 if it != 0 else 1
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for u in chart.sample(rng, samples):
        uu = u.copy()
        for i, (lo, hi) in enumerate(chart.domain):
            uu[i] = min(max(uu[i], lo + 2 * fd_step), hi - 2 * fd_step)
        td = _chart_tangent(chart, uu, it, fd_step)
        pd = _chart_tangent(chart, uu, ipsi, fd_step)
        worst = max(worst, abs(float(np.dot(td.x, pd.p) - np.dot(td.p, pd.x))))
    return worst


def chart_to_csv(chart: ManifoldChart, counts, path) -> int:
    """Dump a grid of chart nodes; returns the number of rows written.

    Header: param1,...,paramk,X1..Xn,P1..Pn[,t,E,S].
    """
    nsp = chart.n_spatial
    cols = list(chart.param_names)
    cols += [f"X{i+1}" for i in range(nsp)] + [f"P{i+1}" for i in range(nsp)]
    if chart.space_time:
        cols += ["t", "E"]
    if chart.eikonal is not None:
        cols += ["S"]
    rows = 0
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for u in chart.grid(counts):
            z = chart.embed(u)
            vals = list(u) + list(z.x[:nsp]) + list(z.p[:nsp])
            if chart.space_time:
                vals += [z.x[nsp], -z.p[nsp]]
            if chart.eikonal is not None:
                vals += [chart.eikonal(u)]
            fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")
            rows += 1
    return rows
