"""Cusp normal form near a non-degenerate glancing extremum.

The model manifold is S(xi, eta, tau) = -(tau^3/3 + xi^2 tau) with
p_xi = -2 xi tau, p_eta = 0, eps = tau^2 + xi^2: for fixed eps > 0 a
cylinder over a figure-eight curve, collapsing to a trajectory interval at
eps = 0 and empty for eps < 0.  The module carries the exact model side,
the explicit affine canonical map of the translation-flow example, and
numerical transition sampling that reproduces the three regimes for a
general Hamiltonian near a glancing extremum.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from lagflow.manifolds import ManifoldChart
from lagflow.phase_space import HamiltonianModel, PhasePoint

__all__ = [
    "NormalCoordinates",
    "TransitionSample",
    "NotApplicableError",
    "cusp_phase",
    "normal_form_manifold",
    "example_phase",
    "example_manifold_point",
    "example_canonical_map",
    "symplectic_block",
    "map_symplectic_residual",
    "transition_sample",
    "figure_data",
    "phase_derivative_residual",
    "count_self_intersections",
    "find_cusps",
]


class NotApplicableError(ValueError):
    """The glancing point is not a non-degenerate minimum or maximum."""


@dataclass(frozen=True)
class NormalCoordinates:
    p_xi: float
    p_eta: float
    eps: float
    xi: float
    eta: float
    tau: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_xi, self.p_eta, self.eps,
                         self.xi, self.eta, self.tau])

    def manifold_residuals(self) -> tuple:
        """(p_xi + 2 xi tau, p_eta, eps - tau^2 - xi^2): zero on the model."""
        return (self.p_xi + 2.0 * self.xi * self.tau,
                self.p_eta,
                self.eps - self.tau ** 2 - self.xi ** 2)


def cusp_phase(xi: float, eta: float, tau: float) -> float:
    """S(xi, eta, tau) = -(tau^3/3 + xi^2 tau)."""
    return -(tau ** 3 / 3.0 + xi ** 2 * tau)


def normal_form_manifold(xi: float, eta: float, tau: float):
    """Model-manifold point and its phase: p_xi = -2 xi tau, p_eta = 0,
    eps = tau^2 + xi^2 (exact identities)."""
    S = cusp_phase(xi, eta, tau)
    return NormalCoordinates(p_xi=-2.0 * xi * tau, p_eta=0.0,
                             eps=tau ** 2 + xi ** 2,
                             xi=xi, eta=eta, tau=tau), S


def example_phase(x: float, y: float, t: float) -> float:
    """S(x, y, t) = x^2 (y - t) + (y - t)^3 / 3 for the translation flow H = p_y."""
    return x * x * (y - t) + (y - t) ** 3 / 3.0


def example_manifold_point(x: float, y: float, t: float) -> np.ndarray:
    """(p_x, p_y, E, x, y, t) on the flow-out generated by the example phase."""
    w = y - t
    p_x = 2.0 * x * w
    p_y = x * x + w * w
    E = x * x + w * w    # -d_t S
    return np.array([p_x, p_y, E, x, y, t])


def example_canonical_map(p_x, p_y, E, x, y, t, T: float) -> NormalCoordinates:
    """The affine canonical map straightening the example flow-out at t = T:

        p_xi = p_x, p_eta = p_y - E, eps = E,
        xi = x, eta = y - T, tau = t - y.
    """
    return NormalCoordinates(p_xi=p_x, p_eta=p_y - E, eps=E,
                             xi=x, eta=y - T, tau=t - y)


def symplectic_block(n_pairs: int = 2) -> np.ndarray:
    """Matrix of dp ^ dx - dE ^ dt in coordinates (p_x, p_y, E, x, y, t)."""
    m = 2 * n_pairs + 2
    Om = np.zeros((m, m))
    for i in range(n_pairs):
        Om[i, n_pairs + 1 + i] = 1.0
        Om[n_pairs + 1 + i, i] = -1.0
    # -dE ^ dt: the E slot pairs against the t slot with the opposite sign
    Om[n_pairs, m - 1] = -1.0
    Om[m - 1, n_pairs] = 1.0
    return Om


def map_symplectic_residual(map6, at_point, fd: float = 1e-6) -> float:
    """max |J^T Om J - Om| for a map of (p_x, p_y, E, x, y, t) coordinates."""
    v0 = np.asarray(at_point, dtype=float)
    J = np.empty((6, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = fd
        J[:, j] = (np.asarray(map6(*(v0 + e))) - np.asarray(map6(*(v0 - e)))) / (2 * fd)
    Om = symplectic_block()
    return float(np.max(np.abs(J.T @ Om @ J - Om)))


# ---------------------------------------------------------------------------
# Transition sampling
# ---------------------------------------------------------------------------

@dataclass
class TransitionSample:
    regime: str           # empty | degenerate-trajectory | infinity-curve
    eps: float            # signed energy offset, > 0 iff the section exists
    eps_kind: str         # "energy-offset-proxy"
    E: float
    E0: float
    kind: str             # min or max of the restriction
    u_star: np.ndarray    # critical parameters on the initial chart
    alphas: np.ndarray    # curve parameter (empty unless infinity-curve)
    ys: np.ndarray        # section coordinate
    pys: np.ndarray       # section momentum
    phases: np.ndarray    # accumulated action along the flow-out
    t_cross: np.ndarray   # crossing times (signed)
    level_radius: float   # mean parameter-space radius of the energy curve


def _restriction_critical(chart0: ManifoldChart, H: HamiltonianModel,
                          u0: np.ndarray, step: float = 1e-5):
    """Newton for a critical point of H on the 2-parameter chart."""

    def f(u):
        return H.value(chart0.embed(u))

    def grad(u):
        g = np.empty(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = step
            g[i] = (f(u + e) - f(u - e)) / (2 * step)
        return g

    def hess(u):
        M = np.empty((2, 2))
        f0 = f(u)
        for i in range(2):
            ei = np.zeros(2)
            ei[i] = step
            M[i, i] = (f(u + ei) + f(u - ei) - 2 * f0) / step ** 2
        ei = np.array([step, 0.0])
        ej = np.array([0.0, step])
        M[0, 1] = M[1, 0] = (f(u + ei + ej) - f(u + ei - ej)
                             - f(u - ei + ej) + f(u - ei - ej)) / (4 * step ** 2)
        return M

    u = np.asarray(u0, dtype=float).copy()
    for _ in range(60):
        g = grad(u)
        if np.linalg.norm(g) < 1e-11:
            break
        u = u - np.linalg.solve(hess(u), g)
    return u, f(u), hess(u)


def _flow_rhs(H: HamiltonianModel):
    def rhs(t, y):
        z = PhasePoint(y[:2], y[2:4])
        gp = H.gradient_p(z)
        gx = H.gradient_x(z)
        return np.concatenate([gp, -gx, [float(np.dot(z.p, gp))]])
    return rhs


def _section_crossings(H, z0, s0, t_span, axis, value, tol):
    """All section crossings of the two-sided trajectory through z0.

    Returns rows (t, y, p_y, phase); phase = s0 + int p . xdot dt.
    """
    rhs = _flow_rhs(H)
    y0 = np.concatenate([z0.x, z0.p, [0.0]])

    def event(t, y):
        return y[axis] - value
    event.terminal = False
    event.direction = 0

    rows = []
    other = 1 - axis
    # a start exactly on the section produces no sign change for the ODE
    # event detector; record it explicitly
    if abs(z0.x[axis] - value) < 1e-12:
        rows.append((0.0, float(z0.x[other]), float(z0.p[other]), s0))
    for sign in (1.0, -1.0):
        sol = solve_ivp(rhs, (0.0, sign * t_span), y0, method="DOP853",
                        rtol=tol, atol=tol, events=[event], dense_output=False)
        for te, ye in zip(sol.t_events[0], sol.y_events[0]):
            if abs(te) < 1e-10 and rows and rows[0][0] == 0.0:
                continue  # the explicit t = 0 record already covers this
            if sign < 0 and te == 0.0:
                continue
            rows.append((float(te), float(ye[other]), float(ye[2 + other]),
                         s0 + float(ye[4])))
    return rows


def transition_sample(H: HamiltonianModel, chart0: ManifoldChart, E: float,
                      window: float = 0.9, n_alpha: int = 512,
                      section_axis: int = 0, section_value: float = 0.0,
                      t_span: float = 1.5, tol: float = 1e-11,
                      deg_tol: float = 1e-9) -> TransitionSample:
    """Continue the energy level set of H near a glancing extremum of the
    restriction and flow it out; classify the regime and collect the
    section curve.

    The regime is empty when the level set misses the window, a trajectory
    interval when E equals the critical value, and the figure-eight section
    when the offset has the nonempty sign.  The section is the local
    manifold germ, so the level curve is flowed in both time directions:
    at a section through the glancing point itself the forward-only
    flow covers exactly half the curve.
    """
    if chart0.dim != 2:
        raise ValueError("transition sampling needs a 2-parameter chart")
    u0 = np.array([0.5 * (lo + hi) for lo, hi in chart0.domain])
    u_star, E0, hess = _restriction_critical(chart0, H, u0)
    eig = np.linalg.eigvalsh(hess)
    thr = 1e-5 * float(np.max(np.abs(eig))) + 1e-14
    if np.any(np.abs(eig) <= thr):
        raise NotApplicableError("degenerate Hessian of the restriction")
    if eig[0] * eig[1] < 0:
        raise NotApplicableError("saddle point of the restriction; the cusp "
                                 "normal form needs a minimum or maximum")
    kind = "min" if eig[0] > 0 else "max"
    eps = (E - E0) if kind == "min" else (E0 - E)

    empty = TransitionSample(
        regime="empty", eps=eps, eps_kind="energy-offset-proxy", E=E, E0=E0,
        kind=kind, u_star=u_star, alphas=np.empty(0), ys=np.empty(0),
        pys=np.empty(0), phases=np.empty(0), t_cross=np.empty(0),
        level_radius=0.0)

    if abs(E - E0) <= deg_tol * (1.0 + abs(E0)):
        # the level set degenerates to the critical point; the flow-out is
        # an interval of the trajectory through it, and the section sees
        # that trajectory's crossing alone
        z0 = chart0.embed(u_star)
        s0 = chart0.eikonal(u_star) if chart0.eikonal else 0.0
        rows = _section_crossings(H, z0, s0, t_span, section_axis,
                                  section_value, tol)
        empty.regime = "degenerate-trajectory"
        if rows:
            empty.t_cross = np.array([r[0] for r in rows])
            empty.ys = np.array([r[1] for r in rows])
            empty.pys = np.array([r[2] for r in rows])
            empty.phases = np.array([r[3] for r in rows])
        return empty
    if eps < 0:
        return empty

    def f(u):
        return H.value(chart0.embed(u))

    # star-shaped continuation of the level curve around the extremum
    alphas = np.linspace(0.0, 2.0 * math.pi, n_alpha, endpoint=False)
    radii = np.empty(n_alpha)
    for i, b in enumerate(alphas):
        d = np.array([math.cos(b), math.sin(b)])

        def g(s):
            return f(u_star + s * d) - E

        lo, hi = 0.0, window
        if g(lo) * g(hi) > 0:
            radii[i] = np.nan
            continue
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if g(lo) * g(mid) <= 0:
                hi = mid
            else:
                lo = mid
        radii[i] = 0.5 * (lo + hi)
    if np.all(np.isnan(radii)):
        return empty

    ys, pys, phases, ts, keep = [], [], [], [], []
    for i, b in enumerate(alphas):
        if math.isnan(radii[i]):
            continue
        u = u_star + radii[i] * np.array([math.cos(b), math.sin(b)])
        z0 = chart0.embed(u)
        s0 = chart0.eikonal(u) if chart0.eikonal else 0.0
        rows = _section_crossings(H, z0, s0, t_span, section_axis,
                                  section_value, tol)
        if not rows:
            continue
        t, yv, pv, sv = min(rows, key=lambda r: abs(r[0]))
        keep.append(b)
        ts.append(t)
        ys.append(yv)
        pys.append(pv)
        phases.append(sv)

    return TransitionSample(
        regime="infinity-curve", eps=eps, eps_kind="energy-offset-proxy",
        E=E, E0=E0, kind=kind, u_star=u_star,
        alphas=np.array(keep), ys=np.array(ys), pys=np.array(pys),
        phases=np.array(phases), t_cross=np.array(ts),
        level_radius=float(np.nanmean(radii)))


# ---------------------------------------------------------------------------
# Figure data and curve diagnostics
# ---------------------------------------------------------------------------

def _deriv_coeffs(vals: np.ndarray) -> np.ndarray:
    """FFT coefficients of d/d alpha for a periodic sample on [0, 2 pi)."""
    m = vals.size
    k = np.fft.fftfreq(m, d=1.0 / m) * 1j
    c = k * np.fft.fft(vals)
    if m % 2 == 0:
        c[m // 2] = 0.0  # odd derivative has no Nyquist component
    return c


def _fft_derivative(vals: np.ndarray) -> np.ndarray:
    """Spectral d/d alpha of a periodic sample on [0, 2 pi)."""
    return np.real(np.fft.ifft(_deriv_coeffs(vals)))


def _trig_eval(coeffs: np.ndarray, j: float) -> float:
    """Evaluate the trigonometric interpolant at fractional grid index j."""
    m = coeffs.size
    k = np.fft.fftfreq(m, d=1.0 / m)
    return float(np.real(np.sum(coeffs * np.exp(2j * math.pi * k * j / m))) / m)


def count_self_intersections(xs: np.ndarray, ys: np.ndarray) -> int:
    """Proper crossings of the closed polyline (xs, ys), excluding
    neighbouring segments."""
    m = xs.size
    P = np.column_stack([xs, ys])
    segs = [(P[i], P[(i + 1) % m]) for i in range(m)]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    count = 0
    for i in range(m):
        a, b = segs[i]
        for j in range(i + 2, m):
            if (j + 1) % m == i:
                continue
            c, d = segs[j]
            d1, d2 = cross(a, b, c), cross(a, b, d)
            d3, d4 = cross(c, d, a), cross(c, d, b)
            if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) \
                    and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
                count += 1
    return count


def find_cusps(ys: np.ndarray, ss: np.ndarray,
               rel_tol: float = 1e-6) -> list:
    """Cusps of the closed curve alpha -> (y, phase): parameter points where
    both velocity components vanish.

    The squared speed (scale-normalized) is evaluated through the exact
    trigonometric interpolant of the periodic samples; local grid minima
    are refined by golden-section search and count as cusps when the
    refined minimum falls below rel_tol times the median squared speed.
    """
    m = ys.size
    cy = _deriv_coeffs(ys)
    cs = _deriv_coeffs(ss)
    scale = math.hypot(float(ys.max() - ys.min()), float(ss.max() - ss.min()))
    scale = max(scale, 1e-300)

    def q_at(j: float) -> float:
        return (_trig_eval(cy, j) ** 2 + _trig_eval(cs, j) ** 2) / scale ** 2

    q = (np.real(np.fft.ifft(cy)) ** 2 + np.real(np.fft.ifft(cs)) ** 2) / scale ** 2
    med = float(np.median(q))
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    cusps = []
    for i in range(m):
        if not (q[i] <= q[(i - 1) % m] and q[i] <= q[(i + 1) % m]):
            continue
        lo, hi = i - 1.0, i + 1.0
        a, b = hi - golden * (hi - lo), lo + golden * (hi - lo)
        fa, fb = q_at(a), q_at(b)
        for _ in range(60):
            if fa < fb:
                hi, b, fb = b, a, fa
                a = hi - golden * (hi - lo)
                fa = q_at(a)
            else:
                lo, a, fa = a, b, fb
                b = lo + golden * (hi - lo)
                fb = q_at(b)
        jstar = 0.5 * (lo + hi)
        if q_at(jstar) <= rel_tol * med:
            cusps.append(jstar % m)
    # merge refinements that landed on the same cusp from adjacent samples
    merged = []
    for cpos in sorted(cusps):
        if merged and min(abs(cpos - merged[-1]), m - abs(cpos - merged[-1])) < 2.0:
            continue
        merged.append(cpos)
    if len(merged) > 1 and min(abs(merged[0] + m - merged[-1]),
                               abs(merged[-1] - merged[0])) < 2.0:
        merged.pop()
    return merged


def phase_derivative_residual(sample: TransitionSample) -> float:
    """max |dS/dalpha - p_y dy/dalpha| / max |dS/dalpha|.

    On the section curve of a Lagrangian flow-out the accumulated action is
    a primitive of p_y dy, so this vanishes identically.
    """
    if sample.regime != "infinity-curve":
        raise ValueError("derivative identity needs the infinity-curve regime")
    vy = _fft_derivative(sample.ys)
    vs = _fft_derivative(sample.phases)
    resid = np.abs(vs - sample.pys * vy)
    return float(resid.max() / max(np.abs(vs).max(), 1e-300))


def figure_data(sample: TransitionSample):
    """(y, p_y) and (y, phase) tables plus curve diagnostics.

    Empty tables with a regime note outside the infinity-curve regime.
    """
    if sample.regime != "infinity-curve":
        return (np.empty((0, 2)), np.empty((0, 2)),
                {"regime": sample.regime, "self_intersections": 0,
                 "cusp_count": 0, "cusp_positions": []})
    tab1 = np.column_stack([sample.ys, sample.pys])
    tab2 = np.column_stack([sample.ys, sample.phases])
    cusps = find_cusps(sample.ys, sample.phases)
    info = {
        "regime": sample.regime,
        "self_intersections": count_self_intersections(sample.ys, sample.pys),
        "cusp_count": len(cusps),
        "cusp_positions": cusps,
    }
    return tab1, tab2, info
