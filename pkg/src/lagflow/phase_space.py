"""Phase-space primitives: points, scalar fields, Hamiltonians, flows, brackets.

Conventions
-----------
A phase point is a pair of equal-length real vectors (x, p) with the
symplectic form dp ^ dx.  Space-time points use n+1 slots where the last
position slot holds t and the last momentum slot holds -E; the canonical
pairing then evaluates dp ^ dx - dE ^ dt without special casing.

The Poisson bracket sign is fixed once and for all as

    {f, g} = <d_p f, d_x g> - <d_x f, d_p g>,

which makes {p1, x1} = 1 and {f, g} = omega(v_f, v_g) for the Hamilton
fields v_f = (d_p f, -d_x f).  Double-bracket data used by the tangent-pair
classification is invariant under the opposite convention (two sign flips
cancel); a test asserts this rather than relying on the argument.

Finite differencing: first derivatives are central with step
1e-6 * (1 + |z|); the outer layer of a nested bracket widens the step to
1e-4 because differencing a differenced quantity loses about half the
available digits.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "PhasePoint",
    "ScalarField",
    "HamiltonianModel",
    "PolynomialField",
    "EvaluationError",
    "DomainError",
    "IntegrationError",
    "UnsupportedDepthError",
    "symplectic_product",
    "hamilton_vector_field",
    "flow",
    "flow_path",
    "flow_with_variations",
    "VariationalTrajectory",
    "poisson_bracket",
    "nested_bracket",
    "make_hamiltonian",
    "registered_hamiltonians",
    "shifted_paraboloid",
]

FD_STEP_FIRST = 1e-6    # first-derivative central differences
FD_STEP_NESTED = 1e-4   # outer layer of nested brackets
P_SINGULAR_TOL = 1e-10  # |p| guard for |p|-type Hamiltonians


class EvaluationError(RuntimeError):
    """A value or derivative came out non-finite."""

    def __init__(self, message: str, z=None):
        super().__init__(message)
        self.z = z


class DomainError(ValueError):
    """Input outside the admissible domain (e.g. |p| ~ 0 for |p|-type H)."""


class IntegrationError(RuntimeError):
    """Trajectory integration failed; carries the last good time."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good time {last_time:g})")
        self.last_time = last_time


class UnsupportedDepthError(ValueError):
    """Bracket patterns longer than 3 letters are not supported."""


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """A point (x, p) of T*R^n; doubles as a tangent vector (dx, dp).

    n in {1, 2, 3} is supported for genuine phase points; space-time points
    carry one extra slot each (x_last = t, p_last = -E).
    """

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if x.ndim != 1 or x.shape != p.shape:
            raise ValueError("x and p must be 1-d arrays of equal length")
        if not 1 <= x.size <= 4:
            raise ValueError("supported dimensions: n in {1,2,3}, +1 slot for space-time")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise ValueError("phase point entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.x.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.p])

    @classmethod
    def from_array(cls, v) -> "PhasePoint":
        v = np.asarray(v, dtype=float)
        n = v.size // 2
        return cls(v[:n], v[n:])

    def __repr__(self):  # compact, round-trippable enough for logs
        return f"PhasePoint(x={self.x.tolist()}, p={self.p.tolist()})"


def symplectic_product(a: PhasePoint, b: PhasePoint) -> float:
    """omega(a, b) = <a.p, b.x> - <a.x, b.p>  (dp ^ dx on tangent vectors)."""
    return float(np.dot(a.p, b.x) - np.dot(a.x, b.p))


def _fd_gradient(func, v: np.ndarray, step: float) -> np.ndarray:
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = step
        g[i] = (func(v + e) - func(v - e)) / (2.0 * step)
    return g


@dataclass(frozen=True)
class ScalarField:
    """A smooth function of a phase point with an optional gradient oracle.

    Parameters
    ----------
    func : callable
        PhasePoint -> float.
    grad : callable, optional
        PhasePoint -> (d_x f, d_p f).  When absent, central finite
        differences with step ``fd_step * (1 + |z|)`` are used.
    """

    func: Callable[[PhasePoint], float]
    grad: Callable[[PhasePoint], tuple] | None = None
    name: str = "field"
    fd_step: float = FD_STEP_FIRST

    def value(self, z: PhasePoint) -> float:
        v = float(self.func(z))
        if not math.isfinite(v):
            raise EvaluationError(f"{self.name}: non-finite value", z)
        return v

    def gradient(self, z: PhasePoint) -> tuple[np.ndarray, np.ndarray]:
        if self.grad is not None:
            gx, gp = self.grad(z)
            gx = np.asarray(gx, dtype=float)
            gp = np.asarray(gp, dtype=float)
        else:
            h = self.fd_step * (1.0 + float(np.linalg.norm(z.as_array())))
            g = _fd_gradient(lambda v: self.func(PhasePoint.from_array(v)),
                             z.as_array(), h)
            gx, gp = g[: z.n], g[z.n:]
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gp))):
            raise EvaluationError(f"{self.name}: non-finite gradient", z)
        return gx, gp


@dataclass(frozen=True)
class HamiltonianModel:
    """H(x, p) with derivative oracles and optional homogeneity degree.

    ``hess`` returns the blocks (H_xx, H_xp, H_pp) with
    H_xp[i, j] = d^2 H / dx_i dp_j; it is only needed for variational
    flows and falls back to differencing the gradients.
    """

    name: str
    func: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    grad_p: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray, np.ndarray], tuple] | None = None
    homogeneity: float | None = None
    requires_nonzero_p: bool = False

    def _guard(self, z: PhasePoint):
        if self.requires_nonzero_p and np.linalg.norm(z.p) < P_SINGULAR_TOL:
            raise DomainError(f"{self.name}: |p| < {P_SINGULAR_TOL:g} is outside the domain")

    def value(self, z: PhasePoint) -> float:
        self._guard(z)
        v = float(self.func(z.x, z.p))
        if not math.isfinite(v):
            raise EvaluationError(f"{self.name}: non-finite value", z)
        return v

    def _fd_step(self, z: PhasePoint) -> float:
        return FD_STEP_FIRST * (1.0 + float(np.linalg.norm(z.as_array())))

    def gradient_x(self, z: PhasePoint) -> np.ndarray:
        self._guard(z)
        if self.grad_x is not None:
            return np.asarray(self.grad_x(z.x, z.p), dtype=float)
        h = self._fd_step(z)
        return _fd_gradient(lambda x: self.func(x, z.p), z.x.copy(), h)

    def gradient_p(self, z: PhasePoint) -> np.ndarray:
        self._guard(z)
        if self.grad_p is not None:
            return np.asarray(self.grad_p(z.x, z.p), dtype=float)
        h = self._fd_step(z)
        return _fd_gradient(lambda p: self.func(z.x, p), z.p.copy(), h)

    def hessian_blocks(self, z: PhasePoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        self._guard(z)
        if self.hess is not None:
            hxx, hxp, hpp = self.hess(z.x, z.p)
            return (np.asarray(hxx, float), np.asarray(hxp, float), np.asarray(hpp, float))
        n = z.n
        h = self._fd_step(z)
        hxx = np.empty((n, n))
        hxp = np.empty((n, n))
        hpp = np.empty((n, n))
        for j in range(n):
            ex = np.zeros(n)
            ex[j] = h
            gxp = self.gradient_x(PhasePoint(z.x, z.p + ex))
            gxm = self.gradient_x(PhasePoint(z.x, z.p - ex))
            hxp[:, j] = (gxp - gxm) / (2 * h)
            gxx_p = self.gradient_x(PhasePoint(z.x + ex, z.p))
            gxx_m = self.gradient_x(PhasePoint(z.x - ex, z.p))
            hxx[:, j] = (gxx_p - gxx_m) / (2 * h)
            gpp_p = self.gradient_p(PhasePoint(z.x, z.p + ex))
            gpp_m = self.gradient_p(PhasePoint(z.x, z.p - ex))
            hpp[:, j] = (gpp_p - gpp_m) / (2 * h)
        return hxx, hxp, hpp

    def as_scalar_field(self) -> ScalarField:
        grad = None
        if self.grad_x is not None and self.grad_p is not None:
            grad = lambda z: (self.gradient_x(z), self.gradient_p(z))
        return ScalarField(func=lambda z: self.value(z), grad=grad, name=self.name)


def hamilton_vector_field(H: HamiltonianModel, z: PhasePoint) -> PhasePoint:
    """v_H(z) = (d_p H, -d_x H) as a tangent vector."""
    xdot = H.gradient_p(z)
    pdot = -H.gradient_x(z)
    if not (np.all(np.isfinite(xdot)) and np.all(np.isfinite(pdot))):
        raise EvaluationError(f"{H.name}: non-finite Hamilton field", z)
    return PhasePoint(xdot, pdot)


def _rhs(H: HamiltonianModel):
    def rhs(t, y):
        z = PhasePoint.from_array(y)
        v = hamilton_vector_field(H, z)
        return v.as_array()
    return rhs


def flow(H: HamiltonianModel, z0: PhasePoint, t: float, tol: float = 1e-10,
         method: str = "DOP853") -> PhasePoint:
    """g^t(z0), the Hamiltonian phase flow.

    Adaptive embedded Runge-Kutta; symplecticity is checked by tests, not
    enforced.  Energy drift obeys |H(g^t z0) - H(z0)| <= 10 tol (1+|H(z0)|)
    on desk-scale horizons.
    """
    if t == 0.0:
        return z0
    sol = solve_ivp(_rhs(H), (0.0, t), z0.as_array(), method=method,
                    rtol=tol, atol=tol)
    if not sol.success:
        raise IntegrationError(f"{H.name}: {sol.status}: {sol.message}",
                               last_time=float(sol.t[-1]))
    return PhasePoint.from_array(sol.y[:, -1])


def flow_path(H: HamiltonianModel, z0: PhasePoint, t: float, tol: float = 1e-10,
              method: str = "DOP853"):
    """Dense-output solution object over [0, t] (t may be negative)."""
    sol = solve_ivp(_rhs(H), (0.0, t), z0.as_array(), method=method,
                    rtol=tol, atol=tol, dense_output=True)
    if not sol.success:
        raise IntegrationError(f"{H.name}: {sol.message}", last_time=float(sol.t[-1]))
    return sol


@dataclass
class VariationalTrajectory:
    """Dense trajectory with first variations and running action integrals.

    State layout: [z (2n), V row-major (k x 2n), s_full, s_spatial] where
    s_full integrates p.xdot - H (primitive of p dx - E dt on the flow-out)
    and s_spatial integrates p.xdot alone.
    """

    n: int
    k: int
    sol: object

    def state(self, t: float):
        y = self.sol.sol(t)
        n, k = self.n, self.k
        z = PhasePoint.from_array(y[: 2 * n])
        V = y[2 * n: 2 * n + 2 * n * k].reshape(k, 2 * n)
        s_full = float(y[-2])
        s_spatial = float(y[-1])
        return z, V, s_full, s_spatial


def flow_with_variations(H: HamiltonianModel, z0: PhasePoint,
                         directions: Sequence[PhasePoint], t_max: float,
                         tol: float = 1e-12, method: str = "DOP853") -> VariationalTrajectory:
    """Integrate Hamilton's equations together with the linearized flow.

    ``directions`` are initial tangent vectors delta z propagated by
    d/dt delta z = A(z) delta z with A read off the Hessian of H.
    """
    n = z0.n
    k = len(directions)

    def rhs(t, y):
        z = PhasePoint.from_array(y[: 2 * n])
        gx = H.gradient_x(z)
        gp = H.gradient_p(z)
        out = np.empty_like(y)
        out[:n] = gp
        out[n: 2 * n] = -gx
        if k:
            hxx, hxp, hpp = H.hessian_blocks(z)
            V = y[2 * n: 2 * n + 2 * n * k].reshape(k, 2 * n)
            dV = np.empty_like(V)
            for i in range(k):
                dx, dp = V[i, :n], V[i, n:]
                dV[i, :n] = hxp.T @ dx + hpp @ dp
                dV[i, n:] = -(hxx @ dx + hxp @ dp)
            out[2 * n: 2 * n + 2 * n * k] = dV.ravel()
        pxdot = float(np.dot(z.p, gp))
        out[-2] = pxdot - H.value(z)
        out[-1] = pxdot
        return out

    y0 = np.concatenate([z0.as_array()]
                        + [d.as_array() for d in directions]
                        + [np.zeros(2)])
    span = (0.0, t_max if t_max != 0.0 else 1e-30)
    sol = solve_ivp(rhs, span, y0, method=method, rtol=tol, atol=tol,
                    dense_output=True)
    if not sol.success:
        raise IntegrationError(f"{H.name}: {sol.message}", last_time=float(sol.t[-1]))
    return VariationalTrajectory(n=n, k=k, sol=sol)


# ---------------------------------------------------------------------------
# Poisson brackets
# ---------------------------------------------------------------------------

def poisson_bracket(f: ScalarField, g: ScalarField, z: PhasePoint,
                    sign: int = 1) -> float:
    """{f, g}(z) under the fixed convention; sign=-1 evaluates the flipped one."""
    fx, fp = f.gradient(z)
    gx, gp = g.gradient(z)
    return sign * float(np.dot(fp, gx) - np.dot(fx, gp))


def nested_bracket(f: ScalarField, g: ScalarField, z: PhasePoint,
                   pattern: str, sign: int = 1) -> float:
    """Iterated bracket given by a word over {f, g}.

    "fg" means {f, g}; "ffg" means {f, {f, g}}; "ggf" means {g, {g, f}}.
    The inner bracket is realized as a ScalarField differentiated with the
    widened step, since its own evaluation already differences once.
    """
    if not pattern or any(c not in "fg" for c in pattern):
        raise ValueError(f"pattern must be a word over {{f,g}}, got {pattern!r}")
    if len(pattern) < 2 or len(pattern) > 3:
        raise UnsupportedDepthError(f"bracket depth {len(pattern)} unsupported (need 2 or 3)")
    fields = {"f": f, "g": g}
    if len(pattern) == 2:
        return poisson_bracket(fields[pattern[0]], fields[pattern[1]], z, sign)
    inner_a, inner_b = fields[pattern[1]], fields[pattern[2]]
    inner = ScalarField(
        func=lambda w: poisson_bracket(inner_a, inner_b, w, sign),
        name=f"{{{pattern[1]},{pattern[2]}}}",
        fd_step=FD_STEP_NESTED,
    )
    return poisson_bracket(fields[pattern[0]], inner, z, sign)


# ---------------------------------------------------------------------------
# Polynomial fields (used for conformal factors and classification inputs)
# ---------------------------------------------------------------------------

_TERM_SPLIT = re.compile(r"(?<![eE*^])([+-])")


@dataclass(frozen=True)
class PolynomialField:
    """Sparse multivariate polynomial: sum of coeff * prod(v_i^e_i).

    Exponent-coefficient representation matching the CLI config format.
    """

    terms: tuple
    nvars: int

    @classmethod
    def from_table(cls, rows, nvars: int | None = None) -> "PolynomialField":
        """rows: iterable of [coeff, e1, e2, ...] or {"coeff":..,"exponents":[..]}."""
        terms = []
        for row in rows:
            if isinstance(row, dict):
                c = float(row["coeff"])
                es = tuple(int(e) for e in row["exponents"])
            else:
                c = float(row[0])
                es = tuple(int(e) for e in row[1:])
            terms.append((c, es))
        if not terms:
            raise ValueError("empty polynomial table")
        nv = nvars if nvars is not None else max(len(t[1]) for t in terms)
        terms = [(c, es + (0,) * (nv - len(es))) for c, es in terms]
        return cls(terms=tuple(terms), nvars=nv)

    @classmethod
    def parse(cls, text: str, varnames=("x", "y")) -> "PolynomialField":
        """Parse a flat polynomial like "1+x^2+y^2" or "2 - 0.5*x*y^3".

        No parentheses; terms are monomials joined by + or -.
        """
        s = text.replace(" ", "")
        if not s:
            raise ValueError("empty polynomial string")
        if s[0] not in "+-":
            s = "+" + s
        pieces = _TERM_SPLIT.split(s)
        # pieces = ['', '+', 'mono', '+', 'mono', ...]
        terms = []
        for sgn, mono in zip(pieces[1::2], pieces[2::2]):
            coeff = -1.0 if sgn == "-" else 1.0
            expo = [0] * len(varnames)
            got_factor = False
            for factor in mono.split("*"):
                if not factor:
                    raise ValueError(f"bad monomial {mono!r} in {text!r}")
                if "^" in factor:
                    base, power = factor.split("^", 1)
                    k = int(power)
                else:
                    base, k = factor, 1
                if base in varnames:
                    expo[varnames.index(base)] += k
                    got_factor = True
                else:
                    coeff *= float(base) ** k
                    got_factor = True
            if not got_factor:
                raise ValueError(f"bad monomial {mono!r} in {text!r}")
            terms.append((coeff, tuple(expo)))
        return cls(terms=tuple(terms), nvars=len(varnames))

    def to_table(self) -> list:
        return [[c, *es] for c, es in self.terms]

    def value(self, v) -> float:
        v = np.asarray(v, dtype=float)
        total = 0.0
        for c, es in self.terms:
            term = c
            for vi, ei in zip(v, es):
                if ei:
                    term *= vi ** ei
            total += term
        return total

    def grad(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        g = np.zeros(self.nvars)
        for c, es in self.terms:
            for i, ei in enumerate(es):
                if ei == 0:
                    continue
                term = c * ei
                for j, ej in enumerate(es):
                    e = ej - (1 if j == i else 0)
                    if e:
                        term *= v[j] ** e
                g[i] += term
        return g

    def hessian(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        Hm = np.zeros((self.nvars, self.nvars))
        for c, es in self.terms:
            for i, ei in enumerate(es):
                if ei == 0:
                    continue
                for j, ej in enumerate(es):
                    factor = ei * (ej - (1 if i == j else 0)) if i == j else ei * ej
                    if factor == 0:
                        continue
                    term = c * factor
                    for k, ek in enumerate(es):
                        e = ek - (1 if k == i else 0) - (1 if k == j else 0)
                        if e:
                            term *= v[k] ** e
                    Hm[i, j] += term
        return Hm

    def as_scalar_field(self, varnames=("x1", "x2", "p1", "p2")) -> ScalarField:
        """View a polynomial in (x..., p...) as a ScalarField with analytic grad."""
        nv = self.nvars
        if nv % 2:
            raise ValueError("phase-space polynomial needs an even number of variables")
        half = nv // 2

        def fn(z: PhasePoint) -> float:
            return self.value(np.concatenate([z.x[:half], z.p[:half]]))

        def gr(z: PhasePoint):
            g = self.grad(np.concatenate([z.x[:half], z.p[:half]]))
            return g[:half], g[half:]

        return ScalarField(func=fn, grad=gr, name="poly")


def shifted_paraboloid(x0, const: float = 0.5, coeff: float = 0.5) -> PolynomialField:
    """const + coeff * |x - x0|^2 as an exponent-coefficient table."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    terms = [(const + coeff * float(np.dot(x0, x0)), (0,) * n)]
    for i in range(n):
        e2 = tuple(2 if j == i else 0 for j in range(n))
        terms.append((coeff, e2))
        if x0[i] != 0.0:
            e1 = tuple(1 if j == i else 0 for j in range(n))
            terms.append((-2.0 * coeff * x0[i], e1))
    return PolynomialField(terms=tuple(terms), nvars=n)


# ---------------------------------------------------------------------------
# Built-in Hamiltonian registry
# ---------------------------------------------------------------------------

def _const_poly(n: int) -> PolynomialField:
    return PolynomialField(terms=((1.0, (0,) * n),), nvars=n)


def _make_pn(n: int, axis: int) -> HamiltonianModel:
    e = np.zeros(n)
    e[axis] = 1.0
    zero = np.zeros((n, n))
    return HamiltonianModel(
        name=f"p{axis + 1}" if axis != n - 1 else "pn",
        func=lambda x, p: float(p[axis]),
        grad_x=lambda x, p: np.zeros(n),
        grad_p=lambda x, p: e.copy(),
        hess=lambda x, p: (zero, zero, zero),
        homogeneity=1.0,
    )


def _make_free(n: int) -> HamiltonianModel:
    eye2 = 2.0 * np.eye(n)
    zero = np.zeros((n, n))
    return HamiltonianModel(
        name="free",
        func=lambda x, p: float(np.dot(p, p)),
        grad_x=lambda x, p: np.zeros(n),
        grad_p=lambda x, p: 2.0 * p,
        hess=lambda x, p: (zero, zero, eye2),
        homogeneity=2.0,
    )


def _make_conformal(n: int, m: int, rho: PolynomialField, name: str) -> HamiltonianModel:
    if rho.nvars != n:
        raise ValueError(f"rho has {rho.nvars} variables, expected {n}")

    def func(x, p):
        return float(np.dot(p, p)) ** (m / 2.0) / rho.value(x)

    def grad_x(x, p):
        pm = float(np.dot(p, p)) ** (m / 2.0)
        r = rho.value(x)
        return -pm / r ** 2 * rho.grad(x)

    def grad_p(x, p):
        pn2 = float(np.dot(p, p))
        return m * pn2 ** (m / 2.0 - 1.0) * p / rho.value(x)

    def hess(x, p):
        pn2 = float(np.dot(p, p))
        r = rho.value(x)
        gr = rho.grad(x)
        hr = rho.hessian(x)
        pm = pn2 ** (m / 2.0)
        hpp = (m * pn2 ** (m / 2.0 - 1.0) * np.eye(n)
               + m * (m - 2.0) * pn2 ** (m / 2.0 - 2.0) * np.outer(p, p)) / r
        hxp = -m * pn2 ** (m / 2.0 - 1.0) * np.outer(gr, p) / r ** 2
        hxx = pm * (2.0 * np.outer(gr, gr) / r ** 3 - hr / r ** 2)
        return hxx, hxp, hpp

    return HamiltonianModel(
        name=name, func=func, grad_x=grad_x, grad_p=grad_p, hess=hess,
        homogeneity=float(m), requires_nonzero_p=(m == 1),
    )


def make_hamiltonian(name: str, n: int = 2,
                     rho: PolynomialField | None = None) -> HamiltonianModel:
    """Build a registered Hamiltonian.

    Names: ``pn`` (H = p_n), ``py`` (H = p_y, n = 2), ``free`` (H = p^2),
    ``conformal1`` (H = |p| / rho), ``conformal2`` (H = p^2 / rho).
    ``rho`` defaults to the constant polynomial 1.
    """
    if name == "pn":
        return _make_pn(n, n - 1)
    if name == "py":
        if n != 2:
            raise ValueError("py is the n=2 alias of pn")
        return _make_pn(2, 1)
    if name == "free":
        return _make_free(n)
    if name in ("conformal1", "conformal2"):
        m = 1 if name == "conformal1" else 2
        return _make_conformal(n, m, rho if rho is not None else _const_poly(n), name)
    raise KeyError(f"unknown Hamiltonian {name!r}; "
                   f"registered: {', '.join(registered_hamiltonians())}")


def registered_hamiltonians() -> tuple[str, ...]:
    return ("pn", "py", "free", "conformal1", "conformal2")
