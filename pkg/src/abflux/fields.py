"""Electromagnetic and Yang-Mills potentials, field strengths and fluxes.

Conventions
-----------
Points are arrays ``x`` of shape ``(..., 2)``; times ``t`` broadcast against
``x[..., 0]``. Abelian potentials return ``A`` with shape ``(..., 2)`` and
``V`` with shape ``(...)``; matrix potentials return ``(..., 2, m, m)`` and
``(..., m, m)``.

Field strengths follow ``B3 = dA2/dx1 - dA1/dx2`` and
``E = -dA/dt - dV/dx``. The flux two-form integrated by :func:`surface_flux`
is the exterior derivative of the connection ``A1 dx1 + A2 dx2 - V dt``::

    F = B3 dx1^dx2 + E1 dx1^dt + E2 dx2^dt

so that the line integral of the connection around the boundary of a patch
equals the flux through it, for every orientation of the patch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import InvalidScenario
from .geometry import Disk, Domain, Obstacle, OuterDisk, Translation
from .quadrature import (
    DEFAULT_QUAD,
    QuadConfig,
    adaptive_integrate,
    adaptive_integrate_2d,
    fixed_gauss,
)

DEFAULT_FD_STEP = 1e-5


def _broadcast_t(x, t):
    x = np.asarray(x, dtype=float)
    return x, np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])


def fd_partials(fn, x, t, h=DEFAULT_FD_STEP):
    """Central differences of ``fn(x, t)`` in x1, x2 and t."""
    x, t = _broadcast_t(x, t)
    e1 = np.array([h, 0.0])
    e2 = np.array([0.0, h])
    d1 = (fn(x + e1, t) - fn(x - e1, t)) / (2 * h)
    d2 = (fn(x + e2, t) - fn(x - e2, t)) / (2 * h)
    dt = (fn(x, t + h) - fn(x, t - h)) / (2 * h)
    return d1, d2, dt


# --------------------------------------------------------------------------
# potentials and fields


@dataclass(frozen=True, eq=False)
class PotentialPair:
    """Potentials ``(A, V)`` with optional analytic partial derivatives.

    ``dA(x, t)`` must return ``(jac, dA_dt)`` with ``jac[..., i, j] =
    dA_i/dx_j``; ``dV(x, t)`` returns ``(grad V, dV/dt)``. Without them the
    partials fall back to central differences with step ``h_fd``.
    """

    A: Callable
    V: Callable
    m: int = 1
    support_radius: float = np.inf
    dA: Optional[Callable] = None
    dV: Optional[Callable] = None
    h_fd: float = DEFAULT_FD_STEP
    self_adjoint: bool = True
    recipe: dict = field(default_factory=dict)

    @property
    def abelian(self):
        return self.m == 1

    def A_partials(self, x, t):
        if self.dA is not None:
            return self.dA(*_broadcast_t(x, t))
        d1, d2, dt = fd_partials(self.A, x, t, self.h_fd)
        return np.stack([d1, d2], axis=-1), dt

    def V_partials(self, x, t):
        if self.dV is not None:
            return self.dV(*_broadcast_t(x, t))
        d1, d2, dt = fd_partials(self.V, x, t, self.h_fd)
        return np.stack([d1, d2], axis=-1), dt

    def without_derivatives(self):
        return replace(self, dA=None, dV=None)


def zero_potential(m=1):
    if m == 1:
        A = lambda x, t: np.zeros(np.shape(x))
        V = lambda x, t: np.zeros(np.shape(x)[:-1])
        dA = lambda x, t: (np.zeros(np.shape(x) + (2,)), np.zeros(np.shape(x)))
        dV = lambda x, t: (np.zeros(np.shape(x)), np.zeros(np.shape(x)[:-1]))
        return PotentialPair(A, V, 1, 0.0, dA, dV, recipe={"kind": "zero"})
    A = lambda x, t: np.zeros(np.shape(x)[:-1] + (2, m, m), dtype=complex)
    V = lambda x, t: np.zeros(np.shape(x)[:-1] + (m, m), dtype=complex)
    return PotentialPair(A, V, m, 0.0, recipe={"kind": "zero", "m": m})


@dataclass(frozen=True, eq=False)
class FieldStrength:
    """Magnetic field ``B3(x, t)`` (scalar) and electric field ``E(x, t)``."""

    B3: Callable
    E: Callable


def derived_fields(p: PotentialPair) -> FieldStrength:
    """Field strengths of an abelian potential pair."""
    if not p.abelian:
        raise ValueError("derived_fields needs an abelian potential")

    def B3(x, t):
        jac, _ = p.A_partials(x, t)
        return jac[..., 1, 0] - jac[..., 0, 1]

    def E(x, t):
        _, At = p.A_partials(x, t)
        gradV, _ = p.V_partials(x, t)
        return -At - gradV

    return FieldStrength(B3, E)


def gaussian_bump_potential(amplitude=(0.0, 0.0), v_amplitude=0.0, center=(0.0, 0.0),
                            width=1.0, omega=0.0, phase=0.0):
    """``A = a g(x) cos(omega t + phase)``, ``V = v g(x) cos(...)`` with a Gaussian g."""
    a = np.asarray(amplitude, dtype=float)
    c = np.asarray(center, dtype=float)
    w2 = float(width) ** 2

    def g(x):
        return np.exp(-np.sum((x - c) ** 2, axis=-1) / w2)

    def tau(t):
        return np.cos(omega * t + phase)

    def dtau(t):
        return -omega * np.sin(omega * t + phase)

    def A(x, t):
        x, t = _broadcast_t(x, t)
        return (g(x) * tau(t))[..., None] * a

    def V(x, t):
        x, t = _broadcast_t(x, t)
        return v_amplitude * g(x) * tau(t)

    def dA(x, t):
        gx = g(x)
        grad_g = -2 * (x - c) / w2 * gx[..., None]
        jac = (tau(t))[..., None, None] * a[:, None] * grad_g[..., None, :]
        return jac, (gx * dtau(t))[..., None] * a

    def dV(x, t):
        gx = g(x)
        grad_g = -2 * (x - c) / w2 * gx[..., None]
        return v_amplitude * tau(t)[..., None] * grad_g, v_amplitude * gx * dtau(t)

    support = float(np.linalg.norm(c) + width * np.sqrt(-np.log(1e-17)))
    recipe = {
        "kind": "gaussian-bump",
        "amplitude": a.tolist(),
        "v_amplitude": float(v_amplitude),
        "center": c.tolist(),
        "width": float(width),
        "omega": float(omega),
        "phase": float(phase),
    }
    return PotentialPair(A, V, 1, support, dA, dV, recipe=recipe)


def sum_potentials(*ps):
    """Pointwise sum of abelian potential pairs."""
    def A(x, t):
        return sum(p.A(x, t) for p in ps)

    def V(x, t):
        return sum(p.V(x, t) for p in ps)

    def dA(x, t):
        parts = [p.A_partials(x, t) for p in ps]
        return sum(q[0] for q in parts), sum(q[1] for q in parts)

    def dV(x, t):
        parts = [p.V_partials(x, t) for p in ps]
        return sum(q[0] for q in parts), sum(q[1] for q in parts)

    return PotentialPair(A, V, 1, max(p.support_radius for p in ps), dA, dV,
                         recipe={"kind": "sum", "terms": [p.recipe for p in ps]})


class TermSum:
    """Scalar function given as a sum of monomial and trigonometric terms.

    Monomial term: ``{"coef": c, "powers": [px, py, pt]}``.
    Trigonometric term: ``{"coef": c, "trig": "sin" | "cos", "k": [kx, ky, w],
    "phase": phi}`` meaning ``c * trig(kx x1 + ky x2 + w t + phi)``.
    """

    def __init__(self, terms):
        self.terms = [dict(term) for term in terms]
        for term in self.terms:
            if "powers" not in term and "trig" not in term:
                raise ValueError(f"term needs 'powers' or 'trig': {term}")

    def __call__(self, x, t):
        x, t = _broadcast_t(x, t)
        coords = (x[..., 0], x[..., 1], t)
        out = np.zeros(t.shape)
        for term in self.terms:
            c = float(term.get("coef", 1.0))
            if "powers" in term:
                pw = [int(v) for v in term["powers"]]
                out = out + c * coords[0] ** pw[0] * coords[1] ** pw[1] * coords[2] ** pw[2]
            else:
                k = [float(v) for v in term["k"]]
                arg = k[0] * coords[0] + k[1] * coords[1] + k[2] * coords[2] + float(term.get("phase", 0.0))
                out = out + c * (np.sin(arg) if term["trig"] == "sin" else np.cos(arg))
        return out

    def derivative(self, axis):
        """Exact partial derivative along x1 (0), x2 (1) or t (2)."""
        out = []
        for term in self.terms:
            c = float(term.get("coef", 1.0))
            if "powers" in term:
                pw = [int(v) for v in term["powers"]]
                if pw[axis] == 0:
                    continue
                c *= pw[axis]
                pw[axis] -= 1
                out.append({"coef": c, "powers": pw})
            else:
                k = float(term["k"][axis])
                if k == 0.0:
                    continue
                trig = "cos" if term["trig"] == "sin" else "sin"
                sign = 1.0 if term["trig"] == "sin" else -1.0
                out.append({"coef": sign * c * k, "trig": trig, "k": list(term["k"]),
                            "phase": float(term.get("phase", 0.0))})
        return TermSum(out)

    def partial(self, x, t, axis):
        return self.derivative(axis)(x, t)


def term_potential(A1_terms=(), A2_terms=(), V_terms=(), support_radius=np.inf):
    """Abelian potential from coefficient tables (see :class:`TermSum`)."""
    a1, a2, v = TermSum(A1_terms), TermSum(A2_terms), TermSum(V_terms)

    def A(x, t):
        return np.stack([a1(x, t), a2(x, t)], axis=-1)

    def V(x, t):
        return v(x, t)

    def dA(x, t):
        jac = np.stack([
            np.stack([a1.partial(x, t, 0), a1.partial(x, t, 1)], -1),
            np.stack([a2.partial(x, t, 0), a2.partial(x, t, 1)], -1),
        ], axis=-2)
        return jac, np.stack([a1.partial(x, t, 2), a2.partial(x, t, 2)], -1)

    def dV(x, t):
        return np.stack([v.partial(x, t, 0), v.partial(x, t, 1)], -1), v.partial(x, t, 2)

    recipe = {"kind": "terms", "A1": a1.terms, "A2": a2.terms, "V": v.terms}
    return PotentialPair(A, V, 1, support_radius, dA, dV, recipe=recipe)


# --------------------------------------------------------------------------
# mollifiers


@lru_cache(maxsize=None)
def _bump_norms():
    bump = lambda u: np.exp(-1.0 / (1.0 - u * u)) if abs(u) < 1 else 0.0
    z1 = integrate.quad(bump, -1, 1, epsabs=0, epsrel=1e-13, limit=200)[0]
    z2 = 2 * np.pi * integrate.quad(lambda u: bump(u) * u, 0, 1, epsabs=0, epsrel=1e-13, limit=200)[0]
    zsq = integrate.quad(lambda u: bump(u) ** 2, -1, 1, epsabs=0, epsrel=1e-13, limit=200)[0]
    return z1, z2, zsq


def unit_bump(u):
    """``exp(-1/(1-u^2))`` on (-1, 1), zero elsewhere (unnormalised)."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    out = np.zeros(u.shape)
    uu = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - uu * uu))
    return out


def _unit_bump_dprime(u):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    out = np.zeros(u.shape)
    uu = u[inside]
    q = 1.0 - uu * uu
    out[inside] = np.exp(-1.0 / q) * (-2.0 * uu / (q * q))
    return out


def unit_step(u):
    """Smooth step: the normalised antiderivative of the unit bump."""
    u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    # normalised by the same rule so the step reaches exactly 1 at u = 1
    z = fixed_gauss(unit_bump, np.array([-1.0]), np.array([1.0]), n=64)[0]
    val = fixed_gauss(unit_bump, np.full(u.shape, -1.0), u, n=64) / z
    return np.where(u >= 1.0, 1.0, np.where(u <= -1.0, 0.0, val))


@dataclass(frozen=True)
class MollifierProfile:
    """Normalised C-infinity bump of half-width ``width`` and its relatives."""

    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("mollifier width must be positive")

    def __call__(self, s):
        d = self.width
        return unit_bump(np.asarray(s, dtype=float) / d) / (_bump_norms()[0] * d)

    def derivative(self, s):
        d = self.width
        return _unit_bump_dprime(np.asarray(s, dtype=float) / d) / (_bump_norms()[0] * d * d)

    def step(self, s):
        """Smooth Heaviside: integral of the bump from -inf to s."""
        return unit_step(np.asarray(s, dtype=float) / self.width)

    def radial(self, r):
        """Radially symmetric 2D density with unit integral."""
        d = self.width
        return unit_bump(np.asarray(r, dtype=float) / d) / (_bump_norms()[1] * d * d)

    def enclosed(self, r):
        """Fraction of the radial density inside radius r."""
        z2 = _bump_norms()[1]
        u = np.clip(np.asarray(r, dtype=float) / self.width, 0.0, 1.0)
        return 2 * np.pi * fixed_gauss(lambda s: unit_bump(s) * s, np.zeros(u.shape), u, n=64) / z2


# --------------------------------------------------------------------------
# paths and line integrals


@dataclass(frozen=True, eq=False)
class SpacetimePath:
    """Piecewise-linear path through samples ``(x1, x2, t)``."""

    samples: np.ndarray
    closed: bool = False

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3 or s.shape[0] < 2:
            raise ValueError("samples must have shape (N >= 2, 3)")
        if self.closed and np.max(np.abs(s[0] - s[-1])) > 1e-12:
            raise ValueError("closed path must end where it starts")
        object.__setattr__(self, "samples", s)

    @classmethod
    def spatial(cls, points, t, closed=None):
        pts = np.asarray(points, dtype=float)
        s = np.column_stack([pts, np.full(len(pts), float(t))])
        if closed is None:
            closed = bool(np.max(np.abs(pts[0] - pts[-1])) <= 1e-12)
        return cls(s, closed)

    @classmethod
    def from_points(cls, points, closed=False):
        pts = np.asarray(points, dtype=float)
        if closed and np.max(np.abs(pts[0] - pts[-1])) > 1e-12:
            pts = np.vstack([pts, pts[:1]])
        return cls(pts, closed)

    def reversed(self):
        return SpacetimePath(self.samples[::-1].copy(), self.closed)

    def __add__(self, other):
        if np.max(np.abs(self.samples[-1] - other.samples[0])) > 1e-12:
            raise ValueError("paths do not join")
        s = np.vstack([self.samples, other.samples[1:]])
        return SpacetimePath(s, bool(np.max(np.abs(s[0] - s[-1])) <= 1e-12))

    @property
    def n_segments(self):
        return len(self.samples) - 1


def _segment_integral(path, integrand, quad):
    seg = path.samples
    n = len(seg) - 1
    start = seg[:-1]
    delta = np.diff(seg, axis=0)

    def f(u):
        k = np.minimum(np.floor(u).astype(int), n - 1)
        s = u - k
        X = start[k] + s[:, None] * delta[k]
        return integrand(X[:, :2], X[:, 2], delta[k])

    # every segment gets at least one panel per 0.25 of spacetime length
    longest = float(np.max(np.linalg.norm(delta, axis=1))) if n else 0.0
    per_seg = max(quad.initial_panels, 1, int(np.ceil(longest / 0.25)))
    cfg = QuadConfig(quad.tol, quad.max_depth, quad.order, per_seg * n)
    return adaptive_integrate(f, 0.0, float(n), cfg)


def line_integral_em(p: PotentialPair, path: SpacetimePath, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """Integral of ``A . dx - V dt`` along a spacetime path."""
    if not p.abelian:
        raise ValueError("line_integral_em needs an abelian potential")

    def integrand(x, t, d):
        return np.sum(p.A(x, t) * d[:, :2], axis=-1) - p.V(x, t) * d[:, 2]

    return float(_segment_integral(path, integrand, quad))


# --------------------------------------------------------------------------
# surfaces and fluxes


def two_form(f: FieldStrength, X, a, b):
    """``F(a, b)`` at spacetime points X for tangent vectors a and b."""
    x, t = X[..., :2], X[..., 2]
    B3 = f.B3(x, t)
    E = f.E(x, t)
    return (B3 * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
            + E[..., 0] * (a[..., 0] * b[..., 2] - a[..., 2] * b[..., 0])
            + E[..., 1] * (a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]))


@dataclass(frozen=True, eq=False)
class ParametricPatch:
    """Surface ``X(u, v)`` over a parameter rectangle, oriented by (u, v).

    ``X`` maps arrays u, v to points of shape (..., 3) ordered (x1, x2, t).
    Tangents come from ``tangents(u, v)`` when given, else central
    differences with step ``h``.
    """

    X: Callable
    u_range: tuple
    v_range: tuple
    tangents: Optional[Callable] = None
    h: float = 1e-6
    initial_panels: int = 2

    def _tangents(self, u, v):
        if self.tangents is not None:
            return self.tangents(u, v)
        h = self.h
        Xu = (self.X(u + h, v) - self.X(u - h, v)) / (2 * h)
        Xv = (self.X(u, v + h) - self.X(u, v - h)) / (2 * h)
        return Xu, Xv

    def integrand(self, f):
        def g(u, v):
            Xu, Xv = self._tangents(u, v)
            return two_form(f, self.X(u, v), Xu, Xv)
        return g

    def boundary(self, n=64):
        """Boundary loop of the parameter rectangle, positively oriented."""
        (u0, u1), (v0, v1) = self.u_range, self.v_range
        s = np.linspace(0, 1, n, endpoint=False)
        u = np.concatenate([u0 + (u1 - u0) * s, np.full(n, u1), u1 - (u1 - u0) * s, np.full(n, u0), [u0]])
        v = np.concatenate([np.full(n, v0), v0 + (v1 - v0) * s, np.full(n, v1), v1 - (v1 - v0) * s, [v0]])
        return SpacetimePath(self.X(u, v), closed=True)


def spatial_rectangle(lo, hi, t, initial_panels=2):
    """Region ``[lo, hi]`` of the plane at fixed t, oriented dx1^dx2."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)

    def X(u, v):
        u, v = np.broadcast_arrays(u, v)
        return np.stack([u, v, np.full(u.shape, float(t))], axis=-1)

    def tan(u, v):
        u, v = np.broadcast_arrays(u, v)
        one, zero = np.ones(u.shape), np.zeros(u.shape)
        return np.stack([one, zero, zero], -1), np.stack([zero, one, zero], -1)

    return ParametricPatch(X, (lo[0], hi[0]), (lo[1], hi[1]), tan, initial_panels=initial_panels)


def spatial_disk(center, radius, t, initial_panels=2):
    """Disk at fixed t in polar parameters (r, phi), oriented dx1^dx2."""
    c = np.asarray(center, dtype=float)

    def X(r, a):
        r, a = np.broadcast_arrays(r, a)
        return np.stack([c[0] + r * np.cos(a), c[1] + r * np.sin(a), np.full(r.shape, float(t))], -1)

    def tan(r, a):
        r, a = np.broadcast_arrays(r, a)
        zero = np.zeros(r.shape)
        return (np.stack([np.cos(a), np.sin(a), zero], -1),
                np.stack([-r * np.sin(a), r * np.cos(a), zero], -1))

    return ParametricPatch(X, (0.0, float(radius)), (0.0, 2 * np.pi), tan, initial_panels=initial_panels)


def cross_section(x1, x2_range, t_range, orientation="x2t", initial_panels=2):
    """Rectangle in the plane ``x1 = const`` spanned by x2 and t.

    ``orientation="x2t"`` orients the patch by dx2^dt (flux = integral of
    E2); ``"tx2"`` by dt^dx2 (flux = minus that integral).
    """
    def make(first, second):
        def X(u, v):
            u, v = np.broadcast_arrays(u, v)
            x2, t = (u, v) if first == "x2" else (v, u)
            return np.stack([np.full(u.shape, float(x1)), x2, t], -1)

        def tan(u, v):
            u, v = np.broadcast_arrays(u, v)
            zero, one = np.zeros(u.shape), np.ones(u.shape)
            ex2 = np.stack([zero, one, zero], -1)
            et = np.stack([zero, zero, one], -1)
            return (ex2, et) if first == "x2" else (et, ex2)
        return X, tan

    if orientation == "x2t":
        X, tan = make("x2", "t")
        return ParametricPatch(X, tuple(x2_range), tuple(t_range), tan, initial_panels=initial_panels)
    if orientation == "tx2":
        X, tan = make("t", "x2")
        return ParametricPatch(X, tuple(t_range), tuple(x2_range), tan, initial_panels=initial_panels)
    raise ValueError("orientation must be 'x2t' or 'tx2'")


@dataclass(frozen=True, eq=False)
class TriangulatedPatch:
    """Oriented flat triangles with vertices in (x1, x2, t) space."""

    vertices: np.ndarray
    triangles: np.ndarray

    def pieces(self):
        V = np.asarray(self.vertices, dtype=float)
        for i, j, k in np.asarray(self.triangles, dtype=int):
            P0, P1, P2 = V[i], V[j], V[k]
            e1, e2 = P1 - P0, P2 - P1

            # collapsed square: X = P0 + u e1 + u v e2
            def X(u, v, P0=P0, e1=e1, e2=e2):
                u, v = np.broadcast_arrays(u, v)
                return P0 + u[..., None] * e1 + (u * v)[..., None] * e2

            def tan(u, v, e1=e1, e2=e2):
                u, v = np.broadcast_arrays(u, v)
                return e1 + v[..., None] * e2, u[..., None] * e2

            yield ParametricPatch(X, (0.0, 1.0), (0.0, 1.0), tan, initial_panels=1)


SURFACE_QUAD = QuadConfig(tol=1e-10, max_depth=12, order=8)


def surface_flux(f: FieldStrength, surface, quad: QuadConfig = SURFACE_QUAD) -> float:
    """Integral of the two-form of ``f`` over an oriented patch."""
    if isinstance(surface, TriangulatedPatch):
        pieces = list(surface.pieces())
        cfg = replace(quad, tol=quad.tol / max(len(pieces), 1))
        return float(sum(surface_flux(f, piece, cfg) for piece in pieces))
    cfg = replace(quad, initial_panels=max(quad.initial_panels, surface.initial_panels))
    return float(adaptive_integrate_2d(surface.integrand(f), surface.u_range, surface.v_range, cfg))


# --------------------------------------------------------------------------
# profiles and shielded scenarios


@dataclass(frozen=True)
class SmoothStepProfile:
    """``before`` for t <= t1, ``after`` for t >= t1 + eps, C-infinity between."""

    before: float
    after: float
    t1: float
    eps: float

    def __call__(self, t):
        u = (np.asarray(t, dtype=float) - self.t1) / self.eps
        return self.before + (self.after - self.before) * unit_step(2 * u - 1)

    def derivative(self, t):
        u = (np.asarray(t, dtype=float) - self.t1) / self.eps
        return (self.after - self.before) * (2 / self.eps) * unit_bump(2 * u - 1) / _bump_norms()[0]

    def constant_outside(self):
        return self.t1, self.t1 + self.eps


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def __call__(self, t):
        return np.full(np.shape(t), float(self.value))

    def derivative(self, t):
        return np.zeros(np.shape(t))

    def constant_outside(self):
        return np.inf, -np.inf


def _profile_derivative(profile, t, h=1e-5):
    if hasattr(profile, "derivative"):
        return profile.derivative(t)
    return (profile(t + h) - profile(t - h)) / (2 * h)


def _moving_disk_domain(v0, r1, outer_radius, T):
    obstacle = Obstacle(Disk((0.0, 0.0), r1), Translation.linear((v0, 0.0)))
    domain = Domain(OuterDisk((0.0, 0.0), outer_radius), [obstacle], (0.0, T), validate=False)
    problems = domain.diagnose()
    if problems:
        raise InvalidScenario("; ".join(problems))
    return domain


def vortex_potential(flux, center=(0.0, 0.0), velocity=(0.0, 0.0), core=None):
    """Aharonov-Bohm vortex ``A = flux(t)/(2 pi) (-y, x') / r^2``.

    ``flux`` may be a number or a profile ``b(t)``; the centre moves with
    constant ``velocity``. With ``core`` (a mollifier width) the magnetic
    field is a smooth radial bump instead of a point flux; outside that core
    the potential equals the singular vortex exactly.
    """
    b = flux if callable(flux) else ConstantProfile(float(flux))
    c = np.asarray(center, dtype=float)
    vel = np.asarray(velocity, dtype=float)
    moll = MollifierProfile(core) if core else None

    def rel(x, t):
        return x - c - t[..., None] * vel

    def A(x, t):
        x, t = _broadcast_t(x, t)
        d = rel(x, t)
        r2 = np.sum(d * d, axis=-1)
        if moll is None:
            w = 1.0 / r2
        else:
            small = r2 < 1e-16
            safe = np.where(small, 1.0, r2)
            w = np.where(small, np.pi * moll.radial(0.0), moll.enclosed(np.sqrt(safe)) / safe)
        return (b(t) / (2 * np.pi) * w)[..., None] * np.stack([-d[..., 1], d[..., 0]], -1)

    def V(x, t):
        return np.zeros(np.shape(x)[:-1])

    def dV(x, t):
        x, t = _broadcast_t(x, t)
        return np.zeros(x.shape), np.zeros(t.shape)

    recipe = {"kind": "vortex", "flux": getattr(b, "value", None), "center": c.tolist(),
            "velocity": vel.tolist(), "core": core}
    return PotentialPair(A, V, 1, np.inf, None, dV, recipe=recipe)


def build_shielded_scenario(kind, profile, v0, r1, delta, outer_radius=5.0, T=4.0):
    """Potentials, fields and domain of a field shielded by a moving disk.

    ``kind="magnetic"``: magnetic flux ``b(t)`` carried by a radial bump of
    width ``delta`` centred on the obstacle at ``(v0 t, 0)``; V = 0.

    ``kind="electric"``: the mollified pair whose electric component is
    carried by ``bump(x1 - v0 t) bump(x2) e(t)`` and whose magnetic field is
    ``-(1/v0) bump(x1 - v0 t) bump(x2) e(t)`` plus the smoothed wake
    ``-(1/v0^2) step(x1 - v0 t) bump(x2) e'(x1/v0)``. The returned ``E``
    follows ``E = -dA/dt - dV/dx``, which makes its x2 component the negative
    of the carrier above.
    """
    if delta > r1 / 4:
        raise InvalidScenario(f"mollifier exceeds shielding bound: delta={delta} > r1/4={r1 / 4}")
    domain = _moving_disk_domain(v0, r1, outer_radius, T)
    moll = MollifierProfile(delta)
    if kind == "magnetic":
        b = profile if callable(profile) else ConstantProfile(float(profile))
        p = vortex_potential(b, velocity=(v0, 0.0), core=delta)
        p = replace(p, recipe={"kind": "shielded-magnetic", "v0": v0, "r1": r1, "delta": delta})
        fd = derived_fields(p)

        def B3(x, t):
            x, t = _broadcast_t(x, t)
            d = x - np.stack([v0 * t, np.zeros(t.shape)], -1)
            return b(t) * moll.radial(np.linalg.norm(d, axis=-1))

        return p, FieldStrength(B3, fd.E), domain

    if kind != "electric":
        raise InvalidScenario(f"unknown scenario kind {kind!r}")
    if not v0 > 0:
        raise InvalidScenario("electric scenario needs v0 > 0")
    e = profile if callable(profile) else ConstantProfile(float(profile))
    t_start, _ = e.constant_outside() if hasattr(e, "constant_outside") else (np.inf, None)
    if t_start * v0 < delta:
        raise InvalidScenario("profile must stay constant until the mollified core has left x1 = 0")
    e0 = float(e(0.0))

    def trailing(x1, t, fn):
        # integral of bump(u) fn((x1 - u)/v0) over u in [x1 - v0 t, x1]
        a = np.maximum(x1 - v0 * t, -delta)
        bnd = np.minimum(x1, delta)
        ok = bnd > a
        lo = np.where(ok, a, 0.0)
        hi = np.where(ok, bnd, 0.0)
        out = np.zeros(np.shape(x1))
        if ok.any():
            xs = x1[ok][..., None]
            out[ok] = fixed_gauss(lambda u: moll(u) * fn((xs - u) / v0), lo[ok], hi[ok], n=48)
        return out

    def G(x1, t):
        return (-(e0 * moll.step(x1) + e(x1 / v0) - e0) + trailing(x1, t, e)) / v0

    def dG_dx1(x1, t):
        de = lambda s: _profile_derivative(e, s)
        wake = de(x1 / v0) - trailing(x1, t, de)
        return -moll(x1 - v0 * t) * e(t) / v0 - wake / v0**2

    def carrier(x, t):
        return moll(x[..., 0] - v0 * t) * moll(x[..., 1]) * e(t)

    def A(x, t):
        x, t = _broadcast_t(x, t)
        A2 = moll(x[..., 1]) * G(x[..., 0], t)
        return np.stack([np.zeros(t.shape), A2], -1)

    def V(x, t):
        return np.zeros(np.shape(x)[:-1])

    def dA(x, t):
        x1, x2 = x[..., 0], x[..., 1]
        jac = np.zeros(x.shape + (2,))
        jac[..., 1, 0] = moll(x2) * dG_dx1(x1, t)
        jac[..., 1, 1] = moll.derivative(x2) * G(x1, t)
        At = np.stack([np.zeros(t.shape), carrier(x, t)], -1)
        return jac, At

    def dV(x, t):
        return np.zeros(x.shape), np.zeros(t.shape)

    recipe = {"kind": "shielded-electric", "v0": v0, "r1": r1, "delta": delta}
    p = PotentialPair(A, V, 1, np.inf, dA, dV, recipe=recipe)

    def B3(x, t):
        x, t = _broadcast_t(x, t)
        return moll(x[..., 1]) * dG_dx1(x[..., 0], t)

    def E(x, t):
        x, t = _broadcast_t(x, t)
        return np.stack([np.zeros(t.shape), -carrier(x, t)], -1)

    return p, FieldStrength(B3, E), domain


# --------------------------------------------------------------------------
# export


FIELD_COLUMNS = ("x1", "x2", "t", "A1", "A2", "V", "B3", "E1", "E2")


def field_samples(p: PotentialPair, points, times, fields: Optional[FieldStrength] = None):
    """Rows ``(x1, x2, t, A1, A2, V, B3, E1, E2)`` for every point and time."""
    f = fields or derived_fields(p)
    pts = np.asarray(points, dtype=float)
    rows = []
    for t in np.atleast_1d(times):
        tt = np.full(len(pts), float(t))
        A = p.A(pts, tt)
        V = p.V(pts, tt)
        B = f.B3(pts, tt)
        E = f.E(pts, tt)
        for k in range(len(pts)):
            rows.append((pts[k, 0], pts[k, 1], float(t), A[k, 0], A[k, 1], V[k], B[k], E[k, 0], E[k, 1]))
    return rows


def write_field_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# matrix potentials


PAULI = {
    "I": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _as_matrix(entry, m=2):
    if entry is None:
        return np.zeros((m, m), dtype=complex)
    if isinstance(entry, str):
        return PAULI[entry]
    if isinstance(entry, dict):
        return sum(float(c) * PAULI[k] for k, c in entry.items())
    return np.asarray(entry, dtype=complex)


def matrix_bump_potential(terms, m=2):
    """Matrix potential built from compact bumps times fixed Hermitian matrices.

    Each term is a dict with ``center``, ``width`` and any of ``A1``, ``A2``,
    ``V`` given as a Pauli label (``"x"``), a dict of Pauli weights
    (``{"x": 0.5, "z": -1}``) or an explicit matrix. The bump is
    ``exp(1 - 1/(1 - r^2/width^2))``, equal to 1 at its centre; with
    ``profile="gaussian"`` it is ``exp(-r^2/width^2)`` instead.
    """
    parsed = []
    for term in terms:
        c = np.asarray(term.get("center", (0.0, 0.0)), dtype=float)
        w = float(term.get("width", 1.0))
        profile = term.get("profile", "bump")
        if profile not in ("bump", "gaussian"):
            raise ValueError(f"unknown profile {profile!r}")
        parsed.append((c, w, _as_matrix(term.get("A1"), m), _as_matrix(term.get("A2"), m),
                       _as_matrix(term.get("V"), m), profile))
        for M in parsed[-1][2:5]:
            if np.max(np.abs(M - M.conj().T)) > 1e-12:
                raise ValueError("matrix coefficients must be Hermitian")

    def bump(x, c, w, profile):
        r2 = np.sum((x - c) ** 2, axis=-1) / (w * w)
        if profile == "gaussian":
            return np.exp(-r2)
        return np.e * unit_bump(np.sqrt(r2))

    def A(x, t):
        x, t = _broadcast_t(x, t)
        out = np.zeros(x.shape[:-1] + (2, m, m), dtype=complex)
        for c, w, A1, A2, _, prof in parsed:
            b = bump(x, c, w, prof)[..., None, None]
            out[..., 0, :, :] += b * A1
            out[..., 1, :, :] += b * A2
        return out

    def V(x, t):
        x, t = _broadcast_t(x, t)
        out = np.zeros(x.shape[:-1] + (m, m), dtype=complex)
        for c, w, _, _, Vm, prof in parsed:
            out += bump(x, c, w, prof)[..., None, None] * Vm
        return out

    reach = {"bump": 1.0, "gaussian": np.sqrt(-np.log(1e-17))}
    support = max((float(np.linalg.norm(c) + reach[prof] * w) for c, w, *_, prof in parsed), default=0.0)
    recipe = {"kind": "matrix-bump", "terms": [dict(t) for t in terms]}
    return PotentialPair(A, V, m, support, recipe=recipe)
