"""Gauge transformations, holonomies and gauge-equivalence decisions.

Abelian gauge elements are ``c = exp(i phi)`` with
``phi = sum_j m_j theta_j + psi``: ``theta_j`` is the polar angle about the
(moving) reference point of obstacle j and ``psi`` is single valued. A
potential transforms as ``A' = A - grad phi``, ``V' = V + d(phi)/dt``, which
is ``A + i c^-1 grad c`` and ``V - i c^-1 dc/dt``.

Matrix gauges ``g`` act by ``A'_k = g^-1 A_k g + i g^-1 d_k g`` and
``V' = g^-1 V g - i g^-1 dg/dt``.
"""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ClearanceTooLarge,
    PathBlocked,
    PreconditionViolated,
    SingularGauge,
    UndersampledLoop,
)
from .fields import (
    PotentialPair,
    SpacetimePath,
    TermSum,
    _broadcast_t,
    _unit_bump_dprime,
    line_integral_em,
    unit_bump,
)
from .geometry import Disk, Domain, OuterDisk, generator_loops
from .quadrature import DEFAULT_QUAD, QuadConfig

DEFAULT_TOL_H = 1e-6
SINGULAR_TOL = 1e-9


# --------------------------------------------------------------------------
# scalar phases with derivatives up to second order


@dataclass(frozen=True)
class PhaseDerivatives:
    val: np.ndarray
    grad: np.ndarray
    dt: np.ndarray
    hxx: np.ndarray
    hxt: np.ndarray
    htt: np.ndarray

    def __add__(self, other):
        return PhaseDerivatives(*(a + b for a, b in zip(self._parts(), other._parts())))

    def scaled(self, k):
        return PhaseDerivatives(*(k * a for a in self._parts()))

    def _parts(self):
        return (self.val, self.grad, self.dt, self.hxx, self.hxt, self.htt)


@dataclass(frozen=True)
class GaussianPhase:
    """``amp exp(-|x - center|^2 / width^2) cos(omega t + phase)``."""

    amp: float
    center: tuple = (0.0, 0.0)
    width: float = 1.0
    omega: float = 0.0
    phase: float = 0.0

    @property
    def support_radius(self):
        return float(np.linalg.norm(self.center) + self.width * np.sqrt(-np.log(1e-17)))

    def derivs(self, x, t):
        x, t = _broadcast_t(x, t)
        c = np.asarray(self.center, dtype=float)
        w2 = self.width**2
        d = x - c
        g = self.amp * np.exp(-np.sum(d * d, axis=-1) / w2)
        arg = self.omega * t + self.phase
        tau, dtau, ddtau = np.cos(arg), -self.omega * np.sin(arg), -self.omega**2 * np.cos(arg)
        grad_g = -2.0 * d / w2 * g[..., None]
        hess_g = (4.0 * d[..., :, None] * d[..., None, :] / w2**2 - 2.0 * np.eye(2) / w2) * g[..., None, None]
        return PhaseDerivatives(
            g * tau,
            grad_g * tau[..., None],
            g * dtau,
            hess_g * tau[..., None, None],
            grad_g * dtau[..., None],
            g * ddtau,
        )


@dataclass(frozen=True)
class BumpPhase:
    """Compactly supported ``amp f(|x - center| / width) cos(omega t + phase)``.

    ``f(u) = exp(1 - 1/(1 - u^2))`` for u < 1 (so f(0) = 1) and 0 beyond.
    """

    amp: float
    center: tuple = (0.0, 0.0)
    width: float = 1.0
    omega: float = 0.0
    phase: float = 0.0

    @property
    def support_radius(self):
        return float(np.linalg.norm(self.center) + self.width)

    def derivs(self, x, t):
        x, t = _broadcast_t(x, t)
        d = x - np.asarray(self.center, dtype=float)
        r = np.linalg.norm(d, axis=-1)
        w = self.width
        u = r / w
        inside = u < 1
        q = np.where(inside, 1 - u * u, 1.0)
        f = np.where(inside, np.exp(1 - 1 / q), 0.0)
        g = -2 * u / q**2
        gp = -2 / q**2 - 8 * u * u / q**3
        fr = f * g / w
        frr = f * (g * g + gp) / w**2
        small = r < 1e-12
        safe = np.where(small, 1.0, r)
        e = d / safe[..., None]
        fr_over_r = np.where(small, frr, fr / safe)
        eye = np.eye(2)
        ee = e[..., :, None] * e[..., None, :]
        hess = frr[..., None, None] * ee + fr_over_r[..., None, None] * (eye - ee)
        hess = np.where(small[..., None, None], frr[..., None, None] * eye, hess)
        grad = fr[..., None] * e
        arg = self.omega * t + self.phase
        tau, dtau, ddtau = np.cos(arg), -self.omega * np.sin(arg), -self.omega**2 * np.cos(arg)
        a = self.amp
        return PhaseDerivatives(a * f * tau, a * grad * tau[..., None], a * f * dtau,
                                a * hess * tau[..., None, None], a * grad * dtau[..., None], a * f * ddtau)


@dataclass(frozen=True)
class TermPhase:
    """Phase given by a coefficient table (see :class:`abflux.fields.TermSum`)."""

    terms: tuple
    support_radius: float = np.inf

    def derivs(self, x, t):
        f = TermSum(self.terms)
        d = [f.derivative(k) for k in range(3)]
        dd = [[d[i].derivative(j) for j in range(3)] for i in range(3)]
        grad = np.stack([d[0](x, t), d[1](x, t)], -1)
        hxx = np.stack([
            np.stack([dd[0][0](x, t), dd[0][1](x, t)], -1),
            np.stack([dd[0][1](x, t), dd[1][1](x, t)], -1),
        ], -2)
        hxt = np.stack([dd[0][2](x, t), dd[1][2](x, t)], -1)
        return PhaseDerivatives(f(x, t), grad, d[2](x, t), hxx, hxt, dd[2][2](x, t))


@dataclass(frozen=True, eq=False)
class FDPhase:
    """Phase given by a plain callable; derivatives by central differences."""

    fn: Callable
    h: float = 1e-4
    support_radius: float = np.inf

    def derivs(self, x, t):
        x, t = _broadcast_t(x, t)
        h = self.h
        f = self.fn
        e = [np.array([h, 0.0]), np.array([0.0, h])]
        v = f(x, t)
        grad = np.stack([(f(x + e[k], t) - f(x - e[k], t)) / (2 * h) for k in range(2)], -1)
        dt = (f(x, t + h) - f(x, t - h)) / (2 * h)
        hxx = np.empty(x.shape + (2,))
        for i in range(2):
            for j in range(2):
                if i == j:
                    hxx[..., i, i] = (f(x + e[i], t) - 2 * v + f(x - e[i], t)) / h**2
                else:
                    hxx[..., i, j] = (f(x + e[i] + e[j], t) - f(x + e[i] - e[j], t)
                                      - f(x - e[i] + e[j], t) + f(x - e[i] - e[j], t)) / (4 * h * h)
        hxt = np.stack([(f(x + e[k], t + h) - f(x + e[k], t - h) - f(x - e[k], t + h)
                         + f(x - e[k], t - h)) / (4 * h * h) for k in range(2)], -1)
        htt = (f(x, t + h) - 2 * v + f(x, t - h)) / h**2
        return PhaseDerivatives(v, grad, dt, hxx, hxt, htt)


def _angle_derivs(obstacle, x, t, accel_h=1e-5):
    x, t = _broadcast_t(x, t)
    d = x - obstacle.centers(t)
    r2 = np.sum(d * d, axis=-1)
    if np.any(r2 < SINGULAR_TOL**2):
        raise SingularGauge("angle function evaluated at an obstacle's reference point")
    v = obstacle.center_velocities(t)
    acc = (obstacle.center_velocities(t + accel_h) - obstacle.center_velocities(t - accel_h)) / (2 * accel_h)
    d1, d2 = d[..., 0], d[..., 1]
    grad = np.stack([-d2, d1], -1) / r2[..., None]
    r4 = r2 * r2
    hxx = np.stack([
        np.stack([2 * d1 * d2, d2 * d2 - d1 * d1], -1),
        np.stack([d2 * d2 - d1 * d1, -2 * d1 * d2], -1),
    ], -2) / r4[..., None, None]
    hv = np.einsum("...ij,...j->...i", hxx, v)
    return PhaseDerivatives(
        np.arctan2(d2, d1),
        grad,
        -np.sum(grad * v, axis=-1),
        hxx,
        -hv,
        np.sum(v * hv, axis=-1) - np.sum(grad * acc, axis=-1),
    )


# --------------------------------------------------------------------------
# gauge elements


@dataclass(frozen=True, eq=False)
class PhaseGauge:
    """Abelian gauge element ``exp(i (sum_j m_j theta_j + psi))``.

    ``psi`` is an object with a ``derivs(x, t)`` method (GaussianPhase,
    TermPhase or FDPhase) or None. ``windings`` lists m_j per obstacle of
    ``domain``.
    """

    psi: Optional[object] = None
    windings: tuple = ()
    domain: Optional[Domain] = None
    boundary_trivial: bool = False

    def __post_init__(self):
        w = tuple(int(m) for m in self.windings)
        object.__setattr__(self, "windings", w)
        if any(w):
            if self.domain is None or len(self.domain.obstacles) != len(w):
                raise ValueError("windings need a domain with one obstacle per entry")

    def derivs(self, x, t):
        x, t = _broadcast_t(x, t)
        zero = PhaseDerivatives(np.zeros(t.shape), np.zeros(x.shape), np.zeros(t.shape),
                                np.zeros(x.shape + (2,)), np.zeros(x.shape), np.zeros(t.shape))
        out = zero
        if self.psi is not None:
            out = out + self.psi.derivs(x, t)
        for m, obs in zip(self.windings, self.domain.obstacles if self.domain else ()):
            if m:
                out = out + _angle_derivs(obs, x, t).scaled(m)
        return out

    def phase(self, x, t):
        return self.derivs(x, t).val

    def phase_grad(self, x, t):
        return self.derivs(x, t).grad

    def phase_dt(self, x, t):
        return self.derivs(x, t).dt

    def __call__(self, x, t):
        return np.exp(1j * self.phase(x, t))

    def boundary_defect(self, domain: Domain, n=256, n_times=9):
        """Max of ``|c - 1|`` on outer-boundary samples."""
        pts = domain.outer.boundary_points(n)
        worst = 0.0
        for t in np.linspace(domain.t_span[0], domain.t_span[1], n_times):
            worst = max(worst, float(np.max(np.abs(self(pts, t) - 1.0))))
        return worst

    def check_boundary_trivial(self, domain: Domain, tol=1e-12):
        if self.boundary_trivial and self.boundary_defect(domain) > tol:
            raise ValueError("gauge flagged boundary_trivial but c != 1 on the outer boundary")
        return True


IDENTITY_GAUGE = PhaseGauge()


@dataclass(frozen=True, eq=False)
class MatrixGauge:
    """Matrix gauge field ``g(x, t)``; ``dg(x, t)`` returns (d1 g, d2 g, dt g)."""

    g: Callable
    dg: Optional[Callable] = None
    h_fd: float = 1e-6

    def partials(self, x, t):
        if self.dg is not None:
            return self.dg(x, t)
        x, t = _broadcast_t(x, t)
        h = self.h_fd
        e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
        return ((self.g(x + e1, t) - self.g(x - e1, t)) / (2 * h),
                (self.g(x + e2, t) - self.g(x - e2, t)) / (2 * h),
                (self.g(x, t + h) - self.g(x, t - h)) / (2 * h))


def su2_bump_gauge(generator, center=(0.0, 0.0), width=0.5, amp=1.0):
    """``g = exp(i psi(x) S)`` with ``S^2 = I`` Hermitian and psi a compact bump.

    g is the identity outside the disk of radius ``width`` about ``center``.
    """
    S = np.asarray(generator, dtype=complex)
    if np.max(np.abs(S @ S - np.eye(len(S)))) > 1e-12 or np.max(np.abs(S - S.conj().T)) > 1e-12:
        raise ValueError("generator must be Hermitian with square identity")
    c = np.asarray(center, dtype=float)
    eye = np.eye(len(S))

    def psi(x):
        r = np.linalg.norm(x - c, axis=-1)
        return amp * unit_bump(r / width) / unit_bump(np.zeros(1))[0]

    def g(x, t):
        x, t = _broadcast_t(x, t)
        p = psi(x)[..., None, None]
        return np.cos(p) * eye + 1j * np.sin(p) * S

    def dg(x, t):
        x, t = _broadcast_t(x, t)
        d = x - c
        r = np.linalg.norm(d, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        dr = amp * _unit_bump_dprime(r / width) / width / unit_bump(np.zeros(1))[0]
        grad = (dr / safe)[..., None] * d
        gx = g(x, t)
        SG = np.einsum("ij,...jk->...ik", S, gx)
        return (1j * grad[..., 0, None, None] * SG, 1j * grad[..., 1, None, None] * SG,
                np.zeros(gx.shape, dtype=complex))

    return MatrixGauge(g, dg)


def apply_gauge(p: PotentialPair, c) -> PotentialPair:
    """Gauge-transformed potentials; field strengths are unchanged."""
    if isinstance(c, MatrixGauge):
        return _apply_matrix_gauge(p, c)
    if not p.abelian:
        raise ValueError("phase gauges act on abelian potentials")

    def A(x, t):
        return p.A(x, t) - c.phase_grad(x, t)

    def V(x, t):
        return p.V(x, t) + c.phase_dt(x, t)

    def dA(x, t):
        jac, At = p.A_partials(x, t)
        d = c.derivs(x, t)
        return jac - d.hxx, At - d.hxt

    def dV(x, t):
        grad, Vt = p.V_partials(x, t)
        d = c.derivs(x, t)
        return grad + d.hxt, Vt + d.htt

    support = p.support_radius
    if any(c.windings):
        support = np.inf
    elif c.psi is not None:
        support = max(support, getattr(c.psi, "support_radius", np.inf))
    recipe = {"kind": "gauged", "base": p.recipe, "windings": list(c.windings)}
    return PotentialPair(A, V, 1, support, dA, dV, p.h_fd, p.self_adjoint, recipe)


def _apply_matrix_gauge(p: PotentialPair, gauge: MatrixGauge) -> PotentialPair:
    def parts(x, t):
        x, t = _broadcast_t(x, t)
        g = gauge.g(x, t)
        det = np.abs(np.linalg.det(g))
        if np.any(det < SINGULAR_TOL):
            raise SingularGauge(f"|det g| = {float(det.min()):.3e} below {SINGULAR_TOL}")
        return x, t, g, np.linalg.inv(g)

    def A(x, t):
        x, t, g, gi = parts(x, t)
        d1, d2, _ = gauge.partials(x, t)
        Ak = np.asarray(p.A(x, t), dtype=complex)
        out = np.empty(Ak.shape, dtype=complex)
        for k, dk in enumerate((d1, d2)):
            out[..., k, :, :] = gi @ Ak[..., k, :, :] @ g + 1j * gi @ dk
        return out

    def V(x, t):
        x, t, g, gi = parts(x, t)
        _, _, dt = gauge.partials(x, t)
        return gi @ np.asarray(p.V(x, t), dtype=complex) @ g - 1j * gi @ dt

    recipe = {"kind": "gauged", "base": p.recipe, "matrix": True}
    return PotentialPair(A, V, p.m, p.support_radius, None, None, p.h_fd, p.self_adjoint, recipe)


# --------------------------------------------------------------------------
# holonomy


def holonomy(p: PotentialPair, loop: SpacetimePath, quad: QuadConfig = DEFAULT_QUAD) -> complex:
    """Nonintegrable phase factor ``exp(-i int (A . dx - V dt))`` of a closed loop."""
    if not loop.closed:
        raise ValueError("holonomy needs a closed loop")
    return complex(np.exp(-1j * line_integral_em(p, loop, quad)))


def difference_potential(p_a: PotentialPair, p_b: PotentialPair) -> PotentialPair:
    """The connection ``(A_b - A_a, V_b - V_a)``."""
    def A(x, t):
        return p_b.A(x, t) - p_a.A(x, t)

    def V(x, t):
        return p_b.V(x, t) - p_a.V(x, t)

    def dA(x, t):
        ja, ta = p_a.A_partials(x, t)
        jb, tb = p_b.A_partials(x, t)
        return jb - ja, tb - ta

    def dV(x, t):
        ga, ta = p_a.V_partials(x, t)
        gb, tb = p_b.V_partials(x, t)
        return gb - ga, tb - ta

    return PotentialPair(A, V, 1, max(p_a.support_radius, p_b.support_radius), dA, dV,
                         recipe={"kind": "difference", "a": p_a.recipe, "b": p_b.recipe})


def path_gauge_value(p_a: PotentialPair, p_b: PotentialPair, path: SpacetimePath,
                     quad: QuadConfig = DEFAULT_QUAD) -> complex:
    """``exp(i int_path (A_a - A_b) . dx + (V_b - V_a) dt)``.

    For ``p_b = apply_gauge(p_a, c)`` this equals ``c(end) / c(start)``.
    """
    return complex(np.exp(-1j * line_integral_em(difference_potential(p_a, p_b), path, quad)))


# --------------------------------------------------------------------------
# obstacle-avoiding polylines


def _support(shape, U):
    if isinstance(shape, Disk):
        return U @ shape.center + shape.radius
    return np.max(U @ shape.vertices.T, axis=1)


def _inflated_halfplanes(shape, clearance, n_sides):
    a = 2 * np.pi * (np.arange(n_sides) + 0.5) / n_sides
    U = np.column_stack([np.cos(a), np.sin(a)])
    return U, _support(shape, U) + clearance


def _halfplane_vertices(U, b):
    n = len(U)
    out = np.empty((n, 2))
    for k in range(n):
        M = np.vstack([U[k], U[(k + 1) % n]])
        out[k] = np.linalg.solve(M, [b[k], b[(k + 1) % n]])
    return out


def _segments_blocked(P, Q, U, b, eps=1e-9):
    """Whether segments P[i] -> Q[i] pass through the open polygon {U x < b}."""
    D = Q - P
    num = b[None, :] - eps - P @ U.T          # inside where num - s * den > 0
    den = D @ U.T
    with np.errstate(divide="ignore", invalid="ignore"):
        s = num / den
    lo = np.where(den < 0, s, -np.inf).max(axis=1)
    hi = np.where(den > 0, s, np.inf).min(axis=1)
    parallel_out = np.any((np.abs(den) <= 1e-300) & (num <= 0), axis=1)
    lo = np.maximum(lo, 0.0)
    hi = np.minimum(hi, 1.0)
    return (hi - lo > 1e-12) & ~parallel_out


def _push_out(point, shape, U, b, ref):
    d = point - ref
    nd = np.linalg.norm(d)
    if nd < 1e-12:
        raise PathBlocked("target coincides with an obstacle reference point")
    d = d / nd
    den = U @ d
    with np.errstate(divide="ignore"):
        s = np.where(den > 0, (b - U @ point) / den, np.inf)
    exit_s = float(np.min(s))
    return point + (exit_s + 1e-6) * d


def route_polyline(domain: Domain, t, start, goal, clearance=0.1, n_sides=32):
    """Shortest visibility-graph polyline from start to goal at time t.

    Obstacle snapshots are enlarged by ``clearance`` (as circumscribed
    polygons). Ties between equal-length routes go to the lexicographically
    smallest vertex.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    shapes = domain.snapshots(t)
    for shape in shapes:
        if shape.signed_distance(goal[None])[0] <= 0 or shape.signed_distance(start[None])[0] <= 0:
            raise PathBlocked(f"endpoint inside an obstacle at t={t}")
    polys = [_inflated_halfplanes(s, clearance, n_sides) for s in shapes]
    head, tail = [start], [goal]
    for (U, b), shape in zip(polys, shapes):
        if np.all(U @ start < b):
            head.append(_push_out(start, shape, U, b, shape.reference_point))
        if np.all(U @ goal < b):
            tail.insert(0, _push_out(goal, shape, U, b, shape.reference_point))
    a, z = head[-1], tail[0]
    for U, b in polys:
        if np.all(U @ a < b - 1e-9) or np.all(U @ z < b - 1e-9):
            raise PathBlocked("clearance regions of obstacles overlap at an endpoint")
    nodes = [a, z]
    for U, b in polys:
        V = _halfplane_vertices(U, b)
        keep = domain.outer.signed_distance(V) < -1e-9
        for k, other in enumerate(polys):
            if other[0] is U:
                continue
            keep &= ~np.all(V @ other[0].T < other[1] - 1e-9, axis=1)
        nodes.extend(V[keep])
    nodes = np.array(nodes)
    n = len(nodes)
    vis = np.ones((n, n), dtype=bool)
    I, J = np.triu_indices(n, 1)
    blocked = np.zeros(len(I), dtype=bool)
    for U, b in polys:
        blocked |= _segments_blocked(nodes[I], nodes[J], U, b)
    vis[I, J] = ~blocked
    vis[J, I] = ~blocked
    dist = np.full(n, np.inf)
    prev = np.full(n, -1)
    dist[0] = 0.0
    heap = [(0.0, tuple(nodes[0]), 0)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, _, i = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        if i == 1:
            break
        nbr = np.nonzero(vis[i] & ~done)[0]
        step = np.linalg.norm(nodes[nbr] - nodes[i], axis=1)
        for j, w in zip(nbr, step):
            nd = d + w
            if nd < dist[j] - 1e-14:
                dist[j] = nd
                prev[j] = i
                heapq.heappush(heap, (nd, tuple(nodes[j]), int(j)))
    if not np.isfinite(dist[1]):
        raise PathBlocked(f"no obstacle-avoiding polyline at t={t}")
    chain = [1]
    while chain[-1] != 0:
        chain.append(int(prev[chain[-1]]))
    mid = nodes[chain[::-1]]
    pts = np.vstack(head[:-1] + [mid] + tail[1:]) if len(head) > 1 or len(tail) > 1 else mid
    keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-14])
    return pts[keep]


# --------------------------------------------------------------------------
# equivalence


@dataclass(frozen=True, eq=False)
class LoopValue:
    label: str
    loop: SpacetimePath
    value: complex


@dataclass(eq=False)
class Verdict:
    """Outcome of a gauge-equivalence test.

    ``windings`` counts flux quanta of the difference connection per
    obstacle, ``round(int (A_b - A_a) . dx / 2 pi)`` on the generator loops.
    """

    equivalent: bool
    windings: tuple
    loops: list
    tol_h: float
    witness: Optional[LoopValue] = None
    gauge: Optional["ReconstructedGauge"] = None

    @property
    def holonomy_value(self):
        return None if self.witness is None else self.witness.value

    def to_dict(self, c_samples=None):
        out = {
            "verdict": "Equivalent" if self.equivalent else "Inequivalent",
            "windings": [int(m) for m in self.windings],
            "tol_h": self.tol_h,
            "n_loops": len(self.loops),
            "max_loop_defect": float(max((abs(l.value - 1) for l in self.loops), default=0.0)),
        }
        if self.witness is not None:
            out["witness_loop"] = {"label": self.witness.label,
                                   "samples": self.witness.loop.samples.tolist()}
            out["holonomy_value"] = [self.witness.value.real, self.witness.value.imag]
        if c_samples is not None:
            out["c_samples"] = [[*map(float, row[:3]), float(np.real(row[3])), float(np.imag(row[3]))]
                                for row in c_samples]
        return out

    def write_json(self, path, c_samples=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(c_samples), fh, indent=2, sort_keys=True)


def default_base(domain: Domain):
    """A point on the outer boundary with the start time of the domain."""
    return np.asarray(domain.outer.boundary_points(4)[0], dtype=float), float(domain.t_span[0])


def _time_rectangles(domain, t_pairs, clearance, n_sub=8):
    loops = []
    dirs = [np.array([np.cos(a), np.sin(a)]) for a in np.pi / 4 * np.arange(8)]
    for j, obs in enumerate(domain.obstacles):
        r_in = obs.shape.bounding_radius + clearance
        r_out = r_in + 0.5 * clearance
        for t0, t1 in t_pairs:
            ts = np.linspace(t0, t1, n_sub + 1)
            chosen = None
            for u in dirs:
                Y = obs.centers(ts) + r_in * u
                Z = obs.centers(ts) + r_out * u
                ok = all(domain.contains(np.vstack([Y[k], Z[k]]), ts[k], margin=0.25 * clearance).all()
                         for k in range(len(ts)))
                if ok:
                    chosen = (Y, Z)
                    break
            if chosen is None:
                raise ClearanceTooLarge(f"no room for a time loop beside obstacle {j} on [{t0}, {t1}]")
            Y, Z = chosen
            pts = np.vstack([
                np.column_stack([Y, ts]),
                np.column_stack([Z[::-1], ts[::-1]]),
                [[Y[0, 0], Y[0, 1], ts[0]]],
            ])
            loops.append((f"time-loop obstacle {j} t=[{t0:.6g},{t1:.6g}]", SpacetimePath(pts, closed=True)))
    return loops


def test_gauge_equivalence(p_a: PotentialPair, p_b: PotentialPair, domain: Domain,
                           t_samples: Optional[Sequence[float]] = None, clearance: float = 0.25,
                           tol_h: float = DEFAULT_TOL_H, n_vertices: int = 128,
                           base=None, quad: QuadConfig = DEFAULT_QUAD) -> Verdict:
    """Decide gauge equivalence from holonomies of the difference connection.

    Loops: one generator loop per obstacle at every sampled time, then one
    comoving time loop per obstacle between consecutive sampled times. The
    first loop whose holonomy is farther than ``tol_h`` from 1 is returned
    as the witness.
    """
    if t_samples is None:
        t_samples = np.linspace(domain.t_span[0], domain.t_span[1], 16)
    t_samples = [float(t) for t in t_samples]
    diff = difference_potential(p_a, p_b)
    values = []
    windings = None
    candidates = []
    for t in t_samples:
        for j, loop in enumerate(generator_loops(domain, t, clearance, n_vertices)):
            candidates.append((f"generator obstacle {j} t={t:.6g}", SpacetimePath.spatial(loop, t, closed=True), t))
    pairs = list(zip(t_samples[:-1], t_samples[1:]))
    candidates += [(label, loop, None) for label, loop in _time_rectangles(domain, pairs, clearance)]
    first = []
    for label, loop, t in candidates:
        I = line_integral_em(diff, loop, quad)
        lv = LoopValue(label, loop, complex(np.exp(-1j * I)))
        values.append(lv)
        if t is not None and t == t_samples[0]:
            first.append(I)
        if abs(lv.value - 1.0) > tol_h:
            if windings is None:
                windings = tuple(int(round(v / (2 * np.pi))) for v in first)
            return Verdict(False, windings, values, tol_h, witness=lv)
        if windings is None and len(first) == len(domain.obstacles):
            windings = tuple(int(round(v / (2 * np.pi))) for v in first)
    verdict = Verdict(True, windings or (), values, tol_h)
    verdict.gauge = ReconstructedGauge(p_a, p_b, domain, base if base is not None else default_base(domain),
                                       verdict, clearance, quad)
    return verdict


def construct_gauge_function(p_a: PotentialPair, p_b: PotentialPair, domain: Domain, base, targets,
                             verdict: Optional[Verdict] = None, clearance: float = 0.1,
                             quad: QuadConfig = DEFAULT_QUAD) -> np.ndarray:
    """Gauge element relating an equivalent pair, sampled at targets.

    Each value is :func:`path_gauge_value` on a path that first moves in
    time at the base point and then follows an obstacle-avoiding polyline
    at the target's time. The value at the base is 1.
    """
    if verdict is None or not isinstance(verdict, Verdict):
        raise PreconditionViolated("run test_gauge_equivalence first and pass its verdict")
    if not verdict.equivalent:
        raise PreconditionViolated("potentials were found inequivalent")
    x0, t0 = np.asarray(base[0], dtype=float), float(base[1])
    diff = difference_potential(p_a, p_b)
    out = []
    for target in targets:
        target = np.asarray(target, dtype=float)
        x, t = target[:2], float(target[2])
        path = gauge_path(domain, (x0, t0), x, t, clearance)
        out.append(np.exp(-1j * line_integral_em(diff, path, quad)))
    return np.array(out, dtype=complex)


def gauge_path(domain: Domain, base, x, t, clearance=0.1) -> SpacetimePath:
    """Time leg at the base point followed by a spatial polyline at time t."""
    x0, t0 = np.asarray(base[0], dtype=float), float(base[1])
    poly = route_polyline(domain, t, x0, x, clearance)
    samples = [[x0[0], x0[1], t0]]
    samples += [[p[0], p[1], t] for p in poly]
    s = np.array(samples)
    keep = np.concatenate([[True], np.max(np.abs(np.diff(s, axis=0)), axis=1) > 0])
    s = s[keep]
    if len(s) == 1:
        s = np.vstack([s, s])
    return SpacetimePath(s)


@dataclass(eq=False)
class ReconstructedGauge:
    """Gauge element recovered from an Equivalent verdict, normalised to 1 at base."""

    p_a: PotentialPair
    p_b: PotentialPair
    domain: Domain
    base: tuple
    verdict: Verdict
    clearance: float = 0.25
    quad: QuadConfig = DEFAULT_QUAD

    @property
    def windings(self):
        # the phase winds opposite to the flux difference: A_b - A_a = -grad(phase)
        return tuple(-m for m in self.verdict.windings)

    def values(self, targets):
        return construct_gauge_function(self.p_a, self.p_b, self.domain, self.base, targets,
                                        self.verdict, min(self.clearance, 0.1), self.quad)


def write_c_samples_csv(path, targets, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "t", "re_c", "im_c"])
        for tgt, c in zip(targets, values):
            w.writerow([repr(float(tgt[0])), repr(float(tgt[1])), repr(float(tgt[2])),
                        repr(float(np.real(c))), repr(float(np.imag(c)))])


# --------------------------------------------------------------------------
# winding numbers


def winding_number(c_samples) -> int:
    """Winding of the phase of complex samples around a closed loop.

    The increment from the last sample back to the first is included, so
    the loop may be given with or without its closing repeat.
    """
    c = np.asarray(c_samples, dtype=complex).ravel()
    if c.size == 0:
        return 0
    if np.any(np.abs(c) < SINGULAR_TOL):
        raise SingularGauge("samples vanish on the loop")
    ring = np.append(c, c[0])
    steps = np.angle(ring[1:] / ring[:-1])
    if np.any(np.abs(steps) >= np.pi - 0.1):
        raise UndersampledLoop(f"phase jump {float(np.max(np.abs(steps))):.3f} rad between samples")
    return int(round(float(np.sum(steps)) / (2 * np.pi)))

test_gauge_equivalence.__test__ = False  # not a pytest test
