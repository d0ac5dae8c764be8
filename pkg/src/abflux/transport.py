"""Broken-ray transforms, matrix transport and the leading geometric-optics amplitude."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import StepTooLarge
from .fields import PotentialPair, _bump_norms, unit_bump
from .geometry import BrokenRay, Leg
from .quadrature import DEFAULT_QUAD, QuadConfig, adaptive_integrate, gauss_legendre

UNITARITY_LIMIT = 1e-4


# --------------------------------------------------------------------------
# abelian transforms


LEG_PANEL_LENGTH = 0.25


def _leg_integral(fn, leg: Leg, quad: QuadConfig):
    # seed panels no longer than LEG_PANEL_LENGTH so that a narrow bump cannot
    # slip between the nodes of both the coarse and the bisected estimate
    x0, th = leg.start, leg.direction
    L = float(leg.length)
    panels = max(quad.initial_panels, int(np.ceil(L / LEG_PANEL_LENGTH)))
    cfg = replace(quad, initial_panels=panels)
    return adaptive_integrate(lambda s: fn(x0 + s[:, None] * th, th), 0.0, L, cfg)


def magnetic_leg_transforms(p: PotentialPair, ray: BrokenRay, quad: QuadConfig = DEFAULT_QUAD):
    """Per-leg values of ``int A(x, t0) . theta ds``."""
    def fn(x, th):
        return p.A(x, np.full(len(x), ray.t0)) @ th
    return np.array([_leg_integral(fn, leg, quad) for leg in ray.legs])


def electric_leg_transforms(p: PotentialPair, ray: BrokenRay, quad: QuadConfig = DEFAULT_QUAD):
    """Per-leg values of ``int V(x, t0) ds``."""
    def fn(x, th):
        return p.V(x, np.full(len(x), ray.t0))
    return np.array([_leg_integral(fn, leg, quad) for leg in ray.legs])


def magnetic_ray_transform(p: PotentialPair, ray: BrokenRay, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """Sum over legs of the integral of ``A . theta_j`` at the ray's time slice."""
    return float(np.sum(magnetic_leg_transforms(p, ray, quad)))


def electric_ray_transform(p: PotentialPair, ray: BrokenRay, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """Arclength integral of V along the broken ray."""
    return float(np.sum(electric_leg_transforms(p, ray, quad)))


def gauge_time_term(gauge, ray: BrokenRay, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """Arclength integral of ``d(phase)/dt`` of a gauge element along the ray.

    This is the amount by which a gauge transformation shifts the electric
    transform, since it adds ``d(phase)/dt`` to V.
    """
    def fn(x, th):
        return gauge.phase_dt(x, np.full(len(x), ray.t0))
    return float(sum(_leg_integral(fn, leg, quad) for leg in ray.legs))


# --------------------------------------------------------------------------
# matrix transport


@dataclass(frozen=True)
class Line:
    """Straight segment ``start + s omega`` for s in [0, length] at time t."""

    start: np.ndarray
    omega: np.ndarray
    length: float
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        w = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "omega", w / np.linalg.norm(w))

    @classmethod
    def across(cls, offset, angle, t, half_length):
        """Line with direction ``(cos a, sin a)`` at signed offset along the normal."""
        w = np.array([np.cos(angle), np.sin(angle)])
        perp = np.array([-w[1], w[0]])
        return cls(offset * perp - half_length * w, w, 2 * half_length, t)


@dataclass(frozen=True, eq=False)
class TransportResult:
    endpoint_matrix: np.ndarray
    h: float
    trace_samples: Optional[list] = None

    def unitarity_defect(self):
        c = self.endpoint_matrix
        return float(np.linalg.norm(c.conj().T @ c - np.eye(c.shape[0])))


def _steps(length, h):
    if not h > 0:
        raise ValueError("step must be positive")
    n = max(1, int(round(length / h)))
    return n, length / n


def _line_matrices(p, starts, omegas, ts):
    def M(s):
        x = starts + s * omegas
        A = p.A(x, ts)
        return np.einsum("bkij,bk->bij", np.asarray(A, dtype=complex), omegas)
    return M


def _unitarity(c):
    eye = np.eye(c.shape[-1])
    d = np.einsum("bji,bjk->bik", c.conj(), c) - eye
    return np.sqrt(np.sum(np.abs(d) ** 2, axis=(-2, -1)))


def transport_batch(p: PotentialPair, lines: Sequence[Line], h: float = 1e-3,
                    n_checkpoints: int = 8, trace_every: Optional[int] = None):
    """Classical RK4 for ``dc/ds = i (A . omega) c`` with c(0) = I on equal-length lines.

    Returns the endpoint matrices (B, m, m), the step actually used and, if
    requested, the trace samples.
    """
    lengths = {float(l.length) for l in lines}
    if len(lengths) != 1:
        raise ValueError("batched lines must share their length")
    L = lengths.pop()
    n, hh = _steps(L, h)
    starts = np.array([l.start for l in lines])
    omegas = np.array([l.omega for l in lines])
    ts = np.array([float(l.t) for l in lines])
    M = _line_matrices(p, starts, omegas, ts)
    m = p.m
    c = np.broadcast_to(np.eye(m, dtype=complex), (len(lines), m, m)).copy()
    check_at = set(np.linspace(0, n, n_checkpoints + 1).round().astype(int)[1:])
    traces = [(0.0, c.copy())] if trace_every else None
    M0 = M(0.0)
    for k in range(n):
        s = k * hh
        Mh = M(s + 0.5 * hh)
        M1 = M(s + hh)
        k1 = 1j * M0 @ c
        k2 = 1j * Mh @ (c + 0.5 * hh * k1)
        k3 = 1j * Mh @ (c + 0.5 * hh * k2)
        k4 = 1j * M1 @ (c + hh * k3)
        c = c + (hh / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        M0 = M1
        if p.self_adjoint and (k + 1) in check_at:
            defect = float(np.max(_unitarity(c)))
            if defect > UNITARITY_LIMIT:
                raise StepTooLarge(f"unitarity defect {defect:.3e} at s={s + hh:.6g} with h={hh:.3e}")
        if trace_every and (k + 1) % trace_every == 0:
            traces.append(((k + 1) * hh, c.copy()))
    return c, hh, traces


def nonabelian_transport(p: PotentialPair, line: Line, h: float = 1e-3, trace_every: Optional[int] = None):
    """Parallel transport matrix along one line; see :func:`transport_batch`."""
    c, hh, traces = transport_batch(p, [line], h, trace_every=trace_every)
    samples = [(s, mats[0]) for s, mats in traces] if traces else None
    return TransportResult(c[0], hh, samples)


def radon_lines(p: PotentialPair, offsets, angle, t):
    """Parallel lines crossing the whole support, ends at support_radius + 1."""
    R = p.support_radius
    if not np.isfinite(R):
        raise ValueError("non-abelian Radon transform needs a finite support radius")
    return [Line.across(float(y), angle, t, R + 1.0) for y in np.atleast_1d(offsets)]


def nonabelian_radon(p: PotentialPair, offsets, angle, t, h: float = 1e-3):
    """Endpoint transport matrices across the support, one per offset."""
    lines = radon_lines(p, offsets, angle, t)
    if not lines:
        return []
    c, _, _ = transport_batch(p, lines, h)
    return list(c)


def weighted_potential_transform(p1: PotentialPair, p4: PotentialPair, line: Line, h: float = 1e-3):
    """``int c^-1 (V1 - V4) c ds`` with c the transport matrix of p1 on the line.

    The transport and the weighted integral are advanced together by one
    RK4 system, so both carry fourth-order accuracy in h.
    """
    if p1.m != p4.m:
        raise ValueError("potentials must share their matrix dimension")
    n, hh = _steps(line.length, h)
    x0 = line.start[None, :]
    w = line.omega[None, :]
    t = np.array([float(line.t)])
    M = _line_matrices(p1, x0, w, t)

    def D(s):
        x = x0 + s * w
        return (np.asarray(p1.V(x, t), dtype=complex) - np.asarray(p4.V(x, t), dtype=complex))[0]

    def rhs(c, Mi, Di):
        return 1j * Mi @ c, np.linalg.solve(c, Di @ c)

    m = p1.m
    c = np.eye(m, dtype=complex)
    W = np.zeros((m, m), dtype=complex)
    M0, D0 = M(0.0)[0], D(0.0)
    for k in range(n):
        s = k * hh
        Mh, Dh = M(s + 0.5 * hh)[0], D(s + 0.5 * hh)
        M1, D1 = M(s + hh)[0], D(s + hh)
        k1c, k1w = rhs(c, M0, D0)
        k2c, k2w = rhs(c + 0.5 * hh * k1c, Mh, Dh)
        k3c, k3w = rhs(c + 0.5 * hh * k2c, Mh, Dh)
        k4c, k4w = rhs(c + hh * k3c, M1, D1)
        c = c + (hh / 6.0) * (k1c + 2 * k2c + 2 * k3c + k4c)
        W = W + (hh / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
        M0, D0 = M1, D1
    return W


# --------------------------------------------------------------------------
# geometric optics


@dataclass(frozen=True)
class CutoffProfile:
    """Concentrating cutoffs ``chi1(t)`` and ``chi2(tau)`` built from one bump.

    ``chi0`` is a C-infinity bump on [-1, 1] with unit L2 norm;
    ``chi1(t) = chi0((t - t0)/eps)/sqrt(eps)`` and likewise for ``chi2``
    about ``tau0``. ``tau0=None`` centres chi2 on the leg it is used with.
    """

    eps: float
    t0: float = 0.0
    tau0: Optional[float] = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @staticmethod
    def chi0(u):
        return unit_bump(u) / np.sqrt(_bump_norms()[2])

    def chi1(self, t):
        return self.chi0((np.asarray(t, dtype=float) - self.t0) / self.eps) / np.sqrt(self.eps)

    def chi2(self, tau, tau0=None):
        c = self.tau0 if tau0 is None else tau0
        return self.chi0((np.asarray(tau, dtype=float) - c) / self.eps) / np.sqrt(self.eps)


@dataclass(frozen=True, eq=False)
class GOAmplitude:
    """Leading amplitude ``chi1(t) chi2(tau) exp(i int_{s0}^{s} A . omega ds')``.

    Coordinates: ``x = s omega + tau omega_perp``. The phase integral uses a
    fixed composite Gauss-Legendre rule, so the amplitude is a smooth
    function of s and can be differentiated numerically.
    """

    p: PotentialPair
    omega: np.ndarray
    s0: float
    cut: CutoffProfile
    tau0: float
    panels: int = 8
    nodes: int = 20

    @property
    def omega_perp(self):
        return np.array([-self.omega[1], self.omega[0]])

    def phase(self, s, tau, t):
        s, tau, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (s, tau, t)))
        x, w = gauss_legendre(self.nodes)
        k = np.arange(self.panels)
        # composite nodes on [s0, s]: shape (..., panels * nodes)
        u = ((k[:, None] + x[None, :]) / self.panels).ravel()
        span = s - self.s0
        sp = self.s0 + span[..., None] * u
        pts = sp[..., None] * self.omega + tau[..., None, None] * self.omega_perp
        tt = np.broadcast_to(t[..., None], sp.shape)
        vals = self.p.A(pts, tt) @ self.omega
        weights = np.tile(w, self.panels) / self.panels
        return np.sum(vals * weights, axis=-1) * span

    def envelope(self, tau, t):
        return self.cut.chi1(t) * self.cut.chi2(tau, self.tau0)

    def __call__(self, s, tau, t):
        return self.envelope(tau, t) * np.exp(1j * self.phase(s, tau, t))

    def at(self, x, t):
        x = np.asarray(x, dtype=float)
        return self(x @ self.omega, x @ self.omega_perp, t)


def go_amplitude(p: PotentialPair, leg: Leg, cut: CutoffProfile, panels: int = 8, nodes: int = 20) -> GOAmplitude:
    """Leading geometric-optics amplitude along the line of a straight leg.

    ``s0`` is the arclength coordinate of the leg's start, so the phase is
    the integral of ``A . omega`` from the leg's entry point.
    """
    if not p.abelian:
        raise ValueError("go_amplitude needs an abelian potential")
    w = np.asarray(leg.direction, dtype=float)
    perp = np.array([-w[1], w[0]])
    tau0 = float(leg.start @ perp) if cut.tau0 is None else cut.tau0
    return GOAmplitude(p, w, float(leg.start @ w), cut, tau0, panels, nodes)


def transport_residual(a: GOAmplitude, s, tau, t, h=1e-4):
    """``omega . (-i d/dx - A) a`` by central differences along omega."""
    ds = (a(s + h, tau, t) - a(s - h, tau, t)) / (2 * h)
    s, tau, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (s, tau, t)))
    x = s[..., None] * a.omega + tau[..., None] * a.omega_perp
    Aw = a.p.A(x, t) @ a.omega
    return -1j * ds - Aw * a(s, tau, t)


# --------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class RayRow:
    ray_id: int
    t0: float
    x1: float
    x2: float
    angle: float
    n_reflections: int
    dmag: float
    delec: float

    @property
    def mag_defect(self):
        return abs(np.exp(1j * self.dmag) - 1.0)


@dataclass(frozen=True)
class DiscrepancyReport:
    rows: list = field(default_factory=list)

    @property
    def max_mag_defect(self):
        return max((r.mag_defect for r in self.rows), default=0.0)

    @property
    def max_elec(self):
        return max((abs(r.delec) for r in self.rows), default=0.0)

    def to_dict(self):
        return {
            "n_rays": len(self.rows),
            "max_mag_defect": float(self.max_mag_defect),
            "max_abs_delec": float(self.max_elec),
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ray_id", "t0", "x1", "x2", "angle", "n_reflections", "dmag", "delec", "mag_defect"])
            for r in self.rows:
                w.writerow([r.ray_id, repr(r.t0), repr(r.x1), repr(r.x2), repr(r.angle), r.n_reflections,
                            repr(float(r.dmag)), repr(float(r.delec)), repr(float(r.mag_defect))])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def transform_dataset(p_a: PotentialPair, p_b: PotentialPair, rays: Sequence[BrokenRay],
                      gauge=None, quad: QuadConfig = DEFAULT_QUAD) -> DiscrepancyReport:
    """Compare both ray transforms of two potentials over a family of rays.

    ``dmag`` is the difference of magnetic transforms (b minus a). ``delec``
    is the difference of electric transforms; when ``gauge`` is the element
    relating the pair, its time term is subtracted so that a true gauge pair
    gives zero.
    """
    rows = []
    for k, ray in enumerate(rays):
        dmag = magnetic_ray_transform(p_b, ray, quad) - magnetic_ray_transform(p_a, ray, quad)
        delec = electric_ray_transform(p_b, ray, quad) - electric_ray_transform(p_a, ray, quad)
        if gauge is not None:
            delec -= gauge_time_term(gauge, ray, quad)
        leg = ray.legs[0]
        rows.append(RayRow(k, float(ray.t0), float(leg.start[0]), float(leg.start[1]),
                           float(np.arctan2(leg.direction[1], leg.direction[0])),
                           ray.n_reflections, float(dmag), float(delec)))
    return DiscrepancyReport(rows)
