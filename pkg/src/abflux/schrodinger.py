"""Crank-Nicolson solver for the magnetic Schrodinger equation on a rectangle.

The equation is ``i du/dt = H u`` with
``H = (-i d/dx - A)^2 + V = -Laplacian + i(A.grad + div(A .)) + |A|^2 + V``.
On a uniform node grid the first-order part uses edge-midpoint values of A,
so the discrete H is Hermitian for real potentials and the time-centred
scheme conserves the discrete L2 norm. Potentials are evaluated at the
half step. Obstacles are handled by masking nodes inside their snapshot
at the new time level (Dirichlet zero there).
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CFLWarning, LinearSolveFailure, SingularGauge
from .fields import PotentialPair, unit_step
from .geometry import Domain, OuterDisk, OuterRect

SOLVE_RTOL = 1e-10
RAMP_FRACTION = 0.05


@dataclass(frozen=True)
class GridSpec:
    """Node grid on ``[lo, hi]`` (boundary nodes included) and time stepping."""

    lo: tuple
    hi: tuple
    nx: int
    ny: int
    dt: float
    nt: int

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise ValueError("grid needs at least 16 nodes per axis")
        if not self.dt > 0 or self.nt < 1:
            raise ValueError("dt must be positive and nt at least 1")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if abs(self.hx - self.hy) > 1e-12 * max(self.hx, self.hy):
            warnings.warn(f"unequal grid spacings hx={self.hx:.4g}, hy={self.hy:.4g}", stacklevel=2)

    @classmethod
    def covering(cls, domain: Domain, n: int, dt: float, nt: Optional[int] = None):
        """n x n grid on the domain's (bounding) rectangle, nt*dt = T."""
        outer = domain.outer
        if isinstance(outer, OuterRect):
            lo, hi = outer.lo, outer.hi
        else:
            lo, hi = outer.center - outer.radius, outer.center + outer.radius
        if nt is None:
            nt = max(1, int(round(domain.T / dt)))
            dt = domain.T / nt
        return cls(tuple(lo), tuple(hi), n, n, dt, nt)

    @property
    def hx(self):
        return (self.hi[0] - self.lo[0]) / (self.nx - 1)

    @property
    def hy(self):
        return (self.hi[1] - self.lo[1]) / (self.ny - 1)

    @property
    def x(self):
        return np.linspace(self.lo[0], self.hi[0], self.nx)

    @property
    def y(self):
        return np.linspace(self.lo[1], self.hi[1], self.ny)

    @property
    def T(self):
        return self.dt * self.nt

    @property
    def times(self):
        return self.dt * np.arange(self.nt + 1)

    def nodes(self):
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return np.stack([X, Y], -1)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "nx": self.nx, "ny": self.ny,
                "dt": self.dt, "nt": self.nt}


# --------------------------------------------------------------------------
# boundary layout


SIDES = ("bottom", "right", "top", "left")
NORMALS = {"bottom": (0.0, -1.0), "right": (1.0, 0.0), "top": (0.0, 1.0), "left": (-1.0, 0.0)}


def boundary_nodes(grid: GridSpec):
    """Outer boundary nodes without corners, counter-clockwise from bottom-left.

    Returns ``(index (Nb, 2), points (Nb, 2), normals (Nb, 2), arc (Nb,),
    side labels (Nb,))``.
    """
    nx, ny = grid.nx, grid.ny
    ii = [np.arange(1, nx - 1), np.full(ny - 2, nx - 1), np.arange(nx - 2, 0, -1), np.zeros(ny - 2, int)]
    jj = [np.zeros(nx - 2, int), np.arange(1, ny - 1), np.full(nx - 2, ny - 1), np.arange(ny - 2, 0, -1)]
    idx = np.column_stack([np.concatenate(ii), np.concatenate(jj)])
    pts = np.column_stack([grid.x[idx[:, 0]], grid.y[idx[:, 1]]])
    labels = np.concatenate([[s] * len(a) for s, a in zip(SIDES, ii)])
    normals = np.array([NORMALS[s] for s in labels])
    Lx = grid.hi[0] - grid.lo[0]
    Ly = grid.hi[1] - grid.lo[1]
    offsets = {"bottom": 0.0, "right": Lx, "top": Lx + Ly, "left": 2 * Lx + Ly}
    arc = np.empty(len(idx))
    for k, (s, (px, py)) in enumerate(zip(labels, pts)):
        local = {"bottom": px - grid.lo[0], "right": py - grid.lo[1],
                 "top": grid.hi[0] - px, "left": grid.hi[1] - py}[s]
        arc[k] = offsets[s] + local
    return idx, pts, normals, arc, labels


def _strip_views(U):
    """Three-layer frames of a node array, inward order, along-side counter-clockwise."""
    return {
        "bottom": U[:, 0:3],
        "right": U[-1:-4:-1, :].T,
        "top": U[::-1, -1:-4:-1],
        "left": U[0:3, ::-1].T,
    }


# --------------------------------------------------------------------------
# operator


def _edge_potentials(p: PotentialPair, grid: GridSpec, t):
    x, y = grid.x, grid.y
    xm = 0.5 * (x[:-1] + x[1:])
    ym = 0.5 * (y[:-1] + y[1:])
    Xe, Ye = np.meshgrid(xm, y, indexing="ij")
    ax = p.A(np.stack([Xe, Ye], -1), t)[..., 0]
    Xe, Ye = np.meshgrid(x, ym, indexing="ij")
    ay = p.A(np.stack([Xe, Ye], -1), t)[..., 1]
    nodes = grid.nodes()
    An = p.A(nodes, t)
    q = np.sum(An * An, axis=-1) + p.V(nodes, t)
    return np.asarray(ax, float), np.asarray(ay, float), np.asarray(q)


def hamiltonian(p: PotentialPair, grid: GridSpec, t):
    """Sparse discrete H on all nodes (row-major ``i * ny + j``)."""
    pots = _edge_potentials(p, grid, t)
    return _assemble(grid, pots), pots


def _assemble(grid: GridSpec, pots):
    nx, ny = grid.nx, grid.ny
    hx, hy = grid.hx, grid.hy
    ax, ay, q = pots
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [(2 / hx**2 + 2 / hy**2 + q).ravel().astype(complex)]
    # x edges (i, j) -- (i+1, j)
    a, b = idx[:-1, :].ravel(), idx[1:, :].ravel()
    rows += [a, b]
    cols += [b, a]
    vals += [-1 / hx**2 + 1j * ax.ravel() / hx, -1 / hx**2 - 1j * ax.ravel() / hx]
    a, b = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    rows += [a, b]
    cols += [b, a]
    vals += [-1 / hy**2 + 1j * ay.ravel() / hy, -1 / hy**2 - 1j * ay.ravel() / hy]
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nx * ny, nx * ny))
    return H


def obstacle_mask(domain: Domain, grid: GridSpec, t):
    """Nodes inside an obstacle snapshot (or outside a disk outer region)."""
    nodes = grid.nodes()
    mask = domain.obstacle_signed_distance(nodes, t) <= 0
    if isinstance(domain.outer, OuterDisk):
        mask |= domain.outer.signed_distance(nodes) >= 0
    return mask


def smooth_ramp(t, T):
    """C-infinity ramp from 0 at t = 0 to 1 at ``RAMP_FRACTION * T``."""
    width = RAMP_FRACTION * T
    return unit_step(2 * np.asarray(t, dtype=float) / width - 1)


# --------------------------------------------------------------------------
# solution containers


@dataclass(eq=False)
class WaveField:
    """Trajectory of a solve.

    ``snapshots`` holds full grids at ``snapshot_steps``; ``strips`` holds the
    three outermost node layers of every side at every step; ``mask_changes``
    lists ``(step, mask)`` whenever the obstacle mask changed.
    """

    grid: GridSpec
    snapshot_steps: list
    snapshots: list
    strips: dict
    mask_changes: list
    outer_kind: str
    timings: dict = field(default_factory=dict)

    def snapshot(self, k):
        return self.snapshots[self.snapshot_steps.index(k)]

    def mask_at(self, k):
        current = self.mask_changes[0][1]
        for step, m in self.mask_changes:
            if step > k:
                break
            current = m
        return current

    def norms(self):
        h2 = self.grid.hx * self.grid.hy
        return np.array([np.sqrt(np.sum(np.abs(u) ** 2) * h2) for u in self.snapshots])

    def gauge_transformed(self, c_nodes: Callable):
        """Pointwise ``c^-1 u`` with ``c_nodes(points, t)`` the gauge on the grid."""
        nodes = self.grid.nodes()
        snaps = []
        for k, u in zip(self.snapshot_steps, self.snapshots):
            c = c_nodes(nodes, self.grid.times[k])
            if np.any(np.abs(c) < 1e-9):
                raise SingularGauge("gauge vanishes on the grid")
            snaps.append(u / c)
        strips = {}
        for side, arr in self.strips.items():
            cs = np.array([_strip_views(c_nodes(nodes, t))[side] for t in self.grid.times])
            strips[side] = arr / cs
        return WaveField(self.grid, list(self.snapshot_steps), snaps, strips, self.mask_changes, self.outer_kind)


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Gauge-invariant boundary data on the outer boundary nodes.

    ``f1 = |u|^2`` and ``f2 = d|u|^2/d nu`` have shape (nt + 1, Nb);
    ``f3`` is the current ``Im[(grad u - i A u) conj(u)]`` with shape
    (nt + 1, Nb, 2).
    """

    times: np.ndarray
    points: np.ndarray
    arc: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray

    def max_difference(self, other: "BoundaryData"):
        return {
            "f1": float(np.max(np.abs(self.f1 - other.f1))),
            "f2": float(np.max(np.abs(self.f2 - other.f2))),
            "f3": float(np.max(np.abs(self.f3 - other.f3))),
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "arc", "t", "f1", "f2", "f3_1", "f3_2"])
            for k, t in enumerate(self.times):
                for n in range(len(self.arc)):
                    w.writerow([n, repr(float(self.arc[n])), repr(float(t)), repr(float(self.f1[k, n])),
                                repr(float(self.f2[k, n])), repr(float(self.f3[k, n, 0])),
                                repr(float(self.f3[k, n, 1]))])


# --------------------------------------------------------------------------
# solver


def _boundary_values(f, grid, pts, times, ramp=True):
    """Dirichlet data (nt + 1, Nb), forced to zero at k = 0 and ramped."""
    nb = len(pts)
    if f is None:
        return np.zeros((len(times), nb), dtype=complex)
    if callable(f):
        vals = np.array([f(pts, t) for t in times], dtype=complex).reshape(len(times), nb)
    else:
        vals = np.asarray(f, dtype=complex)
        if vals.shape != (len(times), nb):
            raise ValueError(f"boundary data must have shape {(len(times), nb)}, got {vals.shape}")
        vals = vals.copy()
    if ramp:
        vals *= smooth_ramp(times, times[-1])[:, None]
    vals[0] = 0.0
    return vals


def solve_ibvp(p: PotentialPair, domain: Domain, grid: GridSpec, f=None, u0=None,
               snapshot_stride: Optional[int] = None, rtol: float = SOLVE_RTOL) -> WaveField:
    """Advance the Schrodinger IBVP by Crank-Nicolson steps.

    ``f`` is None (zero data), a callable ``f(points, t)`` on boundary points
    or an array of shape (nt + 1, Nb) in :func:`boundary_nodes` order. ``u0``
    is an (nx, ny) array or None for zero initial data.
    """
    if not p.abelian:
        raise ValueError("the PDE solver handles abelian potentials only")
    disk_outer = isinstance(domain.outer, OuterDisk)
    if disk_outer and f is not None:
        raise ValueError("disk outer regions are embedded with a masked exterior; boundary data must be zero")
    if isinstance(domain.outer, OuterRect):
        if (np.max(np.abs(np.asarray(grid.lo) - domain.outer.lo)) > 1e-12
                or np.max(np.abs(np.asarray(grid.hi) - domain.outer.hi)) > 1e-12):
            raise ValueError("grid bounds must coincide with the outer rectangle")
    h = min(grid.hx, grid.hy)
    if grid.dt > h * h:
        warnings.warn(f"dt={grid.dt:.3g} exceeds h^2={h * h:.3g}; accuracy may suffer", CFLWarning, stacklevel=2)
    nx, ny, nt = grid.nx, grid.ny, grid.nt
    times = grid.times
    bidx, bpts, _, _, _ = boundary_nodes(grid)
    fb = _boundary_values(f, grid, bpts, times)
    flat_b = bidx[:, 0] * ny + bidx[:, 1]
    corners = np.array([0, ny - 1, (nx - 1) * ny, nx * ny - 1])
    interior = np.zeros((nx, ny), dtype=bool)
    interior[1:-1, 1:-1] = True

    U = np.zeros((nx, ny), dtype=complex) if u0 is None else np.array(u0, dtype=complex)
    if U.shape != (nx, ny):
        raise ValueError("u0 must have shape (nx, ny)")
    mask = obstacle_mask(domain, grid, times[0])
    if np.any(np.abs(U[mask]) > 0):
        raise ValueError("initial data must vanish on masked nodes")
    U.ravel()[flat_b] = fb[0]
    U.ravel()[corners] = 0.0

    stride = snapshot_stride or max(1, nt // 16)
    snap_steps = [0]
    snaps = [U.copy()]
    strips = {s: np.empty((nt + 1,) + v.shape, dtype=complex) for s, v in _strip_views(U).items()}
    for s, v in _strip_views(U).items():
        strips[s][0] = v
    mask_changes = [(0, mask.copy())]

    t_start = time.perf_counter()
    cache_key = None
    lu = H_act = M_op = act = None
    n_factor = 0
    for k in range(nt):
        t_mid = 0.5 * (times[k] + times[k + 1])
        new_mask = obstacle_mask(domain, grid, times[k + 1])
        if not np.array_equal(new_mask, mask):
            mask_changes.append((k + 1, new_mask.copy()))
        pots = _edge_potentials(p, grid, t_mid)
        key_same = (cache_key is not None and np.array_equal(new_mask, cache_key[0])
                    and all(np.array_equal(a, b) for a, b in zip(pots, cache_key[1])))
        if not key_same:
            H = _assemble(grid, pots)
            active = (interior & ~new_mask).ravel()
            act = np.nonzero(active)[0]
            H_act = H[act]
            M_op = (sp.identity(len(act), dtype=complex, format="csc")
                    + 0.5j * grid.dt * H_act[:, act].tocsc())
            try:
                lu = spla.splu(M_op)
            except RuntimeError as exc:
                raise LinearSolveFailure(f"factorisation failed at step {k}: {exc}") from exc
            cache_key = (new_mask.copy(), pots)
            n_factor += 1
        known = np.zeros(nx * ny, dtype=complex)
        known[flat_b] = fb[k + 1]
        rhs = U.ravel()[act] - 0.5j * grid.dt * (H_act @ U.ravel() + H_act @ known)
        sol = lu.solve(rhs)
        res = np.linalg.norm(M_op @ sol - rhs)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if res > rtol * scale:
            sol = sol + lu.solve(rhs - M_op @ sol)
            res = np.linalg.norm(M_op @ sol - rhs)
            if res > rtol * scale:
                raise LinearSolveFailure(f"relative residual {res / scale:.2e} at step {k}")
        U = np.zeros((nx, ny), dtype=complex)
        U.ravel()[act] = sol
        U.ravel()[flat_b] = fb[k + 1]
        U[new_mask] = 0.0
        mask = new_mask
        for s, v in _strip_views(U).items():
            strips[s][k + 1] = v
        if (k + 1) % stride == 0 or k + 1 == nt:
            snap_steps.append(k + 1)
            snaps.append(U.copy())
    timings = {"solve_seconds": time.perf_counter() - t_start, "factorisations": n_factor}
    return WaveField(grid, snap_steps, snaps, strips, mask_changes,
                     "disk" if disk_outer else "rect", timings)


# --------------------------------------------------------------------------
# boundary data


def _boundary_fields(w: WaveField):
    """Per boundary node: u, outward normal derivative and tangential derivative.

    Normal derivatives use the one-sided second-order stencil
    ``(3 u0 - 4 u1 + u2) / (2h)``; tangential ones are centred along the side.
    """
    if w.outer_kind != "rect":
        raise ValueError("boundary data need a rectangular outer region")
    g = w.grid
    u, dn, dtan, dnsq = [], [], [], []
    for side in SIDES:
        S = w.strips[side]                       # (nt + 1, n_along, 3)
        h_n = g.hy if side in ("bottom", "top") else g.hx
        h_t = g.hx if side in ("bottom", "top") else g.hy
        core = S[:, 1:-1, :]
        u.append(core[..., 0])
        dn.append((3 * core[..., 0] - 4 * core[..., 1] + core[..., 2]) / (2 * h_n))
        rho = np.abs(core) ** 2
        dnsq.append((3 * rho[..., 0] - 4 * rho[..., 1] + rho[..., 2]) / (2 * h_n))
        dtan.append((S[:, 2:, 0] - S[:, :-2, 0]) / (2 * h_t))
    return (np.concatenate(u, axis=1), np.concatenate(dn, axis=1),
            np.concatenate(dtan, axis=1), np.concatenate(dnsq, axis=1))


def _tangents(normals):
    # counter-clockwise tangent of the boundary
    return np.column_stack([-normals[:, 1], normals[:, 0]])


def boundary_data(w: WaveField, p: PotentialPair) -> BoundaryData:
    """Density, its normal derivative and the current on the outer boundary."""
    u, dn, dtan, dnsq = _boundary_fields(w)
    _, pts, normals, arc, _ = boundary_nodes(w.grid)
    tang = _tangents(normals)
    times = w.grid.times
    A = np.array([p.A(pts, t) for t in times])
    grad = dn[..., None] * normals + dtan[..., None] * tang
    S = np.imag((grad - 1j * A * u[..., None]) * np.conj(u)[..., None])
    return BoundaryData(times, pts, arc, np.abs(u) ** 2, dnsq, S)


def neumann_data(w: WaveField, p: PotentialPair):
    """``du/dnu - i (A . nu) u`` at the boundary nodes, shape (nt + 1, Nb)."""
    u, dn, _, _ = _boundary_fields(w)
    _, pts, normals, _, _ = boundary_nodes(w.grid)
    An = np.array([np.sum(p.A(pts, t) * normals, axis=-1) for t in w.grid.times])
    return dn - 1j * An * u


def dtn_apply(p: PotentialPair, domain: Domain, grid: GridSpec, f):
    """Dirichlet-to-Neumann data for zero initial data."""
    return neumann_data(solve_ibvp(p, domain, grid, f), p)


def dtn_conjugate(p: PotentialPair, domain: Domain, grid: GridSpec, f, c0):
    """``c0^-1 Lambda(c0 f)``: the D-to-N map conjugated by a boundary gauge trace.

    ``c0`` is a callable ``c0(points, t)`` or an array of shape (nt + 1, Nb).
    """
    _, pts, _, _, _ = boundary_nodes(grid)
    times = grid.times
    c = (np.array([c0(pts, t) for t in times], dtype=complex) if callable(c0)
         else np.asarray(c0, dtype=complex))
    if np.any(np.abs(c) < 1e-9):
        raise SingularGauge("boundary gauge trace vanishes")
    fv = _boundary_values(f, grid, pts, times, ramp=False)
    return dtn_apply(p, domain, grid, c * fv) / c


# --------------------------------------------------------------------------
# export


def write_trace_csv(path, grid: GridSpec, values, name="value"):
    _, _, _, arc, _ = boundary_nodes(grid)
    values = np.asarray(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        complex_vals = np.iscomplexobj(values)
        w.writerow(["node", "arc", "t"] + ([f"re_{name}", f"im_{name}"] if complex_vals else [name]))
        for k, t in enumerate(grid.times):
            for n in range(len(arc)):
                v = values[k, n]
                row = [n, repr(float(arc[n])), repr(float(t))]
                row += [repr(float(v.real)), repr(float(v.imag))] if complex_vals else [repr(float(v))]
                w.writerow(row)


def write_manifest(path, grid: GridSpec, p: PotentialPair, timings: Optional[dict] = None, extra=None):
    data = {"grid": grid.to_dict(), "potential": p.recipe, "solve_rtol": SOLVE_RTOL,
            "ramp_fraction": RAMP_FRACTION}
    if timings is not None:
        data["timings"] = timings
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)
