"""Spacetime domains with rigidly translating convex obstacles, and broken rays.

Every ray lives in a single time slice ``t0``: obstacles are frozen at their
``t0`` snapshot while a ray is traced. Shapes are disks and strictly convex
counter-clockwise polygons, so intersections and normals are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import (
    ClearanceTooLarge,
    DegenerateGeometry,
    InvalidGeometry,
    TangentialHit,
    TrappedRay,
)

OUTER = -1
"""Target id reported by :func:`first_hit` for the outer boundary."""

BOUNDARY_EPS = 1e-12
CORNER_EPS = 1e-9
DEFAULT_TANGENCY_TOL = 1e-6
DEFAULT_MAX_REFLECTIONS = 64


def _vec(p):
    return np.asarray(p, dtype=float).reshape(2)


# --------------------------------------------------------------------------
# shapes


@dataclass(frozen=True, eq=False)
class Disk:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if not self.radius > 0:
            raise InvalidGeometry(f"disk radius must be positive, got {self.radius}")

    @property
    def reference_point(self):
        return self.center

    @property
    def bounding_radius(self):
        return float(self.radius)

    def translated(self, offset):
        return Disk(self.center + _vec(offset), self.radius)

    def signed_distance(self, points):
        p = np.asarray(points, dtype=float)
        return np.linalg.norm(p - self.center, axis=-1) - self.radius

    def normal_at(self, point):
        d = _vec(point) - self.center
        return d / np.linalg.norm(d)

    def ray_entry(self, origin, direction):
        """Distance to the first crossing into the disk, or None."""
        oc = origin - self.center
        b = float(direction @ oc)
        c = float(oc @ oc) - self.radius**2
        disc = b * b - c
        if disc < 0 or c <= 0 or b >= 0:
            return None
        root = np.sqrt(disc)
        # stable form of -b - sqrt(disc)
        s = c / (-b + root)
        point = origin + s * direction
        return s, point, self.normal_at(point)

    def to_config(self):
        return {"disk": {"center": self.center.tolist(), "radius": float(self.radius)}}


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise InvalidGeometry("polygon needs at least three 2D vertices")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross <= 1e-14):
            raise InvalidGeometry("polygon vertices must be strictly convex and counter-clockwise")
        object.__setattr__(self, "vertices", v)

    @property
    def edges(self):
        return np.roll(self.vertices, -1, axis=0) - self.vertices

    @property
    def normals(self):
        e = self.edges
        n = np.stack([e[:, 1], -e[:, 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    @property
    def reference_point(self):
        return self.vertices.mean(axis=0)

    @property
    def bounding_radius(self):
        return float(np.max(np.linalg.norm(self.vertices - self.reference_point, axis=-1)))

    def translated(self, offset):
        return ConvexPolygon(self.vertices + _vec(offset))

    def signed_distance(self, points):
        p = np.asarray(points, dtype=float)
        v = self.vertices
        n = self.normals
        e = self.edges
        rel = p[..., None, :] - v
        plane = np.einsum("...ki,ki->...k", rel, n)
        inside = np.all(plane <= 0, axis=-1)
        lam = np.clip(np.einsum("...ki,ki->...k", rel, e) / np.sum(e * e, axis=-1), 0.0, 1.0)
        seg = np.linalg.norm(rel - lam[..., None] * e, axis=-1).min(axis=-1)
        return np.where(inside, np.max(plane, axis=-1), seg)

    def ray_entry(self, origin, direction):
        n = self.normals
        v = self.vertices
        nd = n @ direction
        num = np.einsum("ki,ki->k", n, v - origin)
        s_in, s_out, k_in = -np.inf, np.inf, -1
        for k in range(len(v)):
            if abs(nd[k]) < 1e-300:
                if num[k] < 0:
                    return None
                continue
            s = num[k] / nd[k]
            if nd[k] < 0:
                if s > s_in:
                    s_in, k_in = s, k
            elif s < s_out:
                s_out = s
        if k_in < 0 or s_in > s_out or s_in <= 0:
            return None
        point = origin + s_in * direction
        if np.min(np.linalg.norm(v - point, axis=-1)) <= CORNER_EPS:
            raise TangentialHit(f"ray hits polygon corner at {point.tolist()}")
        return s_in, point, n[k_in].copy()

    def to_config(self):
        return {"polygon": {"vertices": self.vertices.tolist()}}


Shape = Union[Disk, ConvexPolygon]


# --------------------------------------------------------------------------
# motion and obstacles


@dataclass(frozen=True, eq=False)
class Translation:
    """Rigid translation phi(t) with phi(0) = 0 and its time derivative."""

    offset: Callable[[float], np.ndarray]
    velocity: Callable[[float], np.ndarray]
    speed_bound: float = 0.0
    description: dict = field(default_factory=dict)

    @classmethod
    def static(cls):
        zero = lambda t: np.zeros(np.shape(t) + (2,))
        return cls(zero, zero, 0.0, {"static": True})

    @classmethod
    def linear(cls, velocity):
        v = _vec(velocity)
        return cls(
            lambda t: np.multiply.outer(np.asarray(t, dtype=float), v),
            lambda t: np.broadcast_to(v, np.shape(t) + (2,)).copy(),
            float(np.linalg.norm(v)),
            {"velocity": v.tolist()},
        )


STATIC = Translation.static()


@dataclass(frozen=True, eq=False)
class Obstacle:
    shape: Shape
    motion: Translation = STATIC

    def at(self, t):
        """Snapshot of the obstacle at time t."""
        return self.shape.translated(self.motion.offset(t))

    def center(self, t):
        return self.shape.reference_point + _vec(self.motion.offset(t))

    def center_velocity(self, t):
        return _vec(self.motion.velocity(t))

    def centers(self, t):
        """Reference points at an array of times, shape ``t.shape + (2,)``."""
        t = np.asarray(t, dtype=float)
        off = np.asarray(self.motion.offset(t), dtype=float)
        if off.shape != t.shape + (2,):
            flat = [self.motion.offset(float(s)) for s in t.ravel()]
            off = np.asarray(flat, dtype=float).reshape(t.shape + (2,))
        return self.shape.reference_point + off

    def center_velocities(self, t):
        t = np.asarray(t, dtype=float)
        vel = np.asarray(self.motion.velocity(t), dtype=float)
        if vel.shape != t.shape + (2,):
            flat = [self.motion.velocity(float(s)) for s in t.ravel()]
            vel = np.asarray(flat, dtype=float).reshape(t.shape + (2,))
        return vel


@dataclass(frozen=True, eq=False)
class OuterDisk:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))

    def signed_distance(self, points):
        p = np.asarray(points, dtype=float)
        return np.linalg.norm(p - self.center, axis=-1) - self.radius

    def outward_normal(self, point):
        d = _vec(point) - self.center
        return d / np.linalg.norm(d)

    def exit_distance(self, origin, direction):
        oc = origin - self.center
        b = float(direction @ oc)
        c = float(oc @ oc) - self.radius**2
        disc = max(b * b - c, 0.0)
        return -b + np.sqrt(disc)

    def entry_distance(self, origin, direction):
        oc = origin - self.center
        b = float(direction @ oc)
        c = float(oc @ oc) - self.radius**2
        disc = b * b - c
        if disc <= 0:
            return None
        s = -b - np.sqrt(disc)
        if -b + np.sqrt(disc) <= 0:
            return None
        return max(s, 0.0)

    def boundary_points(self, n):
        a = 2 * np.pi * np.arange(n) / n
        return self.center + self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def to_config(self):
        return {"disk": {"center": self.center.tolist(), "radius": float(self.radius)}}


@dataclass(frozen=True, eq=False)
class OuterRect:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec(self.lo))
        object.__setattr__(self, "hi", _vec(self.hi))
        if np.any(self.hi <= self.lo):
            raise InvalidGeometry("rectangle needs hi > lo on both axes")

    def signed_distance(self, points):
        p = np.asarray(points, dtype=float)
        c = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        q = np.abs(p - c) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def outward_normal(self, point):
        p = _vec(point)
        gaps = np.array([p[0] - self.lo[0], self.hi[0] - p[0], p[1] - self.lo[1], self.hi[1] - p[1]])
        k = int(np.argmin(np.abs(gaps)))
        return [np.array([-1.0, 0]), np.array([1.0, 0]), np.array([0, -1.0]), np.array([0, 1.0])][k]

    def _slab(self, origin, direction):
        t_lo, t_hi = -np.inf, np.inf
        for i in range(2):
            if abs(direction[i]) < 1e-300:
                if origin[i] < self.lo[i] or origin[i] > self.hi[i]:
                    return None
                continue
            a = (self.lo[i] - origin[i]) / direction[i]
            b = (self.hi[i] - origin[i]) / direction[i]
            t_lo = max(t_lo, min(a, b))
            t_hi = min(t_hi, max(a, b))
        if t_lo > t_hi:
            return None
        return t_lo, t_hi

    def exit_distance(self, origin, direction):
        return self._slab(origin, direction)[1]

    def entry_distance(self, origin, direction):
        slab = self._slab(origin, direction)
        if slab is None or slab[1] <= 0:
            return None
        return max(slab[0], 0.0)

    def boundary_points(self, n):
        per = max(n // 4, 1)
        s = np.arange(per) / per
        (x0, y0), (x1, y1) = self.lo, self.hi
        sides = [
            np.stack([x0 + (x1 - x0) * s, np.full(per, y0)], -1),
            np.stack([np.full(per, x1), y0 + (y1 - y0) * s], -1),
            np.stack([x1 - (x1 - x0) * s, np.full(per, y1)], -1),
            np.stack([np.full(per, x0), y1 - (y1 - y0) * s], -1),
        ]
        return np.concatenate(sides)

    def to_config(self):
        return {"rect": {"lo": self.lo.tolist(), "hi": self.hi.tolist()}}


Outer = Union[OuterDisk, OuterRect]


@dataclass(frozen=True, eq=False)
class Domain:
    """Outer region minus moving obstacles over ``t_span = (0, T)``."""

    outer: Outer
    obstacles: Sequence[Obstacle] = ()
    t_span: tuple = (0.0, 1.0)
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        t0, t1 = map(float, self.t_span)
        if not (t0 == 0.0 and t1 > 0):
            raise InvalidGeometry(f"t_span must be (0, T) with T > 0, got {self.t_span}")
        object.__setattr__(self, "t_span", (t0, t1))
        if self.validate:
            problems = self.diagnose()
            if problems:
                raise InvalidGeometry("; ".join(problems))

    @property
    def T(self):
        return self.t_span[1]

    def snapshots(self, t):
        return [ob.at(t) for ob in self.obstacles]

    def sample_times(self, n=65):
        return np.linspace(0.0, self.T, n)

    def diagnose(self, n_times=65):
        """Human-readable invariant violations, first offending time per kind."""
        problems = []
        outside_reported = set()
        overlap_reported = set()
        for t in self.sample_times(n_times):
            snaps = self.snapshots(t)
            for j, s in enumerate(snaps):
                if j in outside_reported:
                    continue
                if _max_outer_sd(self.outer, s) >= 0:
                    problems.append(f"obstacle {j} leaves the outer region at t={t:.6g}")
                    outside_reported.add(j)
            for j in range(len(snaps)):
                for k in range(j + 1, len(snaps)):
                    if (j, k) in overlap_reported:
                        continue
                    if _shapes_overlap(snaps[j], snaps[k]):
                        problems.append(f"obstacles {j} and {k} overlap at t={t:.6g}")
                        overlap_reported.add((j, k))
        return problems

    def obstacle_signed_distance(self, points, t):
        """Minimum signed distance to the obstacle snapshots at time t."""
        p = np.asarray(points, dtype=float)
        if not self.obstacles:
            return np.full(p.shape[:-1], np.inf)
        return np.min([s.signed_distance(p) for s in self.snapshots(t)], axis=0)

    def contains(self, points, t, margin=0.0):
        p = np.asarray(points, dtype=float)
        ok = self.outer.signed_distance(p) < -margin
        return ok & (self.obstacle_signed_distance(p, t) > margin)


def _max_outer_sd(outer, shape):
    """Largest outer signed distance over the shape (>= 0 means it pokes out)."""
    if isinstance(shape, Disk):
        if isinstance(outer, OuterDisk):
            return np.linalg.norm(shape.center - outer.center) + shape.radius - outer.radius
        lo = shape.center - shape.radius - outer.lo
        hi = outer.hi - (shape.center + shape.radius)
        return -min(lo.min(), hi.min())
    return float(np.max(outer.signed_distance(shape.vertices)))


def _shapes_overlap(a, b):
    if isinstance(a, Disk) and isinstance(b, Disk):
        return np.linalg.norm(a.center - b.center) <= a.radius + b.radius
    if isinstance(a, Disk):
        return b.signed_distance(a.center) <= a.radius
    if isinstance(b, Disk):
        return a.signed_distance(b.center) <= b.radius
    # separating axis test for convex polygons
    for poly in (a, b):
        for n in poly.normals:
            pa = a.vertices @ n
            pb = b.vertices @ n
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


# --------------------------------------------------------------------------
# rays


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    normal: np.ndarray
    target: int
    distance: float


@dataclass(frozen=True)
class Leg:
    start: np.ndarray
    direction: np.ndarray
    length: float
    entry_arclength: float

    @property
    def end(self):
        return self.start + self.length * self.direction


@dataclass(frozen=True)
class Reflection:
    point: np.ndarray
    normal: np.ndarray
    obstacle: int


@dataclass(frozen=True)
class BrokenRay:
    t0: float
    legs: tuple
    reflections: tuple

    @property
    def n_reflections(self):
        return len(self.reflections)

    @property
    def total_length(self):
        return float(sum(leg.length for leg in self.legs))

    @property
    def entry_point(self):
        return self.legs[0].start

    @property
    def exit_point(self):
        return self.legs[-1].end

    def sample_points(self, per_leg=100):
        """Points along every leg, endpoints included; shape (legs, per_leg, 2)."""
        s = np.linspace(0.0, 1.0, per_leg)
        return np.stack([leg.start + np.outer(s * leg.length, leg.direction) for leg in self.legs])

    def reversed(self):
        legs = []
        arclen = 0.0
        for leg in reversed(self.legs):
            legs.append(Leg(leg.end, -leg.direction, leg.length, arclen))
            arclen += leg.length
        return BrokenRay(self.t0, tuple(legs), tuple(reversed(self.reflections)))


def reflect_direction(theta, n, tangency_tol=DEFAULT_TANGENCY_TOL):
    """Specular reflection of direction ``theta`` in the unit normal ``n``."""
    theta = _vec(theta)
    n = _vec(n)
    dot = float(theta @ n)
    if abs(dot) <= tangency_tol:
        raise TangentialHit(f"grazing incidence, |n.theta| = {abs(dot):.3e}")
    return theta - 2.0 * dot * n


def _nearest_hit(origin, direction, domain, t0, skip=None):
    best = None
    for j, snap in enumerate(domain.snapshots(t0)):
        if j == skip:
            continue
        hit = snap.ray_entry(origin, direction)
        if hit is None:
            continue
        s, p, n = hit
        if s > BOUNDARY_EPS and (best is None or s < best.distance):
            best = Hit(p, n, j, float(s))
    s_out = domain.outer.exit_distance(origin, direction)
    if best is None or s_out <= best.distance:
        p = origin + s_out * direction
        return Hit(p, domain.outer.outward_normal(p), OUTER, float(s_out))
    return best


def first_hit(origin, direction, domain, t0):
    """Nearest boundary hit along a ray starting inside the slice ``D_t0``."""
    o = _vec(origin)
    d = _vec(direction)
    sd_outer = float(domain.outer.signed_distance(o))
    sd_obs = float(domain.obstacle_signed_distance(o, t0))
    if abs(sd_outer) <= BOUNDARY_EPS or abs(sd_obs) <= BOUNDARY_EPS:
        raise DegenerateGeometry(f"origin {o.tolist()} lies on a boundary")
    if sd_outer > 0 or sd_obs < 0:
        raise DegenerateGeometry(f"origin {o.tolist()} is outside the slice D_t0")
    return _nearest_hit(o, d, domain, t0)


def trace_broken_ray(
    origin,
    omega,
    t0,
    domain,
    max_reflections=DEFAULT_MAX_REFLECTIONS,
    tangency_tol=DEFAULT_TANGENCY_TOL,
):
    """Trace a ray through the slice at ``t0`` until it leaves the outer region.

    Origins on or outside the outer boundary are advanced to the point where
    the ray enters; interior origins start a leg directly.
    """
    o = _vec(origin)
    theta = _vec(omega)
    if abs(np.linalg.norm(theta) - 1.0) > 1e-12:
        raise ValueError("omega must be a unit vector")
    if max_reflections < 0:
        raise ValueError("max_reflections must be >= 0")
    if domain.outer.signed_distance(o) >= -BOUNDARY_EPS:
        s = domain.outer.entry_distance(o, theta)
        if s is None:
            raise DegenerateGeometry("ray does not enter the outer region")
        x = o + s * theta
    else:
        sd = float(domain.obstacle_signed_distance(o, t0))
        if sd <= BOUNDARY_EPS:
            raise DegenerateGeometry(f"origin {o.tolist()} is inside or on an obstacle")
        x = o
    legs, refl = [], []
    arclen = 0.0
    skip = None
    while True:
        hit = _nearest_hit(x, theta, domain, t0, skip)
        legs.append(Leg(x, theta, hit.distance, arclen))
        arclen += hit.distance
        if hit.target == OUTER:
            return BrokenRay(float(t0), tuple(legs), tuple(refl))
        if len(refl) >= max_reflections:
            raise TrappedRay(f"more than {max_reflections} reflections")
        theta = reflect_direction(theta, hit.normal, tangency_tol)
        refl.append(Reflection(hit.point, hit.normal, hit.target))
        x = hit.point
        skip = hit.target


# --------------------------------------------------------------------------
# loops


def generator_loops(domain, t0, clearance, n_vertices=128):
    """One counter-clockwise closed polyline per obstacle snapshot at ``t0``.

    Each loop is a regular polygon about the obstacle's reference point whose
    edges keep at least ``clearance`` from the obstacle. Returned arrays have
    shape (n_vertices + 1, 2) with the first vertex repeated at the end.
    """
    if not clearance > 0:
        raise ValueError("clearance must be positive")
    snaps = domain.snapshots(t0)
    loops = []
    a = 2 * np.pi * np.arange(n_vertices + 1) / n_vertices
    a[-1] = 0.0
    ring = np.stack([np.cos(a), np.sin(a)], axis=-1)
    for j, s in enumerate(snaps):
        c = s.reference_point
        rho = (s.bounding_radius + clearance) / np.cos(np.pi / n_vertices)
        if domain.outer.signed_distance(c) >= -rho:
            raise ClearanceTooLarge(f"loop around obstacle {j} leaves the outer region")
        for k, other in enumerate(snaps):
            if k != j and other.signed_distance(c) <= rho:
                raise ClearanceTooLarge(f"loop around obstacle {j} meets obstacle {k}")
        loops.append(c + rho * ring)
    return loops


def winding_about(loop, point):
    """Winding number of a closed polyline about ``point`` (angle summation)."""
    d = np.asarray(loop, dtype=float) - _vec(point)
    ang = np.arctan2(d[:, 1], d[:, 0])
    inc = np.diff(ang)
    inc = (inc + np.pi) % (2 * np.pi) - np.pi
    return int(np.rint(inc.sum() / (2 * np.pi)))
