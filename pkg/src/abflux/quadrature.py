"""Vectorised adaptive Gauss-Legendre quadrature in one and two dimensions.

Both integrators bisect panels until the Gauss estimate on a panel agrees
with the sum over its children. Every active panel of a refinement level is
evaluated in a single call of the integrand, so integrands must accept numpy
arrays of abscissae.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import QuadratureNonconvergent


@dataclass(frozen=True)
class QuadConfig:
    """Tolerances for adaptive quadrature.

    ``tol`` is an absolute tolerance on the whole integral; it is shared
    between panels in proportion to their size.
    """

    tol: float = 1e-10
    max_depth: int = 24
    order: int = 10
    initial_panels: int = 1


DEFAULT_QUAD = QuadConfig()


@lru_cache(maxsize=None)
def gauss_legendre(n):
    """Nodes and weights of the n-point rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def fixed_gauss(f, a, b, n=32):
    """Integrate ``f`` on [a, b] with one n-point rule; a, b broadcast."""
    x, w = gauss_legendre(n)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    span = b - a
    s = a[..., None] + span[..., None] * x
    return np.sum(f(s) * w, axis=-1) * span


def _panel_estimates(f, a, b, order):
    x, w = gauss_legendre(order)
    s = a[:, None] + (b - a)[:, None] * x
    vals = np.asarray(f(s.ravel())).reshape(s.shape)
    return (vals @ w) * (b - a)


def adaptive_integrate(f, a, b, cfg=DEFAULT_QUAD):
    """Integrate the vectorised scalar function ``f`` over [a, b].

    Returns the integral estimate. Raises QuadratureNonconvergent when a
    panel still fails the tolerance after ``cfg.max_depth`` bisections.
    """
    if a == b:
        return 0.0
    edges = np.linspace(a, b, cfg.initial_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    total_len = abs(b - a)
    whole = _panel_estimates(f, lo, hi, cfg.order)
    result = 0.0
    for _depth in range(cfg.max_depth + 1):
        mid = 0.5 * (lo + hi)
        left = _panel_estimates(f, np.concatenate([lo, mid]), np.concatenate([mid, hi]), cfg.order)
        n = lo.size
        fine = left[:n] + left[n:]
        err = np.abs(fine - whole)
        allowed = cfg.tol * np.abs(hi - lo) / total_len
        done = err <= np.maximum(allowed, 1e-15 * np.abs(fine))
        result = result + np.sum(fine[done])
        keep = ~done
        if not keep.any():
            return result
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        whole = np.concatenate([left[:n][keep], left[n:][keep]])
    raise QuadratureNonconvergent(
        f"adaptive quadrature exceeded depth {cfg.max_depth} on [{a}, {b}]"
    )


def _cell_estimates(f, u0, u1, v0, v1, order):
    x, w = gauss_legendre(order)
    du = u1 - u0
    dv = v1 - v0
    uu = u0[:, None, None] + du[:, None, None] * x[None, :, None]
    vv = v0[:, None, None] + dv[:, None, None] * x[None, None, :]
    uu, vv = np.broadcast_arrays(uu, vv)
    vals = np.asarray(f(uu.ravel(), vv.ravel())).reshape(uu.shape)
    return np.einsum("kij,i,j->k", vals, w, w) * du * dv


def adaptive_integrate_2d(f, u_range, v_range, cfg=QuadConfig(order=8, max_depth=12)):
    """Integrate ``f(u, v)`` over a rectangle by quadtree refinement."""
    (ua, ub), (va, vb) = u_range, v_range
    if ua == ub or va == vb:
        return 0.0
    m = cfg.initial_panels
    ue = np.linspace(ua, ub, m + 1)
    ve = np.linspace(va, vb, m + 1)
    U0, V0 = np.meshgrid(ue[:-1], ve[:-1], indexing="ij")
    U1, V1 = np.meshgrid(ue[1:], ve[1:], indexing="ij")
    u0, u1, v0, v1 = U0.ravel(), U1.ravel(), V0.ravel(), V1.ravel()
    total_area = abs((ub - ua) * (vb - va))
    whole = _cell_estimates(f, u0, u1, v0, v1, cfg.order)
    result = 0.0
    for _depth in range(cfg.max_depth + 1):
        um = 0.5 * (u0 + u1)
        vm = 0.5 * (v0 + v1)
        cu0 = np.concatenate([u0, um, u0, um])
        cu1 = np.concatenate([um, u1, um, u1])
        cv0 = np.concatenate([v0, v0, vm, vm])
        cv1 = np.concatenate([vm, vm, v1, v1])
        kids = _cell_estimates(f, cu0, cu1, cv0, cv1, cfg.order)
        n = u0.size
        kids = kids.reshape(4, n)
        fine = kids.sum(axis=0)
        err = np.abs(fine - whole)
        allowed = cfg.tol * np.abs((u1 - u0) * (v1 - v0)) / total_area
        done = err <= np.maximum(allowed, 1e-15 * np.abs(fine))
        result = result + np.sum(fine[done])
        keep = ~done
        if not keep.any():
            return result
        idx = np.tile(keep, 4)
        u0, u1, v0, v1 = cu0[idx], cu1[idx], cv0[idx], cv1[idx]
        whole = kids[:, keep].ravel()
    raise QuadratureNonconvergent(
        f"2D adaptive quadrature exceeded depth {cfg.max_depth}"
    )
