import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abflux import fields as F
from abflux import gauge
from abflux import geometry as geo
from abflux.errors import PathBlocked, PreconditionViolated, SingularGauge, UndersampledLoop

from oracles import winding_by_dense_unwrap


def ring_domain(T=1.0, velocity=(0.0, 0.0)):
    motion = geo.Translation.linear(velocity) if any(velocity) else geo.STATIC
    return geo.Domain(geo.OuterDisk((0, 0), 3.0), [geo.Obstacle(geo.Disk((0, 0), 0.5), motion)], (0, T))


def circle(center, r, t, n=256):
    a = np.linspace(0, 2 * np.pi, n + 1)
    a[-1] = 0.0
    return F.SpacetimePath.spatial(np.asarray(center) + r * np.stack([np.cos(a), np.sin(a)], -1), t, closed=True)


# apply_gauge


def test_identity_gauge_leaves_potentials():
    p = F.gaussian_bump_potential((0.3, 0.2), 0.5, (0.1, 0.0), 0.7, 1.0)
    q = gauge.apply_gauge(p, gauge.IDENTITY_GAUGE)
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    t = np.linspace(0, 1, 20)
    assert np.array_equal(q.A(x, t), p.A(x, t))
    assert np.array_equal(q.V(x, t), p.V(x, t))


def test_linear_phase_shifts_A():
    c = gauge.PhaseGauge(gauge.TermPhase(({"coef": 1.0, "powers": [1, 0, 0]},)))
    q = gauge.apply_gauge(F.zero_potential(), c)
    x = np.array([[0.3, -0.4], [1.0, 2.0]])
    assert np.allclose(q.A(x, np.zeros(2)), [[-1, 0], [-1, 0]])
    assert np.allclose(q.V(x, np.zeros(2)), 0)


def test_time_phase_shifts_V():
    c = gauge.PhaseGauge(gauge.TermPhase(({"coef": 1.0, "powers": [0, 0, 1]},)))
    q = gauge.apply_gauge(F.zero_potential(), c)
    x = np.array([[0.3, -0.4], [1.0, 2.0]])
    assert np.allclose(q.A(x, np.ones(2)), 0)
    assert np.allclose(q.V(x, np.ones(2)), 1)


def random_gauge(rng, domain=None, windings=()):
    psi = gauge.GaussianPhase(rng.uniform(-2, 2), tuple(rng.uniform(-1, 1, 2)), rng.uniform(0.4, 1.2),
                              rng.uniform(0, 3), rng.uniform(0, 6))
    return gauge.PhaseGauge(psi, windings, domain if windings else None)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([-1, 0, 1]))
def test_derived_fields_gauge_invariant(seed, m):
    rng = np.random.default_rng(seed)
    dom = ring_domain(velocity=(0.3, 0.1))
    p = F.gaussian_bump_potential(rng.uniform(-1, 1, 2), rng.uniform(-1, 1), (0.5, 0.5), 0.8, 1.3)
    c = random_gauge(rng, dom, (m,))
    q = gauge.apply_gauge(p, c)
    t = rng.uniform(0, 1, 100)
    a = rng.uniform(0, 2 * np.pi, 100)
    r = rng.uniform(0.9, 2.8, 100)
    x = np.stack([r * np.cos(a), r * np.sin(a)], -1) + 0.3 * t[:, None] * np.array([1.0, 1 / 3])
    fp, fq = F.derived_fields(p), F.derived_fields(q)
    assert np.max(np.abs(fp.B3(x, t) - fq.B3(x, t))) <= 1e-8
    assert np.max(np.abs(fp.E(x, t) - fq.E(x, t))) <= 1e-8


def test_angle_gauge_singular_at_centre():
    dom = ring_domain()
    c = gauge.PhaseGauge(None, (1,), dom)
    with pytest.raises(SingularGauge):
        c(np.array([[0.0, 0.0]]), np.array([0.0]))


def test_boundary_trivial_flag():
    dom = ring_domain()
    inner = gauge.PhaseGauge(gauge.BumpPhase(1.0, (1.0, 0.0), 0.8), boundary_trivial=True)
    assert inner.boundary_defect(dom) == 0
    wide = gauge.PhaseGauge(gauge.GaussianPhase(1.0, (1.0, 0.0), 2.0), boundary_trivial=True)
    with pytest.raises(ValueError):
        wide.check_boundary_trivial(dom)


def test_matrix_gauge_singular():
    g = gauge.MatrixGauge(lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2), complex))
    p = F.matrix_bump_potential([{"center": (0, 0), "width": 0.5, "A1": "x"}])
    q = gauge.apply_gauge(p, g)
    with pytest.raises(SingularGauge):
        q.A(np.array([[0.1, 0.0]]), np.array([0.0]))


# holonomy


def test_trivial_holonomy():
    assert gauge.holonomy(F.zero_potential(), circle((0, 0), 1.0, 0.0)) == 1


@pytest.mark.parametrize("flux,expected", [(2 * np.pi, 1.0), (np.pi, -1.0), (-4 * np.pi, 1.0)])
def test_vortex_holonomy(flux, expected):
    R = gauge.holonomy(F.vortex_potential(flux), circle((0, 0), 1.0, 0.0))
    assert abs(R - expected) <= 1e-8


def test_holonomy_needs_closed_loop():
    with pytest.raises(ValueError):
        gauge.holonomy(F.zero_potential(), F.SpacetimePath.from_points([[0, 0, 0], [1, 0, 0]]))


def random_loop(rng, dom):
    """Star-shaped loop around the origin (so it may encircle the obstacle) or a small loop away from it."""
    t = rng.uniform(0.1, 0.9)
    a = np.linspace(0, 2 * np.pi, 129)
    a[-1] = 0.0
    if rng.random() < 0.5:
        r = rng.uniform(0.9, 1.6) + 0.3 * np.sin(rng.integers(1, 4) * a + rng.uniform(0, 6))
        c = dom.obstacles[0].center(t)
        pts = c + r[:, None] * np.stack([np.cos(a), np.sin(a)], -1)
        tt = t + 0.05 * np.sin(a) * rng.uniform(-1, 1)
    else:
        c = rng.uniform(1.2, 2.0) * np.array([np.cos(rng.uniform(0, 6)), 0.0]) + np.array([0, 0.9])
        pts = c + 0.4 * np.stack([np.cos(a), np.sin(a)], -1)
        tt = t + 0.1 * np.cos(a)
    return F.SpacetimePath(np.column_stack([pts, tt]), closed=True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([-1, 0, 1]))
def test_holonomy_gauge_invariant_and_unimodular(seed, m):
    rng = np.random.default_rng(seed)
    dom = ring_domain(velocity=(0.2, -0.1))
    p = F.sum_potentials(F.gaussian_bump_potential(rng.uniform(-1, 1, 2), rng.uniform(-1, 1), (1.0, 0.5), 0.6, 1.0),
                         F.vortex_potential(rng.uniform(0, 7), (0, 0), (0.2, -0.1)))
    c = random_gauge(rng, dom, (m,))
    loop = random_loop(rng, dom)
    R = gauge.holonomy(p, loop)
    assert abs(abs(R) - 1) <= 1e-12
    assert abs(gauge.holonomy(gauge.apply_gauge(p, c), loop) - R) <= 1e-8


def test_holonomy_homotopy_invariance_shielded():
    b = F.SmoothStepProfile(1.0, 2.5, 1.0, 1.0)
    p, fs, dom = F.build_shielded_scenario("magnetic", b, 0.5, 0.2, 0.05)
    t = 1.4
    c = dom.obstacles[0].center(t)
    R1 = gauge.holonomy(p, circle(c, 0.5, t))
    R2 = gauge.holonomy(p, circle(c + [0.2, 0.1], 1.2, t))
    assert abs(R1 - R2) <= 2e-6


# equivalence


def test_identical_pair_equivalent_with_trivial_gauge():
    dom = ring_domain()
    p = F.vortex_potential(1.0)
    v = gauge.test_gauge_equivalence(p, p, dom, t_samples=[0.0, 0.5, 1.0])
    assert v.equivalent and v.windings == (0,)
    targets = np.array([[1.0, 1.0, 0.3], [-2.0, 0.5, 0.9]])
    assert np.allclose(v.gauge.values(targets), 1.0)


def test_flux_shift_by_2pi_is_equivalent():
    dom = ring_domain()
    v = gauge.test_gauge_equivalence(F.vortex_potential(0.7), F.vortex_potential(0.7 + 2 * np.pi), dom,
                                     t_samples=[0.0, 0.5, 1.0])
    assert v.equivalent
    assert v.windings == (1,)
    assert v.gauge.windings == (-1,)
    # c is exp(-i (theta - theta_base)) for this pair
    targets = np.array([[1.0, 1.0, 0.3], [-2.0, 0.5, 0.9], [0.2, -1.5, 0.6]])
    base_x, _ = v.gauge.base
    ref = np.exp(-1j * (np.arctan2(targets[:, 1], targets[:, 0]) - np.arctan2(base_x[1], base_x[0])))
    assert np.max(np.abs(v.gauge.values(targets) - ref)) <= 1e-6


def test_half_flux_is_inequivalent(tmp_path):
    dom = ring_domain()
    v = gauge.test_gauge_equivalence(F.vortex_potential(0.0), F.vortex_potential(np.pi), dom, t_samples=[0.0, 1.0])
    assert not v.equivalent
    assert abs(v.holonomy_value + 1) <= 1e-6
    v.write_json(tmp_path / "v.json")
    data = json.loads((tmp_path / "v.json").read_text())
    assert data["verdict"] == "Inequivalent"
    assert "witness_loop" in data
    with pytest.raises(PreconditionViolated):
        gauge.construct_gauge_function(F.vortex_potential(0.0), F.vortex_potential(np.pi), dom,
                                       gauge.default_base(dom), [[1, 1, 0.5]], v)


def test_time_dependent_flux_mismatch_is_found_by_time_loops():
    # equal fluxes at every sampled time slice would not catch a time-only mismatch in V;
    # a V-difference concentrated near the obstacle is caught by the comoving time loops
    dom = ring_domain()
    p = F.zero_potential()
    bump = F.gaussian_bump_potential((0, 0), 3.0, (0.0, 0.0), 0.9)
    v = gauge.test_gauge_equivalence(p, bump, dom, t_samples=np.linspace(0, 1, 5))
    assert not v.equivalent


def test_round_trip_with_moving_obstacle():
    dom = ring_domain(velocity=(0.5, 0.0))
    p = F.gaussian_bump_potential((0.4, -0.3), 0.2, (1.5, 0.5), 0.6, 1.0)
    c = gauge.PhaseGauge(gauge.BumpPhase(0.9, (-1.2, 0.6), 1.0, 1.3), (1,), dom)
    v = gauge.test_gauge_equivalence(p, gauge.apply_gauge(p, c), dom, t_samples=np.linspace(0, 1, 6))
    assert v.equivalent
    rng = np.random.default_rng(5)
    targets = []
    while len(targets) < 15:
        x, t = rng.uniform(-2.5, 2.5, 2), rng.uniform(0, 1)
        if dom.contains(x[None], t, margin=0.2)[0]:
            targets.append([x[0], x[1], t])
    targets = np.array(targets)
    base_x, base_t = v.gauge.base
    ref = c(targets[:, :2], targets[:, 2]) / c(base_x[None], np.array([base_t]))[0]
    assert np.max(np.abs(v.gauge.values(targets) - ref)) <= 1e-6


def test_gauge_value_is_path_independent():
    dom = ring_domain()
    p = F.gaussian_bump_potential((0.4, -0.3), 0.2, (1.5, 0.5), 0.6, 1.0)
    c = gauge.PhaseGauge(gauge.BumpPhase(0.9, (-1.2, 0.6), 1.0, 1.3), (1,), dom)
    q = gauge.apply_gauge(p, c)
    start, goal, t = (-2.0, 0.0), (2.0, 0.0), 0.4
    upper = F.SpacetimePath.spatial([start, (-1.0, 1.2), (1.0, 1.2), goal], t)
    lower = F.SpacetimePath.spatial([start, (-1.0, -1.2), (1.0, -1.2), goal], t)
    cu, cl = gauge.path_gauge_value(p, q, upper), gauge.path_gauge_value(p, q, lower)
    # upper and lower detours differ by a loop around the obstacle; the winding
    # gauge is single valued so the values agree
    assert abs(cu - cl) <= 2e-6
    ref = c(np.array([goal]), np.array([t]))[0] / c(np.array([start]), np.array([t]))[0]
    assert abs(cu - ref) <= 1e-8


def test_route_polyline_avoids_obstacles():
    dom = ring_domain()
    poly = gauge.route_polyline(dom, 0.0, (-2, 0), (2, 0), clearance=0.1)
    assert np.allclose(poly[0], [-2, 0]) and np.allclose(poly[-1], [2, 0])
    s = np.linspace(0, 1, 200)
    for a, b in zip(poly[:-1], poly[1:]):
        pts = a + np.outer(s, b - a)
        assert np.min(np.linalg.norm(pts, axis=1)) >= 0.5 + 0.1 - 1e-9
    with pytest.raises(PathBlocked):
        gauge.route_polyline(dom, 0.0, (-2, 0), (0.0, 0.1))


# winding numbers


def test_winding_examples():
    th = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    assert gauge.winding_number(np.ones(10)) == 0
    assert gauge.winding_number(np.exp(1j * th)) == 1
    phase = lambda a: 2 * a + 0.3 * np.sin(a)
    assert gauge.winding_number(np.exp(1j * phase(th))) == winding_by_dense_unwrap(phase, 4000) == 2


def test_winding_undersampled():
    th = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    with pytest.raises(UndersampledLoop):
        gauge.winding_number(np.exp(3j * th))


@settings(max_examples=50, deadline=None)
@given(st.integers(-4, 4), st.floats(-0.8, 0.8), st.integers(1, 3))
def test_winding_matches_unwrap_oracle(m, amp, k):
    phase = lambda a: m * a + amp * np.sin(k * a)
    th = np.linspace(0, 2 * np.pi, 300, endpoint=False)
    assert gauge.winding_number(np.exp(1j * phase(th))) == winding_by_dense_unwrap(phase, 3000) == m
