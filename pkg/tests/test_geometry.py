import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abflux import geometry as geo
from abflux.errors import (ClearanceTooLarge, DegenerateGeometry, InvalidGeometry, TangentialHit,
                           TrappedRay)


def unit_disk_domain(R=5.0, T=1.0):
    return geo.Domain(geo.OuterDisk((0, 0), R), [geo.Obstacle(geo.Disk((0, 0), 1.0))], (0, T))


# reflection law


@pytest.mark.parametrize("theta,n,expected", [
    ((1, 0), (-1, 0), (-1, 0)),
    ((0.6, 0.8), (0, -1), (0.6, -0.8)),
])
def test_reflect_simple_cases(theta, n, expected):
    assert np.allclose(geo.reflect_direction(theta, n), expected, atol=1e-15)


def test_reflect_oblique_wall():
    n = np.array([-np.sqrt(3) / 2, 0.5])
    out = geo.reflect_direction((1, 0), n)
    # independent arithmetic: n.theta = -sqrt(3)/2, so out = (1 - 3/2, sqrt(3)/2)
    assert np.allclose(out, [-0.5, np.sqrt(3) / 2], atol=1e-12)
    assert abs(np.linalg.norm(out) - 1) < 1e-12


def test_reflect_rejects_grazing():
    with pytest.raises(TangentialHit):
        geo.reflect_direction((1, 0), (0, 1))
    with pytest.raises(TangentialHit):
        geo.reflect_direction((1, 0), (1e-7, 1.0))


angles = st.floats(0, 2 * np.pi, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(angles, angles)
def test_reflection_properties(a, b):
    th = np.array([np.cos(a), np.sin(a)])
    n = np.array([np.cos(b), np.sin(b)])
    if abs(n @ th) <= 0.01:
        return
    r = geo.reflect_direction(th, n)
    assert abs(np.linalg.norm(r) - 1) <= 1e-12
    assert abs(r @ n + th @ n) <= 1e-12
    tang = np.array([-n[1], n[0]])
    assert abs(r @ tang - th @ tang) <= 1e-12
    assert np.allclose(geo.reflect_direction(r, n), th, atol=1e-12, rtol=0)


# first hit


def test_first_hit_axis():
    hit = geo.first_hit((-3, 0), (1, 0), unit_disk_domain(), 0.0)
    assert np.allclose(hit.point, [-1, 0])
    assert np.allclose(hit.normal, [-1, 0])
    assert hit.distance == pytest.approx(2.0, abs=1e-14)
    assert hit.target == 0


def test_first_hit_offset_matches_quadratic():
    hit = geo.first_hit((-3, 0.5), (1, 0), unit_disk_domain(), 0.0)
    # circle x^2 + 0.25 = 1 gives x = -sqrt(0.75)
    x = -np.sqrt(0.75)
    assert np.allclose(hit.point, [x, 0.5], atol=1e-12)
    assert np.allclose(hit.normal, [x, 0.5], atol=1e-12)
    assert hit.distance == pytest.approx(3 + x, abs=1e-12)


def test_first_hit_outer_boundary():
    dom = geo.Domain(geo.OuterDisk((0, 0), 5.0), [], (0, 1))
    hit = geo.first_hit((0, 0), (1, 0), dom, 0.0)
    assert np.allclose(hit.point, [5, 0])
    assert hit.distance == pytest.approx(5.0)
    assert hit.target == geo.OUTER


def test_first_hit_rejects_points_inside_obstacle():
    with pytest.raises(DegenerateGeometry):
        geo.first_hit((0.2, 0), (1, 0), unit_disk_domain(), 0.0)


def test_first_hit_polygon():
    sq = geo.ConvexPolygon(np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float))
    dom = geo.Domain(geo.OuterRect((-4, -4), (4, 4)), [geo.Obstacle(sq)], (0, 1))
    hit = geo.first_hit((-3, 0.3), (1, 0), dom, 0.0)
    assert np.allclose(hit.point, [-1, 0.3])
    assert np.allclose(hit.normal, [-1, 0])


# broken rays


def test_trace_miss():
    ray = geo.trace_broken_ray((-5, 2), (1, 0), 0.0, unit_disk_domain())
    assert ray.n_reflections == 0
    assert len(ray.legs) == 1
    assert np.allclose(ray.exit_point, [np.sqrt(21), 2])


def test_trace_head_on():
    ray = geo.trace_broken_ray((-5, 0), (1, 0), 0.0, unit_disk_domain())
    assert ray.n_reflections == 1
    assert np.allclose(ray.reflections[0].point, [-1, 0])
    assert np.allclose(ray.legs[1].direction, [-1, 0])


def test_trace_oblique():
    ray = geo.trace_broken_ray((-5, 0.5), (1, 0), 0.0, unit_disk_domain())
    x = -np.sqrt(0.75)
    assert ray.n_reflections == 1
    assert np.allclose(ray.reflections[0].point, [x, 0.5], atol=1e-12)
    out = geo.reflect_direction((1, 0), np.array([x, 0.5]))
    assert np.allclose(ray.legs[1].direction, out, atol=1e-12)
    assert np.allclose(out, [-0.5, np.sqrt(3) / 2], atol=1e-12)
    assert abs(np.linalg.norm(ray.exit_point) - 5) < 1e-12


def test_trapped_ray_between_parallel_walls():
    a = geo.ConvexPolygon(np.array([[-2, 1], [2, 1], [2, 2], [-2, 2]], float))
    b = geo.ConvexPolygon(np.array([[-2, -2], [2, -2], [2, -1], [-2, -1]], float))
    dom = geo.Domain(geo.OuterRect((-5, -5), (5, 5)), [geo.Obstacle(a), geo.Obstacle(b)], (0, 1))
    with pytest.raises(TrappedRay):
        geo.trace_broken_ray((0, 0), (0, 1), 0.0, dom, max_reflections=10)


def test_polygon_corner_hit_is_rejected():
    sq = geo.ConvexPolygon(np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float))
    dom = geo.Domain(geo.OuterRect((-4, -4), (4, 4)), [geo.Obstacle(sq)], (0, 1))
    with pytest.raises(TangentialHit):
        geo.trace_broken_ray((-3, -3), np.array([1, 1]) / np.sqrt(2), 0.0, dom)


def test_ray_uses_obstacle_snapshot_at_its_time():
    mover = geo.Obstacle(geo.Disk((0, -1.5), 0.5), geo.Translation.linear((0, 1.5)))
    dom = geo.Domain(geo.OuterDisk((0, 0), 4), [mover], (0, 2))
    assert geo.trace_broken_ray((-4, 0), (1, 0), 0.0, dom).n_reflections == 0
    assert geo.trace_broken_ray((-4, 0), (1, 0), 1.0, dom).n_reflections == 1


two_obstacles = geo.Domain(
    geo.OuterDisk((0, 0), 4.0),
    [geo.Obstacle(geo.Disk((-1.0, 0.3), 0.6)),
     geo.Obstacle(geo.ConvexPolygon(np.array([[0.7, -0.6], [1.6, -0.4], [1.4, 0.7], [0.6, 0.5]], float)))],
    (0, 1),
)


@settings(max_examples=150, deadline=None)
@given(angles, st.floats(-3.5, 3.5))
def test_broken_ray_invariants(a, off):
    w = np.array([np.cos(a), np.sin(a)])
    origin = -5 * w + off * np.array([-w[1], w[0]])
    try:
        ray = geo.trace_broken_ray(origin, w, 0.0, two_obstacles)
    except (TangentialHit, DegenerateGeometry):
        return
    for j, leg in enumerate(ray.legs):
        assert abs(np.linalg.norm(leg.direction) - 1) <= 1e-12
        if j + 1 < len(ray.legs):
            assert np.allclose(leg.end, ray.legs[j + 1].start, atol=1e-12)
            n = ray.reflections[j].normal
            assert abs(n @ leg.direction) > geo.DEFAULT_TANGENCY_TOL
            assert np.allclose(ray.legs[j + 1].direction, leg.direction - 2 * (n @ leg.direction) * n,
                               atol=1e-12)
    pts = ray.sample_points(100).reshape(-1, 2)
    assert np.min(two_obstacles.obstacle_signed_distance(pts, 0.0)) >= -1e-9


# loops


def test_generator_loop_single_disk():
    dom = geo.Domain(geo.OuterDisk((0, 0), 5), [geo.Obstacle(geo.Disk((0, 0), 1.0))], (0, 1))
    (loop,) = geo.generator_loops(dom, 0.0, 0.5)
    r = np.linalg.norm(loop, axis=1)
    assert np.min(r) >= 1.5 - 1e-12
    assert np.allclose(loop[0], loop[-1])
    assert geo.winding_about(loop, (0, 0)) == 1


def test_generator_loops_empty():
    assert geo.generator_loops(geo.Domain(geo.OuterDisk((0, 0), 5), [], (0, 1)), 0.0, 0.5) == []


def test_generator_loops_two_disks():
    dom = geo.Domain(geo.OuterDisk((0, 0), 5),
                     [geo.Obstacle(geo.Disk((-2, 0), 0.5)), geo.Obstacle(geo.Disk((2, 0), 0.5))], (0, 1))
    loops = geo.generator_loops(dom, 0.0, 0.25)
    assert len(loops) == 2
    for j, c in enumerate([(-2, 0), (2, 0)]):
        other = (2, 0) if j == 0 else (-2, 0)
        assert geo.winding_about(loops[j], c) == 1
        assert geo.winding_about(loops[j], other) == 0
        # independent oracle: total angle via complex log
        z = (loops[j][:, 0] - c[0]) + 1j * (loops[j][:, 1] - c[1])
        assert round(np.sum(np.angle(z[1:] / z[:-1])) / (2 * np.pi)) == 1


def test_generator_loop_clearance_too_large():
    dom = geo.Domain(geo.OuterDisk((0, 0), 2), [geo.Obstacle(geo.Disk((0, 0), 1.0))], (0, 1))
    with pytest.raises(ClearanceTooLarge):
        geo.generator_loops(dom, 0.0, 1.5)


# domain validation


def test_domain_rejects_overlap_and_exit():
    with pytest.raises(InvalidGeometry):
        geo.Domain(geo.OuterDisk((0, 0), 3),
                   [geo.Obstacle(geo.Disk((0, 0), 1)), geo.Obstacle(geo.Disk((1.5, 0), 1))], (0, 1))
    with pytest.raises(InvalidGeometry, match="t="):
        geo.Domain(geo.OuterDisk((0, 0), 2),
                   [geo.Obstacle(geo.Disk((0, 0), 0.5), geo.Translation.linear((1, 0)))], (0, 2))


def test_polygon_must_be_strictly_convex():
    with pytest.raises(InvalidGeometry):
        geo.ConvexPolygon(np.array([[0, 0], [1, 0], [2, 0], [1, 1]], float))
