import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from abflux import fields as F
from abflux import gauge as G
from abflux import geometry as geo
from abflux import transport as TR
from abflux.errors import StepTooLarge

from oracles import product_integral, product_integral_extrapolated, weighted_oracle


def open_disk(R):
    return geo.Domain(geo.OuterDisk((0, 0), R), [], (0, 1))


def const_V(v):
    return F.PotentialPair(lambda x, t: np.zeros(np.shape(x)), lambda x, t: np.full(np.shape(x)[:-1], v))


def const_A(a):
    return F.PotentialPair(lambda x, t: np.broadcast_to(np.asarray(a, float), np.shape(x)).copy(),
                           lambda x, t: np.zeros(np.shape(x)[:-1]))


def line_matrix(p, line):
    def M(s):
        x = line.start + np.multiply.outer(s, line.omega)
        return np.einsum("nkij,k->nij", p.A(x, np.full(len(s), line.t)), line.omega)
    return M


GAUSS_PAIR = [
    {"center": (0.35, 0.05), "width": 0.3, "profile": "gaussian", "A1": {"x": 2.0}, "A2": "z"},
    {"center": (0.65, -0.05), "width": 0.3, "profile": "gaussian", "A1": {"z": 2.0, "y": 1.0}},
]


# abelian ray transforms


def test_zero_potential_transforms():
    ray = geo.trace_broken_ray((-5, 0.3), (1, 0), 0.0, open_disk(3))
    assert TR.magnetic_ray_transform(F.zero_potential(), ray) == 0
    assert TR.electric_ray_transform(F.zero_potential(), ray) == 0


def test_constant_A_single_leg():
    ray = geo.Leg(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 2.0, 0.0)
    br = geo.BrokenRay(0.0, (ray,), ())
    assert TR.magnetic_ray_transform(const_A((0.3, 0)), br) == pytest.approx(0.6, abs=1e-14)


def test_constant_V_length_seven():
    ray = geo.trace_broken_ray((-5, 0), (1, 0), 0.0, open_disk(3.5))
    assert ray.total_length == pytest.approx(7.0)
    assert TR.electric_ray_transform(const_V(0.5), ray) == pytest.approx(3.5, abs=1e-12)


def test_gaussian_V_matches_erf():
    p = F.PotentialPair(lambda x, t: np.zeros(np.shape(x)), lambda x, t: np.exp(-np.sum(x * x, -1)))
    ray = geo.trace_broken_ray((-5, 0), (1, 0), 0.0, open_disk(3))
    assert TR.electric_ray_transform(p, ray) == pytest.approx(np.sqrt(np.pi) * erf(3), abs=1e-10)


def test_vortex_retroreflection_cancels():
    dom = geo.Domain(geo.OuterDisk((0, 0), 3), [geo.Obstacle(geo.Disk((0, 0), 0.5))], (0, 1))
    ray = geo.trace_broken_ray((-4, 0), (1, 0), 0.0, dom)
    assert ray.n_reflections == 1
    p = F.vortex_potential(2 * np.pi)
    # independent oracle: A.theta vanishes on the radial chord, so a fine sum is zero too
    s = np.linspace(0, ray.legs[0].length, 10001)
    x = ray.legs[0].start + np.outer(s, ray.legs[0].direction)
    assert np.max(np.abs(p.A(x, np.zeros(len(s))) @ ray.legs[0].direction)) < 1e-15
    assert abs(TR.magnetic_ray_transform(p, ray)) < 1e-12


def test_additivity_and_reversal():
    dom = geo.Domain(geo.OuterDisk((0, 0), 3), [geo.Obstacle(geo.Disk((0.2, 0.3), 0.6))], (0, 1))
    p = F.gaussian_bump_potential((0.4, -0.7), 0.3, (0.5, -0.2), 0.7, 1.0)
    ray = geo.trace_broken_ray((-4, 0.5), (1, 0), 0.2, dom)
    assert ray.n_reflections >= 1
    legs = TR.magnetic_leg_transforms(p, ray)
    assert abs(legs.sum() - TR.magnetic_ray_transform(p, ray)) <= 1e-12
    single = geo.trace_broken_ray((-4, 2.0), (1, 0), 0.2, dom)
    assert TR.magnetic_ray_transform(p, single.reversed()) == pytest.approx(
        -TR.magnetic_ray_transform(p, single), abs=1e-10)


def test_identical_pair_has_zero_discrepancy():
    dom = geo.Domain(geo.OuterDisk((0, 0), 3), [geo.Obstacle(geo.Disk((0, 0), 0.5))], (0, 1))
    p = F.gaussian_bump_potential((0.4, -0.7), 0.3, (0.5, -0.2), 0.7, 1.0)
    rays = [geo.trace_broken_ray((-4, y), (1, 0), 0.0, dom) for y in (-0.3, 0.2, 1.0)]
    rep = TR.transform_dataset(p, p, rays)
    assert rep.max_mag_defect == 0 and rep.max_elec == 0


def test_gauge_pair_discrepancies_vanish(tmp_path):
    dom = geo.Domain(geo.OuterDisk((0, 0), 3), [geo.Obstacle(geo.Disk((0, 0), 0.5))], (0, 1))
    p = F.gaussian_bump_potential((0.4, -0.7), 0.3, (0.5, -0.2), 0.7, 1.0)
    c = G.PhaseGauge(G.BumpPhase(1.3, (-0.4, 0.9), 0.9, 2.0))
    pg = G.apply_gauge(p, c)
    rays = [geo.trace_broken_ray((-4, y), (1, 0), t, dom) for y in np.linspace(-1.4, 1.4, 8) for t in (0.0, 0.6)]
    assert any(r.n_reflections for r in rays)
    rep = TR.transform_dataset(p, pg, rays, gauge=c)
    assert rep.max_mag_defect <= 1e-6
    assert rep.max_elec <= 1e-6
    rep.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().count("\n") == len(rays) + 1


# matrix transport


def test_zero_field_gives_identity():
    res = TR.nonabelian_transport(F.zero_potential(2), TR.Line((0, 0), (1, 0), 1.0))
    assert np.array_equal(res.endpoint_matrix, np.eye(2))


def test_commuting_constant_field_is_exponential():
    A = np.zeros((2, 2, 2), complex)
    A[0] = np.diag([0.5, -0.25])
    p = F.PotentialPair(lambda x, t: np.broadcast_to(A, np.shape(x)[:-1] + A.shape).copy(),
                        lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2), complex), m=2)
    res = TR.nonabelian_transport(p, TR.Line((0, 0), (1, 0), 2.0), h=1e-2)
    assert np.allclose(res.endpoint_matrix, np.diag([np.exp(1j), np.exp(-0.5j)]), atol=1e-10)


def test_non_commuting_bumps_match_product_integral():
    p = F.matrix_bump_potential([
        {"center": (0.3, 0.0), "width": 0.25, "A1": {"x": 2.0}},
        {"center": (0.6, 0.05), "width": 0.25, "A1": {"z": 1.5, "y": 0.5}},
    ])
    line = TR.Line((0, 0), (1, 0), 1.0)
    ref = product_integral_extrapolated(line_matrix(p, line), 1.0, 100000)
    res = TR.nonabelian_transport(p, line, h=1e-3)
    assert np.max(np.abs(res.endpoint_matrix - ref)) <= 1e-7


def test_radon_of_diagonal_field_matches_scalar_quadrature():
    a = F.gaussian_bump_potential((1.0, 0.0), 0.0, (0.1, 0.2), 0.3)
    b = F.gaussian_bump_potential((-0.6, 0.0), 0.0, (-0.2, 0.1), 0.4)

    def A(x, t):
        out = np.zeros(np.shape(x)[:-1] + (2, 2, 2), complex)
        out[..., 0, 0, 0] = a.A(x, t)[..., 0]
        out[..., 0, 1, 1] = b.A(x, t)[..., 0]
        return out

    p = F.PotentialPair(A, lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2), complex), m=2, support_radius=3.0)
    (c,) = TR.nonabelian_radon(p, [0.15], 0.0, 0.0, h=1e-3)
    ray = geo.BrokenRay(0.0, (geo.Leg(np.array([-4.0, 0.15]), np.array([1.0, 0.0]), 8.0, 0.0),), ())
    ia, ib = TR.magnetic_ray_transform(a, ray), TR.magnetic_ray_transform(b, ray)
    assert np.allclose(c, np.diag([np.exp(1j * ia), np.exp(1j * ib)]), atol=1e-10)


def test_radon_zero_field_and_empty_offsets():
    p = F.matrix_bump_potential([{"center": (0, 0), "width": 0.5, "A1": "x"}])
    assert TR.nonabelian_radon(p, [], 0.0, 0.0) == []
    z = F.PotentialPair(lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2, 2), complex),
                        lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2), complex), m=2, support_radius=1.0)
    for c in TR.nonabelian_radon(z, [-0.5, 0.0, 0.5], 0.3, 0.0):
        assert np.array_equal(c, np.eye(2))


def test_gauge_covariance_with_interior_gauge():
    p = F.matrix_bump_potential(GAUSS_PAIR[:1] + [{"center": (-0.2, 0.1), "width": 0.4, "A2": "y", "V": "x"}])
    g = G.su2_bump_gauge(F.PAULI["y"], (0.1, 0.0), 0.5, 1.1)
    offs = np.linspace(-0.4, 0.4, 5)
    c1 = TR.nonabelian_radon(p, offs, 0.7, 0.0, h=2e-3)
    c2 = TR.nonabelian_radon(G.apply_gauge(p, g), offs, 0.7, 0.0, h=2e-3)
    assert max(np.max(np.abs(a - b)) for a, b in zip(c1, c2)) <= 1e-7


def test_unitarity_and_step_guard():
    p = F.matrix_bump_potential(GAUSS_PAIR)
    line = TR.Line((0, 0), (1, 0), 1.0)
    assert TR.nonabelian_transport(p, line, h=1e-3).unitarity_defect() <= 1e-8
    with pytest.raises(StepTooLarge):
        TR.nonabelian_transport(p, line, h=0.5)


def test_trace_samples():
    p = F.matrix_bump_potential(GAUSS_PAIR)
    res = TR.nonabelian_transport(p, TR.Line((0, 0), (1, 0), 1.0), h=1e-2, trace_every=10)
    assert len(res.trace_samples) == 11
    assert res.trace_samples[-1][0] == pytest.approx(1.0)
    assert np.array_equal(res.trace_samples[-1][1], res.endpoint_matrix)


# weighted transform


def test_weighted_transform_trivial_cases():
    p = F.matrix_bump_potential(GAUSS_PAIR)
    line = TR.Line((0, 0), (1, 0), 1.0)
    assert np.array_equal(TR.weighted_potential_transform(p, p, line, 1e-2), np.zeros((2, 2)))
    bump = F.gaussian_bump_potential((0, 0), 1.0, (0.5, 0.0), 0.3)

    def V(x, t):
        return bump.V(x, t)[..., None, None] * np.eye(2)

    pv = F.PotentialPair(lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2, 2), complex), V, m=2)
    W = TR.weighted_potential_transform(pv, F.zero_potential(2), line, 1e-3)
    ref = TR.electric_ray_transform(bump, geo.BrokenRay(0.0, (geo.Leg(line.start, line.omega, 1.0, 0.0),), ()))
    assert np.allclose(W, ref * np.eye(2), atol=1e-10)


def test_weighted_transform_matches_oracle():
    terms = GAUSS_PAIR + [{"center": (0.5, 0.0), "width": 0.3, "profile": "gaussian", "V": {"x": 1.0, "z": 0.5}}]
    p = F.matrix_bump_potential(terms)
    line = TR.Line((0, 0), (1, 0), 1.0)

    def D(s):
        x = line.start + np.multiply.outer(s, line.omega)
        return p.V(x, np.zeros(len(s)))

    ref = weighted_oracle(line_matrix(p, line), D, 1.0, 100000)
    W = TR.weighted_potential_transform(p, F.zero_potential(2), line, 1e-3)
    assert np.max(np.abs(W - ref)) <= 1e-7


# geometric optics


def test_cutoff_normalised():
    cut = TR.CutoffProfile(0.3)
    u = np.linspace(-1, 1, 20001)
    assert np.trapezoid(cut.chi0(u) ** 2, u) == pytest.approx(1.0, abs=1e-10)
    assert cut.chi0(1.0) == 0 and cut.chi0(-1.5) == 0


def test_go_amplitude_zero_potential_is_real():
    cut = TR.CutoffProfile(0.4, t0=0.5, tau0=0.1)
    leg = geo.Leg(np.array([-2.0, 0.0]), np.array([1.0, 0.0]), 4.0, 0.0)
    a = TR.go_amplitude(F.zero_potential(), leg, cut)
    s = np.linspace(-2, 2, 9)
    vals = a(s, 0.2, 0.6)
    assert np.all(vals.imag == 0)
    assert np.allclose(vals.real, cut.chi1(0.6) * cut.chi2(0.2))


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-0.3, 0.3), st.floats(0.0, 1.0))
def test_go_amplitude_modulus(s, tau, t):
    p = F.gaussian_bump_potential((0.9, -0.4), 0.0, (0.2, 0.1), 0.5, 1.5)
    cut = TR.CutoffProfile(0.5, t0=0.5, tau0=0.0)
    a = TR.go_amplitude(p, geo.Leg(np.array([-2.0, 0.0]), np.array([1.0, 0.0]), 4.0, 0.0), cut)
    env = cut.chi1(t) * cut.chi2(tau)
    assert abs(abs(a(s, tau, t)) - env) <= 1e-15 * max(1.0, env)


def test_go_transport_residual_small():
    p = F.gaussian_bump_potential((0.9, -0.4), 0.0, (0.2, 0.1), 0.5, 1.5)
    cut = TR.CutoffProfile(0.5, t0=0.5, tau0=0.0)
    a = TR.go_amplitude(p, geo.Leg(np.array([-2.0, 0.0]), np.array([1.0, 0.0]), 4.0, 0.0), cut)
    s = np.linspace(-1.5, 1.5, 31)
    assert np.max(np.abs(TR.transport_residual(a, s, 0.1, 0.45, h=1e-4))) <= 1e-6
