from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coriolis_transport import gradient_analysis as ga
from coriolis_transport.convention import use_convention
from coriolis_transport.errors import AtSingularity, EmptyWindow, InvalidParams
from coriolis_transport.fields import make_linear, make_preset, make_rigid_rotation, zero_field

VORTEX_T_STAR = 1.8423675354  # earliest blow-up for B0=-1.5, mu=1, l=1, attained on a circle
VORTEX_RING = 1.675911

entries = st.floats(-5, 5, allow_nan=False)
rates = st.floats(0.1, 5, allow_nan=False)


def test_invariant_examples(vortex):
    k = ga.k_coefficients(make_rigid_rotation(0.7), (0.3, 0.1), 1.0)
    assert (k.D0, k.d, k.xi) == pytest.approx((0.49, 0.0, -1.4))
    z = ga.k_coefficients(zero_field(), (0.0, 0.0), 1.0)
    assert (z.D0, z.d, z.xi) == (0.0, 0.0, 0.0) and z.degenerate
    v = ga.k_coefficients(vortex, (0.0, 0.0), 1.0)
    assert (v.D0, v.d, v.xi) == pytest.approx((2.25, 0.0, 3.0))
    assert v.grad == pytest.approx((0.0, -1.5, 1.5, 0.0))


def test_closed_form_starts_at_initial_gradient(vortex, rng):
    for _ in range(50):
        p = rng.uniform(-2.5, 2.5, 2)
        k = ga.k_coefficients(vortex, p, rng.uniform(0.3, 3.0))
        if k.degenerate:
            continue
        q = ga.q_closed_form(k, 0.0).as_array().ravel()
        assert np.max(np.abs(q - np.array(k.grad))) <= 1e-12 * (1 + np.max(np.abs(q)))


def test_closed_form_matches_flow_jacobian(rng):
    for _ in range(200):
        g, l = rng.normal(size=4), rng.uniform(0.3, 3)
        k = ga.k_coefficients_from_grad(g, l)
        t_star = ga.blowup_time_from_grad(*g, l)
        t = rng.uniform(0, min(t_star, 6.0)) * 0.95
        q = ga.q_closed_form(k, t).as_array()
        ref = ga.q_from_flow_jacobian(g, t, l)
        assert np.linalg.norm(q - ref) <= 1e-9 * np.linalg.norm(ref)


def test_closed_form_matches_riccati_oracle_at_singular_points(vortex):
    for p in [(VORTEX_RING, 0.0), (-VORTEX_RING, 0.0)]:
        t = 0.9 * ga.blowup_time(vortex, p, 1.0)
        q = ga.q_closed_form(ga.k_coefficients(vortex, p, 1.0), t).as_array()
        ref = ga.riccati_oracle(vortex, p, 1.0, t, dt=1e-4).as_array()
        assert np.linalg.norm(q - ref) <= 1e-5 * np.linalg.norm(ref)


def test_oracle_agreement_on_random_samples(rng):
    G, ts, ks = [], [], []
    while len(G) < 100:
        g, l = rng.normal(scale=1.5, size=4), 1.0
        k = ga.k_coefficients_from_grad(g, l)
        t_star = ga.blowup_time_from_grad(*g, l)
        if k.degenerate or not math.isfinite(t_star):
            continue
        G.append(g), ts.append(0.9 * t_star), ks.append(k)
    Q = ga.riccati_integrate_many(np.array(G), 1.0, np.array(ts), dt=5e-4)
    for k, t, q in zip(ks, ts, Q):
        ref = ga.q_closed_form(k, t).as_array().ravel()
        assert np.linalg.norm(q - ref) <= 1e-5 * np.linalg.norm(ref)


def test_gradient_grows_like_inverse_distance_to_blowup():
    k = ga.k_coefficients_from_grad((0.0, 0.5, -0.5, 0.0), 1.0)
    t_star = math.pi
    norms = [np.linalg.norm(ga.q_closed_form(k, t_star - e).as_array()) for e in (1e-2, 1e-3, 1e-4)]
    products = [n * e for n, e in zip(norms, (1e-2, 1e-3, 1e-4))]
    assert products[2] == pytest.approx(products[1], rel=1e-2)
    with pytest.raises(AtSingularity):
        ga.q_closed_form(k, t_star)


def test_riccati_fixed_point_and_trace_equation():
    assert ga.riccati_integrate((0, 0, 0, 0), 1.0, 3.0, 1e-3) == (0.0, 0.0, 0.0, 0.0)
    g, l, h = (0.3, -0.4, 0.6, 0.1), 1.3, 1e-4
    t = 0.5
    q = np.array(ga.riccati_integrate(g, l, t, h)).reshape(2, 2)
    qp = np.array(ga.riccati_integrate(g, l, t + h, h)).reshape(2, 2)
    qm = np.array(ga.riccati_integrate(g, l, t - h, h)).reshape(2, 2)
    dtr = (np.trace(qp) - np.trace(qm)) / (2 * h)
    L = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert dtr == pytest.approx(-np.trace(q @ q) - l * np.trace(L @ q), abs=1e-7)


def test_riccati_overflow_raises():
    with pytest.raises(AtSingularity):
        ga.riccati_integrate((0.0, 0.5, -0.5, 0.0), 1.0, 3.5, 1e-3)


def test_criterion_examples():
    assert ga.criterion_delta(zero_field(), (3.0, -1.0), 1.0) == -1.0
    for a, l in [(0.2, 1.0), (0.5, 1.0), (1.3, 0.7)]:
        assert ga.criterion_delta(make_rigid_rotation(a), (0.1, 0.2), l) == pytest.approx(-((2 * a - l) ** 2), abs=1e-14)
    assert ga.criterion_delta(make_linear(1, 0, 0, 1), (0, 0), 1.0) == -1.0


def test_envelope_examples():
    ts = np.linspace(0, 10, 41)
    assert np.all(ga.envelope_from_grad(0, 0, 0, 0, 1.7, ts) == 1.7**2)
    for l in (0.5, 1.0, 2.0):
        F = ga.det_envelope(make_rigid_rotation(l / 2), (0.2, 0.3), l, 1.1)
        assert F == pytest.approx(0.5 * l * l * (1 + math.cos(l * 1.1)), abs=1e-14)


@settings(max_examples=300, deadline=None)
@given(entries, entries, entries, entries, rates)
def test_envelope_starts_at_l_squared(g11, g12, g21, g22, l):
    D0, _, xi = ga.invariants(g11, g12, g21, g22)
    scale = 2 * abs(D0) + l * l + l * abs(xi)
    assert abs(ga.envelope_from_grad(g11, g12, g21, g22, l, 0.0) - l * l) <= 8 * np.finfo(float).eps * scale


@settings(max_examples=300, deadline=None)
@given(entries, entries, entries, entries, rates, st.floats(0, 20))
def test_envelope_equals_scaled_determinant(g11, g12, g21, g22, l, t):
    k = ga.k_coefficients_from_grad((g11, g12, g21, g22), l)
    if k.degenerate or abs(k.D0) <= 1e-8:
        return
    R0, B, C = ga.envelope_coefficients(k.D0, k.d, k.xi, l)
    F = ga.envelope_from_grad(g11, g12, g21, g22, l, t)
    assert abs(F - l * l * k.D0 * ga.det_qtilde(k, t)) <= 1e-10 * (abs(R0) + abs(B) + abs(C))


@settings(max_examples=500, deadline=None)
@given(entries, entries, entries, entries, rates)
def test_blowup_exists_iff_criterion_nonnegative(g11, g12, g21, g22, l):
    delta = ga.criterion_from_grad(g11, g12, g21, g22, l)
    if abs(delta) < 1e-6:
        return
    t = ga.blowup_time_from_grad(g11, g12, g21, g22, l)
    assert math.isfinite(t) == (delta >= 0)
    if math.isfinite(t):
        assert 0 < t <= 2 * math.pi / l
        R0, B, C = ga.envelope_coefficients(*ga.invariants(g11, g12, g21, g22), l)
        assert abs(ga.envelope_from_grad(g11, g12, g21, g22, l, t)) <= 1e-9 * (abs(R0) + abs(B) + abs(C))
        early = np.linspace(0, t, 200, endpoint=False)
        assert np.all(ga.envelope_from_grad(g11, g12, g21, g22, l, early) > 0)


def test_blowup_time_examples():
    for l in (0.3, 1.0, 4.0):
        t = ga.blowup_time(make_rigid_rotation(l / 2), (1.0, 1.0), l)
        assert t == pytest.approx(math.pi / l, abs=1e-9)
    assert ga.blowup_time(zero_field(), (0.0, 0.0), 1.0) is None
    with pytest.raises(InvalidParams):
        ga.blowup_time(zero_field(), (0.0, 0.0), 0.0)


def test_boundary_flag():
    rep = ga.analyze_point(make_rigid_rotation(0.5), (0.3, 0.3), 1.0)
    assert rep.boundary and rep.delta == 0.0 and rep.t_star == pytest.approx(math.pi)
    assert not ga.analyze_point(make_rigid_rotation(0.4), (0.3, 0.3), 1.0).boundary


def test_vortex_criterion_is_point_symmetric(vortex, rng):
    x, y = rng.uniform(-3, 3, (2, 200))
    d1 = ga.criterion_from_grad(*vortex.grad(x, y), 1.0)
    d2 = ga.criterion_from_grad(*vortex.grad(-x, -y), 1.0)
    assert np.max(np.abs(d1 - d2)) <= 1e-14


@settings(max_examples=200, deadline=None)
@given(entries, entries, entries, entries)
def test_larger_rotation_stabilises(g11, g12, g21, g22):
    D0, d, xi = ga.invariants(g11, g12, g21, g22)
    A = d * d - 4 * D0
    # largest root of A - 2 xi l - l^2 = 0
    disc = xi * xi + A
    l_root = -xi + math.sqrt(disc) if disc > 0 else 0.0
    for l in (l_root + 0.1, l_root + 1.0, l_root + 10.0):
        if l <= 0:
            continue
        assert ga.criterion_from_grad(g11, g12, g21, g22, l) < 0
        assert math.isinf(ga.blowup_time_from_grad(g11, g12, g21, g22, l))


def test_vortex_scan(vortex):
    rep = ga.global_scan(vortex, 1.0, (-3, 3, -3, 3), 201)
    assert rep.t_star == pytest.approx(VORTEX_T_STAR, abs=1e-7)
    radii = np.hypot(*np.array(rep.points).T)
    assert np.allclose(radii, VORTEX_RING, atol=1e-5)
    # the minimiser is a whole circle, not an isolated pair
    assert rep.degenerate
    reflected = {(round(-x, 3), round(-y, 3)) for x, y in rep.points}
    assert len(reflected & {(round(x, 3), round(y, 3)) for x, y in rep.points}) > 0


def test_scan_is_independent_of_workers(vortex):
    a = ga.global_scan(vortex, 1.0, (-3, 3, -3, 3), 81, workers=1)
    b = ga.global_scan(vortex, 1.0, (-3, 3, -3, 3), 81, workers=3)
    assert a.t_star == b.t_star and a.points == b.points and a.location == b.location
    assert np.array_equal(a.grid.delta, b.grid.delta)


def test_scan_special_fields():
    z = ga.global_scan(zero_field(), 2.0, (-1, 1, -1, 1), 11)
    assert z.t_star is None and np.all(z.grid.delta == -4.0) and np.all(np.isinf(z.grid.t_star))
    r = ga.global_scan(make_rigid_rotation(0.5), 1.0, (-1, 1, -1, 1), 11)
    assert r.t_star == pytest.approx(math.pi) and r.boundary
    assert r.grid.n_grid_argmin == 121


def test_scan_rejects_bad_windows(vortex):
    with pytest.raises(EmptyWindow):
        ga.global_scan(vortex, 1.0, (1, 1, -1, 1), 11)
    with pytest.raises(InvalidParams):
        ga.global_scan(vortex, 1.0, (-1, 1, -1, 1), 1)


def test_stabilising_rotation(vortex):
    assert ga.corollary_l(zero_field(), (-1, 1, -1, 1), 11).l <= 1e-11
    rot = ga.corollary_l(make_rigid_rotation(0.5), (-1, 1, -1, 1), 11)
    assert rot.touching_zero == (1.0,)
    res = ga.corollary_l(vortex, (-3, 3, -3, 3), 101)
    assert 1.0 < res.l < 2.0
    assert ga.global_scan(vortex, res.l, (-3, 3, -3, 3), 101).t_star is None
    assert ga.global_scan(vortex, 0.99 * res.l, (-3, 3, -3, 3), 101).t_star is not None


def test_contour_csv(tmp_path):
    rep = ga.global_scan(make_preset("constant", c_u=1.0), 1.0, (0, 1, 0, 2), (2, 3))
    path = tmp_path / "c.csv"
    ga.write_contour_csv(path, rep)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,delta,t_star"
    assert lines[1:3] == ["0,0,-1,", "1,0,-1,"]
    assert len(lines) == 7


def test_scan_workers_keep_the_active_convention(vortex):
    with use_convention("paper-q"):
        a = ga.global_scan(vortex, 1.0, (-3, 3, -3, 3), 41, workers=1)
        b = ga.global_scan(vortex, 1.0, (-3, 3, -3, 3), 41, workers=4)
    assert a.t_star == b.t_star and np.array_equal(a.grid.delta, b.grid.delta)
    assert a.t_star == pytest.approx(1.6447, abs=1e-3)
