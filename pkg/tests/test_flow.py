from __future__ import annotations

import math

import numpy as np
import pytest

from coriolis_transport import flow
from coriolis_transport.convention import RotationConvention, active_convention, use_convention
from coriolis_transport.errors import InvalidParams, NoConvergence
from coriolis_transport.fields import make_constant, make_preset, zero_field

PRESET_CASES = [
    make_preset("vortex"),
    make_preset("rigid-rotation", a=0.3),
    make_preset("constant", c_u=0.7, c_v=-0.2),
    make_preset("gaussian-bump", amplitude=1.1, width=0.8),
]


def states_close(a: flow.FlowState, b: flow.FlowState, tol: float) -> bool:
    return max(abs(a.x - b.x), abs(a.y - b.y), abs(a.u - b.u), abs(a.v - b.v)) <= tol


def test_identity_at_zero_time():
    st = flow.advance(make_constant(2.0, 0.0), (0.3, -0.1), 0.0, 1.0)
    assert (st.x, st.y, st.u, st.v) == (0.3, -0.1, 2.0, 0.0)


def test_vortex_matches_rk4(vortex):
    a = flow.advance(vortex, (0.0, 1.0), 0.5, 1.0)
    b = flow.ode_oracle(vortex, (0.0, 1.0), 0.5, 1.0, dt=1e-4)
    assert states_close(a, b, 1e-8)


def test_random_cases_match_rk4(rng):
    for _ in range(100):
        field = PRESET_CASES[rng.integers(len(PRESET_CASES))]
        start = rng.uniform(-2, 2, 2)
        t, l = rng.uniform(0, 3), rng.uniform(0.3, 2.0)
        assert states_close(flow.advance(field, start, t, l), flow.ode_oracle(field, start, t, l, 1e-4), 1e-7)


def test_rk4_is_fourth_order(vortex):
    exact = flow.advance(vortex, (0.2, 0.9), 2.0, 1.3)
    errs = []
    for dt in (0.1, 0.05):
        st = flow.ode_oracle(vortex, (0.2, 0.9), 2.0, 1.3, dt)
        errs.append(math.hypot(st.x - exact.x, st.y - exact.y))
    assert 12 < errs[0] / errs[1] < 20


def test_constant_field_half_turn():
    c = 1.5
    st = flow.advance(make_constant(c, 0.0), (0.0, 0.0), math.pi, 1.0)
    assert st.u == pytest.approx(-c, abs=1e-15)
    assert st.v == pytest.approx(0.0, abs=1e-15)
    assert states_close(st, flow.ode_oracle(make_constant(c, 0.0), (0.0, 0.0), math.pi, 1.0, 1e-4), 1e-9)


def test_period_closes_orbits(vortex, rng):
    for _ in range(20):
        start, l = rng.uniform(-2, 2, 2), rng.uniform(0.5, 2.0)
        st = flow.advance(vortex, start, 2 * math.pi / l, l)
        u0, v0 = vortex.eval(*start)
        assert st.u == pytest.approx(u0, abs=1e-14) and st.v == pytest.approx(v0, abs=1e-14)
        assert st.x == pytest.approx(start[0], abs=1e-13) and st.y == pytest.approx(start[1], abs=1e-13)
        t = rng.uniform(0, 3)
        a, b = flow.advance(vortex, start, t, l), flow.advance(vortex, start, t + 2 * math.pi / l, l)
        assert (b.u, b.v) == pytest.approx((a.u, a.v), abs=1e-14)


def test_round_trip(vortex, rng):
    for _ in range(100):
        start = rng.uniform(-2.5, 2.5, 2)
        t = rng.uniform(0, 1.8)
        back = flow.backtrace(vortex, flow.advance(vortex, start, t, 1.0).position, t, 1.0)
        assert math.hypot(back[0] - start[0], back[1] - start[1]) <= 1e-10


def test_backtrace_examples(vortex):
    target = flow.advance(vortex, (0.3, 0.4), 1.0, 1.0).position
    assert flow.backtrace(vortex, target, 1.0, 1.0) == pytest.approx((0.3, 0.4), abs=1e-10)
    assert flow.backtrace(vortex, (1.0, 2.0), 0.0, 1.0) == (1.0, 2.0)
    assert flow.backtrace(zero_field(), (1.0, 2.0), 7.0, 1.0) == (1.0, 2.0)


def test_backtrace_fails_past_blowup(vortex):
    # targets near the image of the singular ring have a folded preimage by t = 2.5
    xs = np.linspace(-3, 3, 41)
    X, Y = np.meshgrid(xs, xs)
    _, _, ok = flow.backtrace_many(vortex, X.ravel(), Y.ravel(), 2.5, 1.0)
    assert not ok.all()
    bad = int(np.flatnonzero(~ok)[0])
    with pytest.raises(NoConvergence):
        flow.backtrace(vortex, (X.ravel()[bad], Y.ravel()[bad]), 2.5, 1.0)


def test_solve_pointwise(vortex):
    assert flow.solve_pointwise(vortex, (0.5, 0.2), 0.0, 1.0) == pytest.approx(vortex.eval(0.5, 0.2))
    u, v = flow.solve_pointwise(make_constant(2.0, 0.0), (9.0, -3.0), 1.0, 1.0)
    assert (u, v) == pytest.approx((2 * math.cos(1.0), -2 * math.sin(1.0)), abs=1e-15)
    u, v = flow.solve_pointwise(vortex, (0.5, 0.0), 1.0, 1.0)
    assert (u, v) == pytest.approx((0.35097655501, -0.02197547281), abs=1e-10)


def test_solve_grid_matches_pointwise(vortex):
    xs, ys = np.linspace(-1, 1, 5), np.linspace(-2, 2, 4)
    u, v, ok = flow.solve_grid(vortex, xs, ys, 1.2, 1.0)
    assert ok.all() and u.shape == (4, 5)
    assert (u[2, 3], v[2, 3]) == pytest.approx(flow.solve_pointwise(vortex, (xs[3], ys[2]), 1.2, 1.0), abs=1e-12)


def test_trajectory_invariants(vortex, rng):
    for _ in range(20):
        start, l = rng.uniform(-2, 2, 2), rng.uniform(0.3, 3.0)
        states = flow.trajectory(vortex, start, l, 10.0, 64)
        c1 = np.array([s.y - s.u / l for s in states])
        c2 = np.array([s.x + s.v / l for s in states])
        speed = np.array([math.hypot(s.u, s.v) for s in states])
        assert np.ptp(c1) + np.ptp(c2) <= 1e-12
        assert np.ptp(speed) <= 1e-12


def test_trajectory_endpoints_and_fixed_points(vortex):
    states = flow.trajectory(vortex, (0.4, 0.1), 1.0, 2.0, 2)
    assert [s.t for s in states] == [0.0, 2.0]
    assert states_close(states[1], flow.advance(vortex, (0.4, 0.1), 2.0, 1.0), 0.0)
    centre = flow.trajectory(vortex, (0.0, 0.0), 1.0, 5.0, 5)
    assert all((s.x, s.y, s.u, s.v) == (0.0, 0.0, 0.0, 0.0) for s in centre)
    with pytest.raises(InvalidParams):
        flow.trajectory(vortex, (0.0, 0.0), 1.0, 1.0, 1)


def test_trajectory_csv(tmp_path, vortex):
    path = tmp_path / "traj.csv"
    flow.write_trajectory_csv(path, flow.trajectory(vortex, (0.0, 1.0), 1.0, 1.0, 3))
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "t,x,y,u,v" and len(lines) == 4
    assert lines[1].split(",")[3] == format(-1.5 * math.exp(-0.5), ".17g")


def test_invalid_arguments(vortex):
    with pytest.raises(InvalidParams):
        flow.advance(vortex, (0, 0), -1.0, 1.0)
    with pytest.raises(InvalidParams):
        flow.advance(vortex, (0, 0), 1.0, 0.0)
    with pytest.raises(InvalidParams):
        flow.ode_oracle(vortex, (0, 0), 1.0, 1.0, dt=0.0)


@pytest.mark.parametrize("convention", list(RotationConvention))
def test_both_conventions_match_their_oracle(vortex, convention):
    with use_convention(convention):
        assert active_convention() is convention
        a = flow.advance(vortex, (0.7, -0.3), 1.3, 1.0)
        b = flow.ode_oracle(vortex, (0.7, -0.3), 1.3, 1.0, 1e-4)
        assert states_close(a, b, 1e-9)
    assert active_convention() is RotationConvention.MAIN1


def test_default_convention_turns_clockwise():
    # du/dt = +l v, dv/dt = -l u: an eastward velocity turns south first
    st = flow.advance(make_constant(1.0, 0.0), (0, 0), 0.1, 1.0)
    assert st.v < 0
    with use_convention("paper-q"):
        assert flow.advance(make_constant(1.0, 0.0), (0, 0), 0.1, 1.0).v > 0


def test_preimages_single_before_blowup_and_multiple_after(vortex):
    t_star = 1.8423675354158293
    target = flow.advance(vortex, (0.3, -0.2), 1.0, 1.0).position
    assert flow.preimages(vortex, target, 1.0, 1.0) == [pytest.approx((0.3, -0.2), abs=1e-10)]
    t = t_star + 0.05
    folded = flow.advance(vortex, (1.675911, 0.0), t, 1.0).position
    found = flow.preimages(vortex, folded, t, 1.0)
    assert len(found) >= 2
    for s in found:
        assert flow.advance(vortex, s, t, 1.0).position == pytest.approx(folded, abs=1e-10)
