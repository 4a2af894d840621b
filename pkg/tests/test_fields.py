from __future__ import annotations

import math

import numpy as np
import pytest

from coriolis_transport.errors import InvalidParams
from coriolis_transport.fields import (
    PRESETS,
    VortexParams,
    make_gaussian_weight,
    make_linear,
    make_preset,
    make_vortex,
    stationary_pi,
    zero_field,
)


def fd_grad(field, x, y, h=1e-3):
    """Fourth-order central differences."""

    def d(f):
        return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)

    ux = d(lambda e: field.eval(x + e, y)[0])
    uy = d(lambda e: field.eval(x, y + e)[0])
    vx = d(lambda e: field.eval(x + e, y)[1])
    vy = d(lambda e: field.eval(x, y + e)[1])
    return np.array([ux, uy, vx, vy])


ALL_FIELDS = [
    make_preset("vortex"),
    make_preset("vortex", B0=2.0, mu=0.7),
    make_preset("rigid-rotation", a=0.8),
    make_preset("constant", c_u=1.2, c_v=-0.4),
    make_preset("gaussian-bump", amplitude=0.9, width=1.3),
    make_linear(0.3, -1.0, 0.5, 0.2, 0.1, -0.2),
]


@pytest.mark.parametrize("field", ALL_FIELDS, ids=lambda f: f.name)
def test_gradients_match_finite_differences(field):
    xs = np.linspace(-2.5, 2.5, 20)
    X, Y = np.meshgrid(xs, xs)
    G = np.array(field.grad(X, Y), dtype=float)
    G = np.broadcast_to(G, (4,) + X.shape)
    F = fd_grad(field, X, Y)
    F = np.broadcast_to(F, G.shape)
    # constant fields have G == 0, so the scale is floored at 1
    assert np.max(np.abs(G - F)) <= 1e-6 * max(np.max(np.abs(G)), 1.0)


def test_vortex_values(vortex):
    assert vortex.eval(0.0, 0.0) == (0.0, 0.0)
    u, v = vortex.eval(0.0, 1.0)
    assert u == pytest.approx(-1.5 * math.exp(-0.5), rel=1e-15)
    assert v == 0.0


def test_vortex_is_tangent_and_divergence_free(vortex, rng):
    x, y = rng.uniform(-3, 3, (2, 100))
    u, v = vortex.eval(x, y)
    assert np.max(np.abs(u * x + v * y)) <= 1e-14
    g11, _, _, g22 = vortex.grad(x, y)
    assert np.max(np.abs(g11 + g22)) <= 1e-14
    fd = fd_grad(vortex, x, y)
    assert np.max(np.abs(fd[0] + fd[3])) <= 1e-9


def test_vortex_gradient_at_origin(vortex):
    assert vortex.grad(0.0, 0.0) == pytest.approx((0.0, -1.5, 1.5, 0.0))


def test_speed_bound_is_attained(vortex):
    r = np.linspace(0, 4, 4001)
    u, _ = vortex.eval(np.zeros_like(r), r)
    assert np.max(np.abs(u)) <= vortex.speed_bound * (1 + 1e-12)
    assert np.max(np.abs(u)) >= vortex.speed_bound * (1 - 1e-6)


def test_vortex_rejects_nonpositive_mu():
    with pytest.raises(InvalidParams):
        make_vortex(VortexParams(mu=0.0))


def test_gaussian_weight():
    w = make_gaussian_weight()
    assert w.eval_fn(0.0, 0.0) == 1.0
    assert w.eval_fn(1.0, 0.0) == pytest.approx(math.exp(-0.5), rel=1e-15)
    r = np.linspace(0, 10, 50)
    vals = w.eval_fn(r * 0.6, r * 0.8)
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(InvalidParams):
        make_gaussian_weight(width=0.0)


def test_stationary_pi():
    assert stationary_pi(VortexParams(), 0.0, 0.0) == pytest.approx(-2.625, rel=1e-15)
    assert stationary_pi(VortexParams(B0=0.0), 0.4, -1.0) == 0.0
    assert abs(stationary_pi(VortexParams(), 40.0, 0.0)) < 1e-300
    with pytest.raises(InvalidParams):
        stationary_pi(VortexParams(c0=0.0), 0.0, 0.0)


def test_presets_registry():
    assert set(PRESETS) == {"vortex", "rigid-rotation", "constant", "gaussian-bump"}
    with pytest.raises(InvalidParams):
        make_preset("nope")
    rot = make_preset("rigid-rotation", a=0.5)
    assert rot.eval(1.0, 2.0) == pytest.approx((1.0, -0.5))


def test_zero_field_broadcasts():
    f = zero_field()
    u, v = f.eval(np.ones((3, 2)), np.ones((3, 2)))
    assert np.shape(u) == (3, 2) and not np.any(u) and not np.any(v)
