"""Analytic initial data: planar velocity fields with exact gradients and positive weights.

All callables broadcast over numpy arrays, so a field can be evaluated on a
whole grid of points at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidParams

EvalFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
GradFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class VectorField2:
    """A velocity field ``(u0, v0)`` on the whole plane with hand-coded partials.

    ``grad`` returns ``(du/dx, du/dy, dv/dx, dv/dy)``.  ``speed_bound`` is an
    upper bound for ``|(u0, v0)|`` when one exists (``None`` for unbounded
    fields such as rigid rotation).
    """

    name: str
    eval_fn: EvalFn
    grad_fn: GradFn
    params: Mapping[str, float] = field(default_factory=dict)
    speed_bound: float | None = None

    def eval(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u, v = self.eval_fn(x, y)
        shape = np.broadcast(x, y).shape
        return np.broadcast_to(u, shape).astype(float), np.broadcast_to(v, shape).astype(float)

    def grad(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        return tuple(np.broadcast_to(g, shape).astype(float) for g in self.grad_fn(x, y))


@dataclass(frozen=True)
class ScalarField2:
    """A positive weight on the plane.

    ``bound`` is the supremum of the weight and ``box = (xmin, xmax, ymin, ymax)``
    a rectangle carrying all but a negligible fraction of its mass; together they
    drive rejection sampling.
    """

    name: str
    eval_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound: float
    box: tuple[float, float, float, float]
    params: Mapping[str, float] = field(default_factory=dict)

    def eval(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(self.eval_fn(x, y), np.broadcast(x, y).shape).astype(float)


@dataclass(frozen=True)
class VortexParams:
    B0: float = -1.5
    mu: float = 1.0
    l: float = 1.0
    c0: float = 1.0
    # only enters the density exponent of the full gas-dynamics system
    gamma: float = 2.0


def make_vortex(params: VortexParams) -> VectorField2:
    """Gaussian vortex ``u0 = B0 mu y e^{-mu r^2/2}``, ``v0 = -B0 mu x e^{-mu r^2/2}``."""
    B0, mu = float(params.B0), float(params.mu)
    if not mu > 0:
        raise InvalidParams(f"mu must be positive, got {mu}")

    def eval_fn(x, y):
        e = np.exp(-0.5 * mu * (x * x + y * y))
        return B0 * mu * y * e, -B0 * mu * x * e

    def grad_fn(x, y):
        e = np.exp(-0.5 * mu * (x * x + y * y))
        a = B0 * mu * e
        return (
            -a * mu * x * y,
            a * (1.0 - mu * y * y),
            -a * (1.0 - mu * x * x),
            a * mu * x * y,
        )

    # |U| = |B0| mu r e^{-mu r^2/2}, maximal at r = 1/sqrt(mu)
    bound = abs(B0) * math.sqrt(mu) * math.exp(-0.5)
    return VectorField2("vortex", eval_fn, grad_fn, {"B0": B0, "mu": mu}, bound)


def make_rigid_rotation(a: float) -> VectorField2:
    """``u0 = a y``, ``v0 = -a x``; Jacobian ``a^2``, vorticity ``-2a``."""
    a = float(a)

    def eval_fn(x, y):
        return a * y, -a * x

    def grad_fn(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z + a, z - a, z

    return VectorField2("rigid-rotation", eval_fn, grad_fn, {"a": a}, None if a else 0.0)


def make_constant(c_u: float = 0.0, c_v: float = 0.0) -> VectorField2:
    c_u, c_v = float(c_u), float(c_v)

    def eval_fn(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z + c_u, z + c_v

    def grad_fn(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z, z, z

    return VectorField2("constant", eval_fn, grad_fn, {"c_u": c_u, "c_v": c_v}, math.hypot(c_u, c_v))


def make_gaussian_bump(amplitude: float = 1.0, width: float = 1.0) -> VectorField2:
    """A zonal jet ``u0 = A e^{-r^2/(2w^2)}``, ``v0 = 0``.

    Its Jacobian determinant vanishes identically while the divergence does not,
    which exercises the degenerate ``D0 = 0`` branch of the blow-up analysis.
    """
    A, w = float(amplitude), float(width)
    if not w > 0:
        raise InvalidParams(f"width must be positive, got {w}")

    def eval_fn(x, y):
        g = A * np.exp(-(x * x + y * y) / (2 * w * w))
        return g, np.zeros_like(g)

    def grad_fn(x, y):
        g = A * np.exp(-(x * x + y * y) / (2 * w * w))
        z = np.zeros_like(g)
        return -g * x / (w * w), -g * y / (w * w), z, z

    return VectorField2("gaussian-bump", eval_fn, grad_fn, {"amplitude": A, "width": w}, abs(A))


def make_linear(g11: float, g12: float, g21: float, g22: float, u_off: float = 0.0, v_off: float = 0.0) -> VectorField2:
    """Affine field with a prescribed constant gradient matrix."""
    g11, g12, g21, g22 = map(float, (g11, g12, g21, g22))

    def eval_fn(x, y):
        return u_off + g11 * x + g12 * y, v_off + g21 * x + g22 * y

    def grad_fn(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z + g11, z + g12, z + g21, z + g22

    params = {"g11": g11, "g12": g12, "g21": g21, "g22": g22, "u_off": u_off, "v_off": v_off}
    return VectorField2("linear", eval_fn, grad_fn, params, None)


def make_gaussian_weight(center: tuple[float, float] = (0.0, 0.0), width: float = 1.0) -> ScalarField2:
    """Unnormalised Gaussian ``exp(-|x - center|^2 / (2 width^2))``."""
    width = float(width)
    if not width > 0:
        raise InvalidParams(f"width must be positive, got {width}")
    cx, cy = map(float, center)

    def eval_fn(x, y):
        return np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width * width))

    # 8 widths leaves a mass fraction below 1e-13 outside the box
    r = 8.0 * width
    return ScalarField2(
        "gaussian", eval_fn, 1.0, (cx - r, cx + r, cy - r, cy + r), {"cx": cx, "cy": cy, "width": width}
    )


def stationary_pi(params: VortexParams, x: float, y: float) -> float:
    """Density-generating function of the stationary vortex of the full system."""
    if not params.c0 > 0:
        raise InvalidParams(f"c0 must be positive, got {params.c0}")
    r2 = np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2
    B0, mu = params.B0, params.mu
    return -(0.5 * B0 * B0 * mu * np.exp(-mu * r2) - params.l * B0 * np.exp(-0.5 * mu * r2)) / params.c0


def zero_field() -> VectorField2:
    return make_constant(0.0, 0.0)


PRESETS: dict[str, Callable[..., VectorField2]] = {
    "vortex": lambda B0=-1.5, mu=1.0, **_: make_vortex(VortexParams(B0=B0, mu=mu)),
    "rigid-rotation": lambda a=0.5, **_: make_rigid_rotation(a),
    "constant": lambda c_u=0.0, c_v=0.0, **_: make_constant(c_u, c_v),
    "gaussian-bump": lambda amplitude=1.0, width=1.0, **_: make_gaussian_bump(amplitude, width),
}

PRESET_KEYS: dict[str, tuple[str, ...]] = {
    "vortex": ("B0", "mu"),
    "rigid-rotation": ("a",),
    "constant": ("c_u", "c_v"),
    "gaussian-bump": ("amplitude", "width"),
}


def make_preset(name: str, **params: float) -> VectorField2:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidParams(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)
