"""Characteristics of the rotating transport equation and their inversion.

Along a characteristic the velocity turns rigidly at rate ``l`` and the
particle moves on a circle of radius ``|U0| / l``:

    u(t) = u0 cos(wt) + v0 sin(wt),    x(t) = x0 + (u0 sin(wt) + v0 (1 - cos(wt))) / w
    v(t) = v0 cos(wt) - u0 sin(wt),    y(t) = y0 + (v0 sin(wt) - u0 (1 - cos(wt))) / w

with ``w = rotation_rate(l)``.  Everything here broadcasts over arrays of
starting points or targets.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .convention import rotation_rate
from .errors import InvalidParams, NoConvergence
from .fields import VectorField2
from .io import fmt

NEWTON_MAX_ITER = 50
NEWTON_RTOL = 1e-12
JAC_FLOOR = 1e-10


@dataclass(frozen=True)
class FlowState:
    t: float
    x: float
    y: float
    u: float
    v: float

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.u, self.v)


def rotation_coefficients(t, l: float):
    """Return ``(cos wt, sin wt, sin(wt)/w, (1 - cos wt)/w)`` for the active convention."""
    w = rotation_rate(l)
    wt = w * np.asarray(t, dtype=float)
    c, s = np.cos(wt), np.sin(wt)
    # 2 sin^2(wt/2) avoids cancellation in 1 - cos for small wt
    return c, s, s / w, 2.0 * np.sin(0.5 * wt) ** 2 / w


def rotate_velocity(u0, v0, t, l: float):
    c, s, _, _ = rotation_coefficients(t, l)
    return u0 * c + v0 * s, v0 * c - u0 * s


def displacement(u0, v0, t, l: float):
    _, _, a, b = rotation_coefficients(t, l)
    return u0 * a + v0 * b, v0 * a - u0 * b


def forward_map(field: VectorField2, x0, y0, t, l: float):
    """Positions and velocities at time ``t`` of particles started at ``(x0, y0)``."""
    u0, v0 = field.eval(x0, y0)
    dx, dy = displacement(u0, v0, t, l)
    u, v = rotate_velocity(u0, v0, t, l)
    return x0 + dx, y0 + dy, u, v


def advance(field: VectorField2, start: Sequence[float], t: float, l: float) -> FlowState:
    if t < 0:
        raise InvalidParams(f"t must be non-negative, got {t}")
    if not l > 0:
        raise InvalidParams(f"l must be positive, got {l}")
    x, y, u, v = forward_map(field, float(start[0]), float(start[1]), t, l)
    return FlowState(float(t), float(x), float(y), float(u), float(v))


def ode_oracle(field: VectorField2, start: Sequence[float], t: float, l: float, dt: float = 1e-4) -> FlowState:
    """Classical RK4 on ``(x, y, u, v)' = (u, v, w v, -w u)``; independent of the closed forms."""
    if not dt > 0:
        raise InvalidParams(f"dt must be positive, got {dt}")
    w = rotation_rate(l)
    n = max(1, math.ceil(t / dt - 1e-9))
    h = t / n
    x, y = float(start[0]), float(start[1])
    u, v = (float(c) for c in field.eval(x, y))
    # the system is linear, so each RK4 stage is written out on plain floats
    for _ in range(n):
        k1x, k1y, k1u, k1v = u, v, w * v, -w * u
        u2, v2 = u + 0.5 * h * k1u, v + 0.5 * h * k1v
        k2x, k2y, k2u, k2v = u2, v2, w * v2, -w * u2
        u3, v3 = u + 0.5 * h * k2u, v + 0.5 * h * k2v
        k3x, k3y, k3u, k3v = u3, v3, w * v3, -w * u3
        u4, v4 = u + h * k3u, v + h * k3v
        k4x, k4y, k4u, k4v = u4, v4, w * v4, -w * u4
        x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        u += h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
        v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return FlowState(float(t), x, y, u, v)


def backtrace_many(
    field: VectorField2,
    tx,
    ty,
    t: float,
    l: float,
    guess=None,
    max_iter: int = NEWTON_MAX_ITER,
    rtol: float = NEWTON_RTOL,
    jac_floor: float = JAC_FLOOR,
):
    """Vectorised Newton inversion of the flow map.

    Solves ``s + M(t) U0(s) = target`` for every target.  Returns
    ``(sx, sy, converged)``; entries that fail are left at their last iterate.
    """
    tx = np.atleast_1d(np.asarray(tx, dtype=float))
    ty = np.atleast_1d(np.asarray(ty, dtype=float))
    tx, ty = np.broadcast_arrays(tx, ty)
    if guess is None:
        sx, sy = tx.copy(), ty.copy()
    else:
        sx = np.broadcast_to(np.asarray(guess[0], dtype=float), tx.shape).copy()
        sy = np.broadcast_to(np.asarray(guess[1], dtype=float), tx.shape).copy()
    _, _, a, b = rotation_coefficients(t, l)
    tol = rtol * (1.0 + np.hypot(tx, ty))

    def residual(sx, sy):
        u0, v0 = field.eval(sx, sy)
        return sx + a * u0 + b * v0 - tx, sy + a * v0 - b * u0 - ty

    rx, ry = residual(sx, sy)
    rn = np.hypot(rx, ry)
    done = rn <= tol
    failed = np.zeros(tx.shape, dtype=bool)
    for _ in range(max_iter):
        active = ~(done | failed)
        if not active.any():
            break
        g11, g12, g21, g22 = field.grad(sx, sy)
        # J = I + M G with M = [[a, b], [-b, a]]
        j11 = 1.0 + a * g11 + b * g21
        j12 = a * g12 + b * g22
        j21 = a * g21 - b * g11
        j22 = 1.0 + a * g22 - b * g12
        det = j11 * j22 - j12 * j21
        failed |= active & (np.abs(det) < jac_floor)
        active &= ~failed
        safe = np.where(active, det, 1.0)
        stx = np.where(active, -(j22 * rx - j12 * ry) / safe, 0.0)
        sty = np.where(active, -(-j21 * rx + j11 * ry) / safe, 0.0)
        # backtracking on the residual norm keeps far-off guesses from diverging
        step = np.ones_like(sx)
        for _ in range(30):
            nx, ny = sx + step * stx, sy + step * sty
            nrx, nry = residual(nx, ny)
            nrn = np.hypot(nrx, nry)
            worse = active & (nrn > rn) & (nrn > tol)
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
        sx = np.where(active, nx, sx)
        sy = np.where(active, ny, sy)
        rx = np.where(active, nrx, rx)
        ry = np.where(active, nry, ry)
        rn = np.hypot(rx, ry)
        done |= active & (rn <= tol)
    return sx, sy, done & ~failed


def backtrace(
    field: VectorField2,
    target: Sequence[float],
    t: float,
    l: float,
    guess: Sequence[float] | None = None,
    max_iter: int = NEWTON_MAX_ITER,
    jac_floor: float = JAC_FLOOR,
) -> tuple[float, float]:
    """Lagrangian preimage of ``target``: the start point whose characteristic reaches it at ``t``.

    Raises :class:`NoConvergence` when Newton stalls or the Jacobian of the
    flow map degenerates, which happens near the blow-up time.
    """
    if not l > 0:
        raise InvalidParams(f"l must be positive, got {l}")
    if t == 0:
        return float(target[0]), float(target[1])
    sx, sy, ok = backtrace_many(field, target[0], target[1], t, l, guess, max_iter=max_iter, jac_floor=jac_floor)
    if not ok[0]:
        raise NoConvergence(f"backtrace of {tuple(target)} at t={t} did not converge")
    return float(sx[0]), float(sy[0])


def preimages(
    field: VectorField2, target: Sequence[float], t: float, l: float, n_guess: int = 15, merge: float = 1e-6
) -> list[tuple[float, float]]:
    """Every start point found to reach ``target`` at ``t``, sorted.

    Newton runs from an ``n_guess x n_guess`` grid covering the disc that can
    reach the target, so several results mean the characteristics have crossed.
    Fields without a speed bound (the affine presets) get a single Newton run
    from the target.
    """
    if t == 0:
        return [(float(target[0]), float(target[1]))]
    if field.speed_bound is None:
        sx, sy, ok = backtrace_many(field, target[0], target[1], t, l)
        return [(float(sx[0]), float(sy[0]))] if ok[0] else []
    reach = field.speed_bound * min(abs(t), 2.0 / l) * 1.01 + 1e-9
    g = np.linspace(-reach, reach, n_guess)
    GX, GY = np.meshgrid(float(target[0]) + g, float(target[1]) + g)
    tx, ty = np.full(GX.size, float(target[0])), np.full(GX.size, float(target[1]))
    sx, sy, ok = backtrace_many(field, tx, ty, t, l, guess=(GX.ravel(), GY.ravel()))
    found: list[tuple[float, float]] = []
    for x, y in sorted(zip(sx[ok].tolist(), sy[ok].tolist())):
        if all(math.hypot(x - a, y - b) > merge for a, b in found):
            found.append((x, y))
    return found


def solve_pointwise(
    field: VectorField2, target: Sequence[float], t: float, l: float, guess: Sequence[float] | None = None
) -> tuple[float, float]:
    """Classical solution ``(u, v)`` at ``(t, target)``."""
    sx, sy = backtrace(field, target, t, l, guess)
    u0, v0 = field.eval(sx, sy)
    u, v = rotate_velocity(u0, v0, t, l)
    return float(u), float(v)


def solve_grid(field: VectorField2, xs, ys, t: float, l: float):
    """Classical solution on the tensor grid ``xs x ys`` (arrays indexed ``[iy, ix]``).

    Returns ``(u, v, converged)``; failed cells are NaN in ``u`` and ``v``.
    """
    X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float))
    if t == 0:
        u, v = field.eval(X, Y)
        return u, v, np.ones(X.shape, dtype=bool)
    sx, sy, ok = backtrace_many(field, X.ravel(), Y.ravel(), t, l)
    u0, v0 = field.eval(sx, sy)
    u, v = rotate_velocity(u0, v0, t, l)
    u = np.where(ok, u, np.nan).reshape(X.shape)
    v = np.where(ok, v, np.nan).reshape(X.shape)
    return u, v, ok.reshape(X.shape)


def trajectory(field: VectorField2, start: Sequence[float], l: float, t_end: float, n_samples: int) -> list[FlowState]:
    if n_samples < 2:
        raise InvalidParams(f"n_samples must be at least 2, got {n_samples}")
    ts = np.linspace(0.0, t_end, n_samples)
    x, y, u, v = forward_map(field, float(start[0]), float(start[1]), ts, l)
    x, y = np.broadcast_to(x, ts.shape), np.broadcast_to(y, ts.shape)
    u, v = np.broadcast_to(u, ts.shape), np.broadcast_to(v, ts.shape)
    return [FlowState(float(ts[i]), float(x[i]), float(y[i]), float(u[i]), float(v[i])) for i in range(n_samples)]


def write_trajectory_csv(path: "str | Path", states: Sequence[FlowState]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "y", "u", "v"])
        for s in states:
            writer.writerow([fmt(s.t), fmt(s.x), fmt(s.y), fmt(s.u), fmt(s.v)])
