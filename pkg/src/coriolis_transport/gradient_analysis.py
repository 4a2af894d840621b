"""Velocity-gradient dynamics along characteristics and gradient blow-up.

Differentiating the transport equation gives the matrix Riccati equation
``dQ/dt = -Q^2 - w L Q`` for ``Q = grad U`` along a characteristic, with
``L = [[0, -1], [1, 0]]``.  Its solution blows up exactly when the
determinant envelope

    F(t) = 2 D0 + w^2 + w xi + w d sin(wt) - (2 D0 + w xi) cos(wt)

first vanishes, where ``D0``, ``d`` and ``xi`` are the Jacobian determinant,
divergence and vorticity ``v_x - u_y`` of the initial velocity at the start
point.  ``F`` equals ``w^2 D0 det(Q^{-1})`` but stays finite when ``D0 = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .convention import rotation_rate
from .errors import AtSingularity, EmptyWindow, InvalidParams, NotFound
from .fields import VectorField2
from .io import write_grid_csv
from .parallel import ordered_map

D0_FLOOR = 1e-12
ARGMIN_TOL = 1e-4
ROW_CHUNK = 16
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GradientMatrix:
    q11: float
    q12: float
    q21: float
    q22: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.q11, self.q12], [self.q21, self.q22]])

    @classmethod
    def from_array(cls, a) -> "GradientMatrix":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0, 0]), float(a[0, 1]), float(a[1, 0]), float(a[1, 1]))


@dataclass(frozen=True)
class KCoefficients:
    """Initial gradient invariants and, when ``D0`` is not degenerate, the constants K1..K4."""

    D0: float
    d: float
    xi: float
    l: float
    grad: tuple[float, float, float, float]
    K1: float | None = None
    K2: float | None = None
    K3: float | None = None
    K4: float | None = None

    @property
    def degenerate(self) -> bool:
        return self.K1 is None


@dataclass(frozen=True)
class SingularityReport:
    """Blow-up diagnostics at a point, or the global minimum of a scan.

    For scans, ``points`` holds every refined argmin within the tolerance of
    ``t_star`` and ``grid`` the sampled criterion and blow-up-time fields.
    """

    delta: float
    t_star: float | None
    location: tuple[float, float] | None
    boundary: bool = False
    points: tuple[tuple[float, float], ...] = ()
    grid: "ScanGrid | None" = None

    @property
    def degenerate(self) -> bool:
        """True when the minimiser is not a set of at most two isolated points."""
        return len(self.points) > 2


@dataclass(frozen=True)
class ScanGrid:
    xs: np.ndarray
    ys: np.ndarray
    delta: np.ndarray
    t_star: np.ndarray  # +inf where no blow-up
    n_local_minima: int = 0
    n_grid_argmin: int = 0


@dataclass(frozen=True)
class StabilisationResult:
    l: float
    touching_zero: tuple[float, ...] = field(default_factory=tuple)


def invariants(g11, g12, g21, g22):
    """``(D0, d, xi)``: determinant, divergence and vorticity of a gradient matrix."""
    return g11 * g22 - g12 * g21, g11 + g22, g21 - g12


def k_coefficients(field: VectorField2, p: Sequence[float], l: float, d0_floor: float = D0_FLOOR) -> KCoefficients:
    if not l > 0:
        raise InvalidParams(f"l must be positive, got {l}")
    g = tuple(float(c) for c in field.grad(p[0], p[1]))
    return k_coefficients_from_grad(g, l, d0_floor)


def k_coefficients_from_grad(g, l: float, d0_floor: float = D0_FLOOR) -> KCoefficients:
    g11, g12, g21, g22 = g
    D0, d, xi = invariants(g11, g12, g21, g22)
    if abs(D0) < d0_floor:
        return KCoefficients(D0, d, xi, l, tuple(g))
    w = rotation_rate(l)
    return KCoefficients(
        D0, d, xi, l, tuple(g),
        K1=-1.0 / w - g21 / D0,
        K2=g11 / D0,
        K3=1.0 / w - g12 / D0,
        K4=g22 / D0,
    )


def det_qtilde(k: KCoefficients, t: float) -> float:
    """Determinant of ``Q^{-1}(t)`` written with the K constants."""
    if k.degenerate:
        raise InvalidParams("K coefficients undefined for a degenerate Jacobian")
    w = rotation_rate(k.l)
    s, c = math.sin(w * t), math.cos(w * t)
    return (1.0 + w * w * (k.K2 * k.K4 - k.K1 * k.K3) + (k.K2 + k.K4) * w * s + (k.K1 - k.K3) * w * c) / (w * w)


def q_closed_form(k: KCoefficients, t: float, l: float | None = None) -> GradientMatrix:
    """Gradient matrix at time ``t`` along the characteristic described by ``k``."""
    if l is not None and l != k.l:
        raise InvalidParams("l differs from the value the K coefficients were built with")
    det = det_qtilde(k, t)
    if abs(det) < 1e-12 * (1.0 / abs(k.D0) + 1.0):
        raise AtSingularity(f"det(Q^-1) = {det:.3e} at t={t}")
    w = rotation_rate(k.l)
    s, c = math.sin(w * t), math.cos(w * t)
    K1, K2, K3, K4 = k.K1, k.K2, k.K3, k.K4
    scale = 1.0 / (w * det)
    return GradientMatrix(
        scale * (K2 * w * c - K1 * w * s),
        scale * (1.0 - w * K3 * c + K4 * w * s),
        scale * (-1.0 - w * K1 * c - w * K2 * s),
        scale * (w * K4 * c + w * K3 * s),
    )


def q_from_flow_jacobian(g, t: float, l: float) -> np.ndarray:
    """``R(t) G (I + M(t) G)^{-1}``: the gradient obtained by differentiating the flow map."""
    w = rotation_rate(l)
    c, s = math.cos(w * t), math.sin(w * t)
    a, b = s / w, 2.0 * math.sin(0.5 * w * t) ** 2 / w
    G = np.array([[g[0], g[1]], [g[2], g[3]]], dtype=float)
    R = np.array([[c, s], [-s, c]])
    M = np.array([[a, b], [-b, a]])
    return R @ G @ np.linalg.inv(np.eye(2) + M @ G)


def _riccati_rhs(q11, q12, q21, q22, w):
    # -Q^2 - w L Q with L Q = [[-q21, -q22], [q11, q12]]
    return (
        -(q11 * q11 + q12 * q21) + w * q21,
        -(q11 * q12 + q12 * q22) + w * q22,
        -(q21 * q11 + q22 * q21) - w * q11,
        -(q21 * q12 + q22 * q22) - w * q12,
    )


def riccati_oracle(field: VectorField2, p: Sequence[float], l: float, t: float, dt: float = 1e-5) -> GradientMatrix:
    """RK4 integration of the matrix Riccati equation from ``Q(0) = grad U0(p)``."""
    g = [float(c) for c in field.grad(p[0], p[1])]
    return GradientMatrix(*riccati_integrate(g, l, t, dt))


def riccati_integrate(g, l: float, t: float, dt: float = 1e-5):
    if not dt > 0:
        raise InvalidParams(f"dt must be positive, got {dt}")
    w = rotation_rate(l)
    n = max(1, math.ceil(t / dt - 1e-9))
    h = t / n
    q = tuple(float(c) for c in g)
    for _ in range(n):
        k1 = _riccati_rhs(*q, w)
        k2 = _riccati_rhs(*(qi + 0.5 * h * ki for qi, ki in zip(q, k1)), w)
        k3 = _riccati_rhs(*(qi + 0.5 * h * ki for qi, ki in zip(q, k2)), w)
        k4 = _riccati_rhs(*(qi + h * ki for qi, ki in zip(q, k3)), w)
        q = tuple(qi + h / 6.0 * (a + 2 * b + 2 * c + e) for qi, a, b, c, e in zip(q, k1, k2, k3, k4))
        if not all(math.isfinite(qi) and abs(qi) < 1e150 for qi in q):
            raise AtSingularity("Riccati integration overflowed; close to blow-up")
    return q


def riccati_integrate_many(G: np.ndarray, l: float, t: np.ndarray, dt: float = 1e-4) -> np.ndarray:
    """Vectorised RK4 for a batch of gradients ``G`` (shape ``(n, 4)``) to per-row times ``t``.

    Every row takes the same number of steps, each no longer than ``dt``.
    """
    G = np.asarray(G, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), G.shape[:1])
    w = rotation_rate(l)
    n = max(1, math.ceil(float(t.max()) / dt - 1e-9))
    h = t / n
    q = tuple(G[:, i].copy() for i in range(4))
    for _ in range(n):
        k1 = _riccati_rhs(*q, w)
        k2 = _riccati_rhs(*(qi + 0.5 * h * ki for qi, ki in zip(q, k1)), w)
        k3 = _riccati_rhs(*(qi + 0.5 * h * ki for qi, ki in zip(q, k2)), w)
        k4 = _riccati_rhs(*(qi + h * ki for qi, ki in zip(q, k3)), w)
        q = tuple(qi + h / 6.0 * (a + 2 * b + 2 * c + e) for qi, a, b, c, e in zip(q, k1, k2, k3, k4))
    return np.stack(q, axis=1)


def criterion_from_grad(g11, g12, g21, g22, l: float):
    """Smoothness criterion ``d^2 - 4 D0 - 2 w xi - w^2``; negative means no blow-up."""
    D0, d, xi = invariants(g11, g12, g21, g22)
    w = rotation_rate(l)
    return d * d - 4.0 * D0 - 2.0 * w * xi - w * w


def criterion_delta(field: VectorField2, p: Sequence[float], l: float) -> float:
    if not l > 0:
        raise InvalidParams(f"l must be positive, got {l}")
    return float(criterion_from_grad(*field.grad(p[0], p[1]), l))


def envelope_coefficients(D0, d, xi, l: float):
    """``(R0, B, C)`` with ``F = R0 + B sin(l t) + C cos(l t)`` in the unsigned phase ``l t``."""
    w = rotation_rate(l)
    R0 = 2.0 * D0 + w * w + w * xi
    # sin(w t) = sign(w) sin(l t)
    B = w * d * (1.0 if w > 0 else -1.0)
    C = -(2.0 * D0 + w * xi)
    return R0, B, C


def envelope_from_grad(g11, g12, g21, g22, l: float, t):
    R0, B, C = envelope_coefficients(*invariants(g11, g12, g21, g22), l)
    lt = l * np.asarray(t, dtype=float)
    return R0 + B * np.sin(lt) + C * np.cos(lt)


def det_envelope(field: VectorField2, p: Sequence[float], l: float, t: float) -> float:
    if not l > 0:
        raise InvalidParams(f"l must be positive, got {l}")
    return float(envelope_from_grad(*field.grad(p[0], p[1]), l, t))


def blowup_time_from_invariants(D0, d, xi, l: float):
    """First positive zero of the envelope, elementwise; ``inf`` where none exists.

    The root exists iff ``B^2 + C^2 >= R0^2``.  Writing ``B sin + C cos`` as
    ``A cos(theta - phi)``, the zeros are ``theta = phi +- arccos(-R0/A)`` mod ``2 pi``.
    """
    R0, B, C = envelope_coefficients(np.asarray(D0, float), np.asarray(d, float), np.asarray(xi, float), l)
    A = np.hypot(B, C)
    # relative slack so the tangential case (rigid rotation at a = l/2) survives rounding
    exists = A - np.abs(R0) >= -1e-12 * (A + np.abs(R0) + l * l)
    safeA = np.where(A > 0, A, 1.0)
    # subnormal A overflows the ratio; the clip maps that to the right endpoint
    with np.errstate(over="ignore"):
        alpha = np.arccos(np.clip(-R0 / safeA, -1.0, 1.0))
    phi = np.arctan2(B, C)
    two_pi = 2.0 * np.pi
    th1 = np.mod(phi + alpha, two_pi)
    th2 = np.mod(phi - alpha, two_pi)
    # F(0) = l^2 > 0, so a zero phase can only be rounding of a full period
    th1 = np.where(th1 < 1e-13, th1 + two_pi, th1)
    th2 = np.where(th2 < 1e-13, th2 + two_pi, th2)
    theta = np.minimum(th1, th2)
    return np.where(exists & (A > 0), theta / l, np.inf)


def blowup_time_from_grad(g11, g12, g21, g22, l: float):
    return blowup_time_from_invariants(*invariants(g11, g12, g21, g22), l)


def blowup_time(field: VectorField2, p: Sequence[float], l: float) -> float | None:
    if not l > 0:
        raise InvalidParams(f"l must be positive, got {l}")
    t = float(blowup_time_from_grad(*field.grad(p[0], p[1]), l))
    return None if math.isinf(t) else t


def on_boundary(g, l: float, delta) -> np.ndarray:
    """Mask of points where the criterion is zero up to rounding of its terms."""
    D0, d, xi = invariants(*g)
    scale = d * d + 4.0 * np.abs(D0) + 2.0 * l * np.abs(xi) + l * l
    return np.abs(delta) <= 1e-12 * scale


def analyze_point(field: VectorField2, p: Sequence[float], l: float) -> SingularityReport:
    g = [float(c) for c in field.grad(p[0], p[1])]
    delta = float(criterion_from_grad(*g, l))
    t = float(blowup_time_from_grad(*g, l))
    return SingularityReport(
        delta=delta,
        t_star=None if math.isinf(t) else t,
        location=(float(p[0]), float(p[1])),
        boundary=bool(on_boundary(g, l, delta)),
    )


def window_axes(window, resolution):
    """Grid axes for ``window = (xmin, xmax, ymin, ymax)`` and a scalar or ``(nx, ny)`` resolution."""
    xmin, xmax, ymin, ymax = map(float, window)
    if not (xmax > xmin and ymax > ymin):
        raise EmptyWindow(f"degenerate window {window}")
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    nx, ny = int(nx), int(ny)
    if nx < 2 or ny < 2:
        raise InvalidParams(f"resolution must be at least 2 per axis, got {resolution}")
    return np.linspace(xmin, xmax, nx), np.linspace(ymin, ymax, ny)


def _map_rows(fn, ys, workers: int):
    """Apply ``fn`` to fixed row chunks; chunking does not depend on ``workers``."""
    chunks = [ys[i : i + ROW_CHUNK] for i in range(0, len(ys), ROW_CHUNK)]
    parts = ordered_map(fn, chunks, workers)
    return [np.concatenate([p[i] for p in parts], axis=0) for i in range(len(parts[0]))]


def sample_grid(field: VectorField2, l: float, xs, ys, workers: int = 1):
    """``(delta, t_star, d2_minus_4D0, xi)`` on the grid, arrays indexed ``[iy, ix]``."""

    def rows(ychunk):
        X, Y = np.meshgrid(xs, ychunk)
        g = field.grad(X, Y)
        D0, d, xi = invariants(*g)
        return (
            criterion_from_grad(*g, l),
            blowup_time_from_invariants(D0, d, xi, l),
            d * d - 4.0 * D0,
            xi,
        )

    return _map_rows(rows, np.asarray(ys), workers)


def _local_minima(T: np.ndarray) -> np.ndarray:
    """Indices ``(iy, ix)`` of finite cells not larger than any of their 8 neighbours."""
    padded = np.pad(T, 1, constant_values=np.inf)
    ny, nx = T.shape
    is_min = np.isfinite(T)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_min &= T <= padded[1 + dy : 1 + dy + ny, 1 + dx : 1 + dx + nx]
    return np.argwhere(is_min)


def _golden_axis(f, lo, hi, tol, n_iter):
    """Vectorised golden-section minimisation of ``f`` over per-row brackets ``[lo, hi]``."""
    a, b = lo.copy(), hi.copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_iter):
        if np.all(b - a <= tol):
            break
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _GOLDEN * (b - a)
        new_d = a + _GOLDEN * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        f_probe = f(np.where(left, new_c, new_d))
        fc, fd = np.where(left, f_probe, fd), np.where(left, fc, f_probe)
        c, d = c_next, d_next
    return 0.5 * (a + b)


def _refine(field, l, px, py, hx, hy, tol, sweeps=20):
    """Coordinate descent with golden-section line searches, one grid cell around each start."""

    def T(x, y):
        return blowup_time_from_grad(*field.grad(x, y), l)

    x, y = px.astype(float).copy(), py.astype(float).copy()
    n_iter = int(math.ceil(math.log(max(hx, hy) * 2 / tol) / -math.log(_GOLDEN))) + 2
    for _ in range(sweeps):
        x_old, y_old = x.copy(), y.copy()
        x_new = _golden_axis(lambda xx: T(xx, y), x - hx, x + hx, tol, n_iter)
        x = np.where(T(x_new, y) <= T(x, y), x_new, x)
        y_new = _golden_axis(lambda yy: T(x, yy), y - hy, y + hy, tol, n_iter)
        y = np.where(T(x, y_new) <= T(x, y), y_new, y)
        if np.all(np.hypot(x - x_old, y - y_old) <= tol):
            break
    return x, y, T(x, y)


def global_scan(
    field: VectorField2,
    l: float,
    window: Sequence[float],
    resolution,
    workers: int = 1,
    refine_tol: float | None = None,
    argmin_tol: float = ARGMIN_TOL,
    max_refine: int = 1024,
) -> SingularityReport:
    """Earliest blow-up over a rectangle: grid sampling, then local refinement of every grid minimum.

    The reduction is a sort by ``(t, x, y)`` so the result does not depend on
    ``workers``.
    """
    if not l > 0:
        raise InvalidParams(f"l must be positive, got {l}")
    xs, ys = window_axes(window, resolution)
    size = max(xs[-1] - xs[0], ys[-1] - ys[0])
    if refine_tol is None:
        refine_tol = 1e-8 * size
    delta, T, _, _ = sample_grid(field, l, xs, ys, workers)

    minima = _local_minima(T)
    if len(minima) == 0:
        iy, ix = np.unravel_index(np.argmax(delta), delta.shape)
        grid = ScanGrid(xs, ys, delta, T)
        return SingularityReport(float(delta[iy, ix]), None, (float(xs[ix]), float(ys[iy])), grid=grid)

    px, py = xs[minima[:, 1]], ys[minima[:, 0]]
    order = np.lexsort((py, px, T[minima[:, 0], minima[:, 1]]))[:max_refine]
    px, py = px[order], py[order]
    t_grid = T[minima[order, 0], minima[order, 1]]
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    rx, ry, rt = _refine(field, l, px, py, hx, hy, refine_tol)
    worse = ~(rt <= t_grid)
    rx, ry, rt = np.where(worse, px, rx), np.where(worse, py, ry), np.where(worse, t_grid, rt)

    t_star = float(rt.min())
    keep = rt <= t_star + argmin_tol
    cand = sorted(zip(rt[keep], rx[keep], ry[keep]))
    points: list[tuple[float, float]] = []
    merge = max(100 * refine_tol, 1e-12)
    for _, x, y in cand:
        if all(math.hypot(x - qx, y - qy) > merge for qx, qy in points):
            points.append((float(x), float(y)))
    points.sort()
    best = min(cand)
    loc = (float(best[1]), float(best[2]))
    g = [float(c) for c in field.grad(*loc)]
    d_loc = float(criterion_from_grad(*g, l))
    grid = ScanGrid(xs, ys, delta, T, n_local_minima=len(minima), n_grid_argmin=int(np.sum(T <= t_star + argmin_tol)))
    return SingularityReport(
        delta=d_loc,
        t_star=t_star,
        location=loc,
        boundary=bool(on_boundary(g, l, d_loc)),
        points=tuple(points),
        grid=grid,
    )


def corollary_l(
    field: VectorField2,
    window: Sequence[float],
    resolution,
    l_max: float = 1e3,
    rtol: float = 1e-6,
    workers: int = 1,
) -> StabilisationResult:
    """Smallest Coriolis parameter making the criterion strictly negative on the whole grid.

    For fixed derivatives the criterion is the downward parabola
    ``A - 2 s xi l - l^2`` in ``l`` (``A = d^2 - 4 D0``, ``s`` the rotation
    sign).  Points where the parabola's apex is exactly zero are reported in
    ``touching_zero``: there the criterion only touches zero at one ``l``.
    """
    xs, ys = window_axes(window, resolution)
    sign = 1.0 if rotation_rate(1.0) > 0 else -1.0
    _, _, A, xi = sample_grid(field, 1.0, xs, ys, workers)
    A, sxi = A.ravel(), sign * xi.ravel()

    def sup_delta(l):
        return float(np.max(A - 2.0 * l * sxi)) - l * l

    m, a_max = float(sxi.min()), float(A.max())
    disc = m * m + a_max
    hi = (-m + math.sqrt(disc)) if disc > 0 else 0.0
    hi = max(hi, 0.0) * (1.0 + 1e-9) + 1e-9
    while sup_delta(hi) >= 0 and hi < l_max:
        hi = min(2.0 * hi, l_max)
    if sup_delta(hi) >= 0:
        raise NotFound(f"no l <= {l_max} makes the criterion negative on the grid")

    apex = A + sxi * sxi
    touch_mask = (np.abs(apex) <= 1e-12 * (np.abs(A) + sxi * sxi + 1.0)) & (-sxi > 0)
    touching = tuple(sorted({round(float(v), 12) for v in -sxi[touch_mask]}))

    lo = 1e-12 * max(1.0, hi)
    if sup_delta(lo) < 0:
        return StabilisationResult(lo, touching)
    ls = np.linspace(lo, hi, 2049)
    good = np.array([sup_delta(v) < 0 for v in ls])
    k = int(np.argmax(good))
    a, b = ls[k - 1], ls[k]
    while b - a > rtol * b:
        mid = 0.5 * (a + b)
        if sup_delta(mid) < 0:
            b = mid
        else:
            a = mid
    return StabilisationResult(float(b), touching)


def write_contour_csv(path, report: SingularityReport) -> None:
    """``x,y,delta,t_star`` over the scan grid; ``t_star`` empty where there is no blow-up."""
    g = report.grid
    if g is None:
        raise InvalidParams("report carries no grid")
    t = np.where(np.isinf(g.t_star), np.nan, g.t_star)
    write_grid_csv(path, ["x", "y", "delta", "t_star"], g.xs, g.ys, g.delta, t)
