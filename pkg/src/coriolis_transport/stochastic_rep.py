"""Stochastically regularised velocity: the Gaussian-kernel integral representation.

Adding position noise ``sigma dW`` to the characteristics turns the classical
solution into a conditional expectation

    u_hat(t, x, y) = int f0(s) q1(t, s) H(t, s, x, y) ds / int f0(s) H(t, s, x, y) ds

(and likewise ``v_hat`` with ``q2``), where ``q = (q1, q2)`` is the rotated
initial velocity and ``H`` a Gaussian in the distance between the target and
the noiseless endpoint of the characteristic started at ``s``.  As
``sigma -> 0`` this converges to the classical solution while it stays smooth.

Two independent routes are provided: tensor-product Gauss-Legendre quadrature
of the representation, and a Monte-Carlo simulation of the stochastic system
with Nadaraya-Watson regression.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import flow
from .errors import InsufficientSamples, InvalidParams, NoConvergence, VanishingDenominator
from .fields import ScalarField2, VectorField2
from .gradient_analysis import envelope_from_grad
from .io import write_grid_csv, write_json
from .parallel import ordered_map

PAIRINGS = ("printed", "swapped")
CENTER_STRATEGIES = ("target-backtrace", "target")
QUAD_TOL = 1e-6
TARGET_CHUNK = 32
PATH_CHUNK = 16384
EDGE_TOL = 1e-9
MIN_GROW_FACTOR = 1.2
MAX_GROW_FACTOR = 4.0
MAX_GROW = 12


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for evaluating the integral representation.

    Integration runs over a square of half-width ``radius_mult * sqrt(2 t) * sigma``
    in coordinates linearised at the Lagrangian preimage (the inverse flow-map
    Jacobian, singular values capped at ``stretch_cap``, maps it to the start
    plane).  The square grows while the weight on its edge exceeds
    ``EDGE_TOL`` of the interior maximum.
    """

    sigma: float = 0.1
    radius_mult: float = 5.0
    n_per_axis: int = 129
    center_strategy: str = "target-backtrace"
    pairing: str = "printed"
    stretch_cap: float = 50.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParams(f"sigma must be positive, got {self.sigma}")
        if self.n_per_axis < 16:
            raise InvalidParams(f"n_per_axis must be at least 16, got {self.n_per_axis}")
        if self.radius_mult < 4:
            raise InvalidParams(f"radius_mult must be at least 4, got {self.radius_mult}")
        if self.center_strategy not in CENTER_STRATEGIES:
            raise InvalidParams(f"center_strategy must be one of {CENTER_STRATEGIES}")
        if self.pairing not in PAIRINGS:
            raise InvalidParams(f"pairing must be one of {PAIRINGS}")

    def metadata(self) -> dict:
        return {
            "rule": "gauss-legendre tensor product",
            "sigma": self.sigma,
            "radius_mult": self.radius_mult,
            "n_per_axis": self.n_per_axis,
            "center_strategy": self.center_strategy,
            "pairing": self.pairing,
            "stretch_cap": self.stretch_cap,
        }


@dataclass(frozen=True)
class KernelEval:
    q1: float
    q2: float
    h: float


@dataclass(frozen=True)
class MCEstimate:
    u_hat: float
    v_hat: float
    stderr_u: float
    stderr_v: float
    n_samples: int
    bandwidth: float
    ess: float
    seed: int

    @property
    def stderr(self) -> float:
        return max(self.stderr_u, self.stderr_v)


@dataclass(frozen=True)
class SweepPoint:
    sigma: float
    u_hat: float
    v_hat: float
    u_exact: float
    v_exact: float

    @property
    def error(self) -> float:
        return math.hypot(self.u_hat - self.u_exact, self.v_hat - self.v_exact)


def kernel_exponent(field: VectorField2, l: float, t: float, sx, sy, tx, ty, sigma: float, pairing: str = "printed"):
    """``(q1, q2, E)`` with ``H = exp(-E)`` at start points ``s`` for targets ``(tx, ty)``.

    The residuals ``(q1 - u0)/l + s2 - y`` and ``-(q2 - v0)/l + s1 - x`` are
    the offsets between the target and the noiseless endpoint, written with the
    first integrals ``y - u/l`` and ``x + v/l``.  ``pairing="swapped"`` exchanges
    the two position offsets.
    """
    u0, v0 = field.eval(sx, sy)
    q1, q2 = flow.rotate_velocity(u0, v0, t, l)
    du, dv = (q1 - u0) / l, -(q2 - v0) / l
    if pairing == "printed":
        r1, r2 = du + sy - ty, dv + sx - tx
    elif pairing == "swapped":
        r1, r2 = du + sx - tx, dv + sy - ty
    else:
        raise InvalidParams(f"pairing must be one of {PAIRINGS}")
    return q1, q2, (r1 * r1 + r2 * r2) / (2.0 * sigma * sigma * t)


def kernel(
    field: VectorField2, l: float, t: float, s: Sequence[float], target: Sequence[float], sigma: float,
    pairing: str = "printed",
) -> KernelEval:
    if not t > 0:
        raise InvalidParams(f"t must be positive, got {t}")
    if not sigma > 0:
        raise InvalidParams(f"sigma must be positive, got {sigma}")
    q1, q2, E = kernel_exponent(field, l, t, s[0], s[1], target[0], target[1], sigma, pairing)
    return KernelEval(float(q1), float(q2), float(np.exp(-E)))


def _inverse_jacobian(field: VectorField2, sx, sy, t: float, l: float, cap: float):
    """Inverse flow-map Jacobian at ``s`` with singular values clipped to ``cap``."""
    g11, g12, g21, g22 = field.grad(sx, sy)
    _, _, a, b = flow.rotation_coefficients(t, l)
    J = np.empty(np.shape(sx) + (2, 2))
    J[..., 0, 0] = 1.0 + a * g11 + b * g21
    J[..., 0, 1] = a * g12 + b * g22
    J[..., 1, 0] = a * g21 - b * g11
    J[..., 1, 1] = 1.0 + a * g22 - b * g12
    U, S, Vt = np.linalg.svd(J)
    with np.errstate(divide="ignore"):
        inv_s = np.minimum(1.0 / S, cap)
    # J^{-1} = V diag(1/S) U^T
    return np.einsum("...ji,...j,...kj->...ik", Vt, inv_s, U)


def _domains(field: VectorField2, l: float, t: float, tx, ty, spec: QuadratureSpec):
    """Centre, shape matrix and half-width of the integration parallelogram for each target.

    Start points are ``s = centre + half * A @ z`` for ``z`` in ``[-1, 1]^2``.
    Centred on the Lagrangian preimage, ``A`` is the (capped) inverse Jacobian
    of the flow map there, which makes the kernel close to isotropic in ``z``.
    """
    # kernel exponent reaches radius_mult^2 on the edge of the linearised square
    width = math.sqrt(2.0) * spec.sigma * math.sqrt(t)
    speed = field.speed_bound
    if speed is None:
        u, v = field.eval(tx, ty)
        speed = np.hypot(u, v) + 1.0
    reach = speed * min(t, 2.0 / l)
    fallback = np.broadcast_to(spec.radius_mult * width + reach, tx.shape).astype(float)
    eye = np.broadcast_to(np.eye(2), tx.shape + (2, 2)).copy()
    if spec.center_strategy == "target":
        return tx.copy(), ty.copy(), eye, fallback
    sx, sy, ok = flow.backtrace_many(field, tx, ty, t, l)
    A = np.where(ok[:, None, None], _inverse_jacobian(field, sx, sy, t, l, spec.stretch_cap), eye)
    half = np.where(ok, spec.radius_mult * width, fallback)
    return np.where(ok, sx, tx), np.where(ok, sy, ty), A, half


def _map_nodes(cx, cy, A, half, zx, zy):
    """Start points for reference coordinates ``(zx, zy)``; extra axes of ``z`` broadcast."""
    extra = (None,) * (np.ndim(zx))
    idx = (slice(None),) + extra
    hx = half[idx]
    sx = cx[idx] + hx * (A[:, 0, 0][idx] * zx + A[:, 0, 1][idx] * zy)
    sy = cy[idx] + hx * (A[:, 1, 0][idx] * zx + A[:, 1, 1][idx] * zy)
    return sx, sy


def _edge_ratio(field, f0, l, t, tx, ty, dom, spec, nodes, E_min, W_scale):
    """Largest weight on the boundary of each parallelogram relative to the interior maximum."""
    edge = np.concatenate([nodes, [-1.0, 1.0]])
    ones = np.ones_like(edge)
    zx = np.concatenate([edge, edge, -ones, ones])
    zy = np.concatenate([-ones, ones, edge, edge])
    sx, sy = _map_nodes(*dom, zx, zy)
    _, _, E = kernel_exponent(field, l, t, sx, sy, tx[:, None], ty[:, None], spec.sigma, spec.pairing)
    W = f0.eval(sx, sy) * np.exp(-(E - E_min[:, None]))
    return W.max(axis=1) / W_scale


def _square_sums(field, f0, l, t, tx, ty, dom, spec, nodes, weights):
    n = len(nodes)
    # node layout per target: [target, i, j]
    sx, sy = _map_nodes(*dom, nodes[:, None], nodes[None, :])
    q1, q2, E = kernel_exponent(field, l, t, sx, sy, tx[:, None, None], ty[:, None, None], spec.sigma, spec.pairing)
    # shifting E per target rescales numerator and denominator alike
    E_min = E.reshape(len(tx), n * n).min(axis=1)
    fw = f0.eval(sx, sy) * np.exp(-(E - E_min[:, None, None]))
    W = fw * (weights[:, None] * weights[None, :])[None]
    den = W.sum(axis=(1, 2))
    num_u = (W * q1).sum(axis=(1, 2))
    num_v = (W * q2).sum(axis=(1, 2))
    return num_u, num_v, den, E_min, fw.reshape(len(tx), n * n).max(axis=1)


def _hat_batch(field, f0, l, t, tx, ty, spec, nodes, weights):
    cx, cy, A, half = _domains(field, l, t, tx, ty, spec)
    dom = (cx, cy, A, half)
    num_u, num_v, den, E_min, W_scale = _square_sums(field, f0, l, t, tx, ty, dom, spec, nodes, weights)
    need = math.log(1.0 / EDGE_TOL)
    # grow domains whose edges still carry weight: the tail decides adequacy, not a fixed multiple
    for _ in range(MAX_GROW):
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = _edge_ratio(field, f0, l, t, tx, ty, dom, spec, nodes, E_min, W_scale)
        grow = ~(ratio <= EDGE_TOL) & (den > 0)
        if not grow.any():
            break
        # Gaussian tails: the log-ratio scales with half^2
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.sqrt(need / np.maximum(-np.log(ratio), 1e-3)) * 1.05
        factor = np.clip(np.nan_to_num(factor, nan=MAX_GROW_FACTOR), MIN_GROW_FACTOR, MAX_GROW_FACTOR)
        half = np.where(grow, half * factor, half)
        dom = (cx, cy, A, half)
        idx = np.flatnonzero(grow)
        sub = (cx[idx], cy[idx], A[idx], half[idx])
        parts = _square_sums(field, f0, l, t, tx[idx], ty[idx], sub, spec, nodes, weights)
        for arr, new in zip((num_u, num_v, den, E_min, W_scale), parts):
            arr[idx] = new
    bad = ~(den > 0) | ~np.isfinite(den)
    safe = np.where(bad, 1.0, den)
    return np.where(bad, np.nan, num_u / safe), np.where(bad, np.nan, num_v / safe)


def evaluate_hat_many(
    field: VectorField2, f0: ScalarField2, l: float, t: float, tx, ty, spec: QuadratureSpec, workers: int = 1
):
    """``(u_hat, v_hat)`` for arrays of targets; NaN where the denominator vanished."""
    if not t > 0:
        raise InvalidParams(f"t must be positive, got {t}")
    tx = np.asarray(tx, dtype=float)
    ty = np.asarray(ty, dtype=float)
    shape = np.broadcast(tx, ty).shape
    tx, ty = (np.broadcast_to(a, shape).ravel() for a in (tx, ty))
    nodes, weights = np.polynomial.legendre.leggauss(spec.n_per_axis)
    chunk = max(1, min(TARGET_CHUNK, 2_000_000 // (spec.n_per_axis**2)))
    slices = [slice(i, i + chunk) for i in range(0, len(tx), chunk)]

    def run(sl):
        return _hat_batch(field, f0, l, t, tx[sl], ty[sl], spec, nodes, weights)

    parts = ordered_map(run, slices, workers)
    u = np.concatenate([p[0] for p in parts]).reshape(shape)
    v = np.concatenate([p[1] for p in parts]).reshape(shape)
    return u, v


def evaluate_hat(
    field: VectorField2, f0: ScalarField2, l: float, t: float, target: Sequence[float], spec: QuadratureSpec
) -> tuple[float, float]:
    u, v = evaluate_hat_many(field, f0, l, t, np.array([target[0]]), np.array([target[1]]), spec)
    if not np.isfinite(u[0]):
        raise VanishingDenominator(f"normalising integral underflowed at target {tuple(target)}")
    return float(u[0]), float(v[0])


def evaluate_hat_grid(field, f0, l, t, xs, ys, spec: QuadratureSpec, workers: int = 1):
    X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float))
    return evaluate_hat_many(field, f0, l, t, X, Y, spec, workers)


def sigma_sweep(
    field: VectorField2, f0: ScalarField2, l: float, t: float, target: Sequence[float], sigmas: Sequence[float],
    spec: QuadratureSpec,
) -> list[SweepPoint]:
    """Distance between the regularised and classical solutions for each ``sigma``.

    Refuses (``NoConvergence``) unless ``target`` is reached by exactly one
    characteristic and that one is still smooth at ``t``.
    """
    found = flow.preimages(field, target, t, l)
    if len(found) != 1:
        raise NoConvergence(f"{len(found)} characteristics reach {tuple(target)} at t={t}; no classical value")
    sx, sy = found[0]
    if not envelope_from_grad(*field.grad(sx, sy), l, t) > 0:
        raise NoConvergence(f"characteristic through {tuple(target)} has blown up before t={t}")
    u0, v0 = field.eval(sx, sy)
    ue, ve = (float(c) for c in flow.rotate_velocity(u0, v0, t, l))
    out = []
    for sigma in sigmas:
        s = QuadratureSpec(
            sigma=float(sigma), radius_mult=spec.radius_mult, n_per_axis=spec.n_per_axis,
            center_strategy=spec.center_strategy, pairing=spec.pairing, stretch_cap=spec.stretch_cap,
        )
        uh, vh = evaluate_hat(field, f0, l, t, target, s)
        out.append(SweepPoint(float(sigma), uh, vh, ue, ve))
    return out


def _sample_f0(f0: ScalarField2, n: int, rng: np.random.Generator):
    """Rejection sampling from the normalised weight with a uniform proposal on ``f0.box``."""
    xmin, xmax, ymin, ymax = f0.box
    xs, ys = [], []
    have = 0
    while have < n:
        m = max(1024, 2 * (n - have))
        px = rng.uniform(xmin, xmax, m)
        py = rng.uniform(ymin, ymax, m)
        keep = rng.uniform(0.0, f0.bound, m) < f0.eval(px, py)
        xs.append(px[keep])
        ys.append(py[keep])
        have += int(keep.sum())
    return np.concatenate(xs)[:n], np.concatenate(ys)[:n]


def simulate_paths(
    field: VectorField2, f0: ScalarField2, l: float, t: float, sigma: float, n_paths: int, dt: float,
    seed: int = 0, workers: int = 1,
):
    """Endpoints ``(X, Y, U, V)`` of the stochastic characteristic system at time ``t``.

    Velocities rotate exactly; positions take the exact drift increment of each
    step plus a Gaussian increment ``sigma sqrt(dt) N(0, 1)``.  Paths are
    generated in fixed chunks, each with its own counter-derived stream, so the
    output does not depend on ``workers``.
    """
    if not dt > 0:
        raise InvalidParams(f"dt must be positive, got {dt}")
    n_steps = max(1, math.ceil(t / dt - 1e-9))
    h = t / n_steps
    c, s, a, b = (float(v) for v in flow.rotation_coefficients(h, l))
    noise = sigma * math.sqrt(h)
    sizes = [min(PATH_CHUNK, n_paths - i) for i in range(0, n_paths, PATH_CHUNK)]

    def run(k):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))
        x, y = _sample_f0(f0, sizes[k], rng)
        u, v = field.eval(x, y)
        u, v = u.copy(), v.copy()
        for _ in range(n_steps):
            z = rng.standard_normal((2, sizes[k]))
            x = x + (u * a + v * b) + noise * z[0]
            y = y + (v * a - u * b) + noise * z[1]
            u, v = u * c + v * s, v * c - u * s
        return x, y, u, v

    parts = ordered_map(run, range(len(sizes)), workers)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def mc_oracle(
    field: VectorField2,
    f0: ScalarField2,
    l: float,
    t: float,
    target: Sequence[float],
    sigma: float,
    n_paths: int = 200_000,
    dt: float = 1e-3,
    bandwidth: float | None = None,
    seed: int = 0,
    workers: int = 1,
    ess_floor: float = 200.0,
    n_boot: int = 200,
) -> MCEstimate:
    """Monte-Carlo estimate of ``E[(U, V) | (X, Y) = target]`` with bootstrap standard errors."""
    if n_paths < 1000:
        raise InvalidParams(f"n_paths must be at least 1000, got {n_paths}")
    if bandwidth is None:
        bandwidth = sigma * math.sqrt(t) / 4.0
    if not bandwidth > 0:
        raise InvalidParams(f"bandwidth must be positive, got {bandwidth}")
    X, Y, U, V = simulate_paths(field, f0, l, t, sigma, n_paths, dt, seed, workers)
    w = np.exp(-((X - target[0]) ** 2 + (Y - target[1]) ** 2) / (2.0 * bandwidth**2))
    sw = w.sum()
    ess = float(sw * sw / np.sum(w * w)) if sw > 0 else 0.0
    if ess < ess_floor:
        raise InsufficientSamples(f"effective sample size {ess:.1f} below {ess_floor}")
    u_hat = float(np.sum(w * U) / sw)
    v_hat = float(np.sum(w * V) / sw)

    local = w > w.max() * 1e-16
    wl, ul, vl = w[local], U[local], V[local]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2**31,))))
    counts = rng.poisson(1.0, size=(n_boot, wl.size))
    bw = counts * wl
    bsum = bw.sum(axis=1)
    ok = bsum > 0
    bu = (bw @ ul)[ok] / bsum[ok]
    bv = (bw @ vl)[ok] / bsum[ok]
    return MCEstimate(u_hat, v_hat, float(bu.std(ddof=1)), float(bv.std(ddof=1)), n_paths, bandwidth, ess, seed)


def write_hat_csv(path, xs, ys, u_hat, v_hat) -> None:
    write_grid_csv(path, ["x", "y", "u_hat", "v_hat"], xs, ys, u_hat, v_hat)


def write_mc_json(path, est: MCEstimate, target: Sequence[float], sigma: float, t: float) -> None:
    write_json(
        path,
        {
            "estimate": {"u_hat": est.u_hat, "v_hat": est.v_hat},
            "stderr": {"u_hat": est.stderr_u, "v_hat": est.stderr_v},
            "ess": est.ess,
            "seed": est.seed,
            "n_paths": est.n_samples,
            "bandwidth": est.bandwidth,
            "target": list(target),
            "sigma": sigma,
            "t": t,
        },
    )
