"""Release acceptance checks, shared by ``coriolis-transport verify`` and the test suite."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import flow
from . import gradient_analysis as ga
from . import stochastic_rep as sr
from .errors import ConfigError
from .fields import VortexParams, make_constant, make_gaussian_weight, make_rigid_rotation, make_vortex, zero_field

REFERENCE_WINDOW = (-3.0, 3.0, -3.0, 3.0)
REFERENCE_RESOLUTION = 201
VORTEX = VortexParams(B0=-1.5, mu=1.0, l=1.0)
SWEEP_TARGET = (0.5, 0.0)
SWEEP_TIME = 1.0
DEFAULT_SIGMAS = (0.4, 0.2, 0.1, 0.05)
# quadrature tolerances this large would swamp the 0.02 slack of the MC comparison
MAX_QUAD_TOL = 1e-3
EPS = float(np.finfo(float).eps)


@dataclass
class VerifyConfig:
    sigmas: Sequence[float] = DEFAULT_SIGMAS
    seed: int = 0
    quad_tol: float = sr.QUAD_TOL
    n_paths: int = 200_000
    mc_sigma: float = 0.2
    mc_dt: float = 1e-3
    n_random: int = 1000
    threads: int = 1

    def lint(self) -> None:
        if not 0 < self.quad_tol < MAX_QUAD_TOL:
            raise ConfigError(
                f"quad_tol={self.quad_tol} makes the MC/quadrature comparison vacuous (need 0 < quad_tol < {MAX_QUAD_TOL})"
            )
        if len(self.sigmas) < 2 or any(not s > 0 for s in self.sigmas):
            raise ConfigError("sigma ladder needs at least two positive values")
        if self.n_paths < 1000:
            raise ConfigError("n_paths must be at least 1000")


@dataclass
class CriterionResult:
    name: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.measured} (tolerance: {self.tolerance}) [{self.seconds:.2f}s]"


def _timed(fn: Callable[[], CriterionResult]) -> CriterionResult:
    t0 = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - t0
    return res


def _random_gradients(rng: np.random.Generator, n: int):
    G = rng.normal(scale=1.5, size=(n, 4))
    ls = rng.uniform(0.2, 3.0, size=n)
    return G, ls


def ac1_blowup_time(cfg: VerifyConfig) -> CriterionResult:
    t0 = time.perf_counter()
    rep = ga.global_scan(make_vortex(VORTEX), VORTEX.l, REFERENCE_WINDOW, REFERENCE_RESOLUTION, workers=cfg.threads)
    elapsed = time.perf_counter() - t0
    pts = np.array(rep.points)
    # every argmin must have its point reflection in the set
    sym = max(float(np.min(np.hypot(*(pts + p).T))) for p in pts) if len(pts) else math.inf
    t_ok = rep.t_star is not None and 1.85 <= rep.t_star <= 1.95
    count_ok = len(pts) == 2
    ok = t_ok and count_ok and sym <= 1e-3 and elapsed < 10.0
    radii = np.hypot(*pts.T) if len(pts) else np.array([np.nan])
    return CriterionResult(
        "AC-1 blow-up time",
        ok,
        f"t*={rep.t_star:.6f}, argmin points={len(pts)} (radius {radii.min():.6f}..{radii.max():.6f}), "
        f"reflection gap={sym:.2e}, scan {elapsed:.2f}s",
        "t* in [1.85, 1.95], exactly 2 points p/-p to 1e-3, < 10 s",
        details={"t_star": rep.t_star, "n_points": len(pts), "symmetry": sym, "t_ok": t_ok, "count_ok": count_ok},
    )


def ac2_equivalence(cfg: VerifyConfig) -> CriterionResult:
    rng = np.random.default_rng(cfg.seed)
    G, ls = _random_gradients(rng, 4 * cfg.n_random)
    delta = np.array([ga.criterion_from_grad(*g, l) for g, l in zip(G, ls)])
    keep = np.abs(delta) >= 1e-6
    G, ls, delta = G[keep][: cfg.n_random], ls[keep][: cfg.n_random], delta[keep][: cfg.n_random]
    finite = np.array([np.isfinite(ga.blowup_time_from_grad(*g, l)) for g, l in zip(G, ls)])
    mismatches = int(np.sum(finite != (delta >= 0)))
    boundary_err = 0.0
    for l in (0.3, 1.0, 2.5, 7.0):
        t = float(ga.blowup_time(make_rigid_rotation(l / 2.0), (0.4, -0.7), l))
        boundary_err = max(boundary_err, abs(t - math.pi / l))
    ok = mismatches == 0 and len(G) >= 1000 and boundary_err <= 1e-9
    return CriterionResult(
        "AC-2 criterion/root equivalence",
        ok,
        f"{mismatches} mismatches over {len(G)} samples ({int(finite.sum())} finite), rigid-rotation |t*-pi/l|={boundary_err:.1e}",
        "0 mismatches over >= 1000 samples, boundary family to 1e-9",
    )


def ac3_riccati(cfg: VerifyConfig) -> CriterionResult:
    field_ = make_vortex(VORTEX)
    l = VORTEX.l
    rep = ga.global_scan(field_, l, REFERENCE_WINDOW, REFERENCE_RESOLUTION, workers=cfg.threads)
    p = rep.location
    points = [p, (-p[0], -p[1])]
    rng = np.random.default_rng(cfg.seed + 1)
    while len(points) < 52:
        q = tuple(rng.uniform(-3.0, 3.0, 2))
        t = ga.blowup_time(field_, q, l)
        k = ga.k_coefficients(field_, q, l)
        if t is not None and not k.degenerate:
            points.append(q)
    G = np.array([[float(c) for c in field_.grad(*q)] for q in points])
    ts = np.array([0.9 * ga.blowup_time(field_, q, l) for q in points])
    Q_ode = ga.riccati_integrate_many(G, l, ts, dt=1e-4)
    worst = 0.0
    for q, t, qo in zip(points, ts, Q_ode):
        qc = ga.q_closed_form(ga.k_coefficients(field_, q, l), t).as_array().ravel()
        worst = max(worst, float(np.linalg.norm(qc - qo) / np.linalg.norm(qo)))

    f_worst, used = 0.0, 0
    while used < cfg.n_random:
        g = rng.normal(scale=1.5, size=4)
        l2, t = rng.uniform(0.2, 3.0), rng.uniform(0.0, 10.0)
        k = ga.k_coefficients_from_grad(g, l2)
        if k.degenerate or abs(k.D0) <= 1e-8:
            continue
        F = float(ga.envelope_from_grad(*g, l2, t))
        R0, B, C = ga.envelope_coefficients(k.D0, k.d, k.xi, l2)
        rel = abs(F - l2 * l2 * k.D0 * ga.det_qtilde(k, t)) / (abs(R0) + abs(B) + abs(C))
        f_worst = max(f_worst, rel)
        used += 1
    ok = worst <= 1e-5 and f_worst <= 1e-10
    return CriterionResult(
        "AC-3 Riccati oracle",
        ok,
        f"max rel Frobenius err={worst:.2e} over {len(points)} points; max F-identity err={f_worst:.2e} over {used} tuples",
        "Frobenius <= 1e-5 at 0.9 t*; F identity <= 1e-10",
    )


def ac4_sigma_convergence(cfg: VerifyConfig) -> CriterionResult:
    t0 = time.perf_counter()
    sigmas = sorted({float(s) for s in cfg.sigmas}, reverse=True)
    sweep = sr.sigma_sweep(
        make_vortex(VORTEX), make_gaussian_weight(), VORTEX.l, SWEEP_TIME, SWEEP_TARGET, sigmas, sr.QuadratureSpec()
    )
    errs = [p.error for p in sweep]
    elapsed = time.perf_counter() - t0
    ok = all(math.isfinite(e) for e in errs) and all(b < a for a, b in zip(errs, errs[1:])) and elapsed < 60.0
    return CriterionResult(
        "AC-4 sigma->0 convergence",
        ok,
        ", ".join(f"sigma={s:g}: {e:.3e}" for s, e in zip(sigmas, errs)),
        "finite, strictly decreasing as sigma decreases, < 60 s",
        details={"errors": errs, "sigmas": sigmas},
    )


def ac5_mc_agreement(cfg: VerifyConfig) -> CriterionResult:
    t0 = time.perf_counter()
    field_, f0 = make_vortex(VORTEX), make_gaussian_weight()
    spec = sr.QuadratureSpec(sigma=cfg.mc_sigma)
    quad = sr.evaluate_hat(field_, f0, VORTEX.l, SWEEP_TIME, SWEEP_TARGET, spec)
    spec2 = sr.QuadratureSpec(sigma=cfg.mc_sigma, n_per_axis=2 * spec.n_per_axis)
    quad2 = sr.evaluate_hat(field_, f0, VORTEX.l, SWEEP_TIME, SWEEP_TARGET, spec2)
    quad_change = max(abs(a - b) / (1.0 + abs(a)) for a, b in zip(quad, quad2))
    est = sr.mc_oracle(
        field_, f0, VORTEX.l, SWEEP_TIME, SWEEP_TARGET, cfg.mc_sigma, cfg.n_paths, cfg.mc_dt,
        seed=cfg.seed, workers=cfg.threads,
    )
    du, dv = abs(est.u_hat - quad[0]), abs(est.v_hat - quad[1])
    tol_u, tol_v = 3 * est.stderr_u + 0.02, 3 * est.stderr_v + 0.02
    elapsed = time.perf_counter() - t0
    ok = du <= tol_u and dv <= tol_v and quad_change <= cfg.quad_tol and elapsed < 120.0
    return CriterionResult(
        "AC-5 MC/quadrature agreement",
        ok,
        f"|du|={du:.4f} (tol {tol_u:.4f}), |dv|={dv:.4f} (tol {tol_v:.4f}), ess={est.ess:.0f}, "
        f"quadrature self-change={quad_change:.1e}",
        f"3*stderr + 0.02 per component; quadrature doubling <= {cfg.quad_tol:g}; < 120 s",
        details={"quad": quad, "mc": (est.u_hat, est.v_hat), "stderr": (est.stderr_u, est.stderr_v)},
    )


def ac6_identities(cfg: VerifyConfig) -> CriterionResult:
    rng = np.random.default_rng(cfg.seed + 2)
    f0 = make_gaussian_weight((0.3, -0.2), 1.3)
    const_err = 0.0
    for c_u, c_v, l, t in [(1.0, 0.0, 1.0, 1.0), (-0.7, 0.4, 2.0, 0.37), (0.2, 1.1, 0.5, 3.0)]:
        fc = make_constant(c_u, c_v)
        uh, vh = sr.evaluate_hat(fc, f0, l, t, (0.4, -1.2), sr.QuadratureSpec(sigma=0.3))
        ue, ve = flow.rotate_velocity(c_u, c_v, t, l)
        const_err = max(const_err, abs(uh - ue), abs(vh - ve))

    vortex = make_vortex(VORTEX)
    trip = 0.0
    for _ in range(100):
        s = rng.uniform(-2.5, 2.5, 2)
        t = rng.uniform(0.0, 1.5)
        st = flow.advance(vortex, s, t, 1.0)
        back = flow.backtrace(vortex, st.position, t, 1.0)
        trip = max(trip, math.hypot(back[0] - s[0], back[1] - s[1]))

    fi = 0.0
    for _ in range(20):
        s = rng.uniform(-2.5, 2.5, 2)
        l = rng.uniform(0.3, 3.0)
        states = flow.trajectory(vortex, s, l, 10.0, 50)
        c1 = [st.y - st.u / l for st in states]
        c2 = [st.x + st.v / l for st in states]
        fi = max(fi, max(abs(c - c1[0]) for c in c1) + max(abs(c - c2[0]) for c in c2))

    f0_err = 0.0
    G, ls = _random_gradients(rng, 200)
    for g, l in zip(G, ls):
        D0, _, xi = ga.invariants(*g)
        # F(0) cancels 2 D0 + l xi against itself, so rounding scales with those terms
        scale = 2.0 * abs(D0) + l * l + l * abs(xi)
        f0_err = max(f0_err, abs(float(ga.envelope_from_grad(*g, l, 0.0)) - l * l) / scale)
    zero_err = max(abs(ga.criterion_delta(zero_field(), (1.0, 2.0), l) + l * l) for l in (0.5, 1.0, 3.0))
    ok = const_err <= 1e-12 and trip <= 1e-10 and fi <= 1e-12 and f0_err <= 8 * EPS and zero_err == 0.0
    return CriterionResult(
        "AC-6 exactness and identities",
        ok,
        f"constant-field={const_err:.1e}, round trip={trip:.1e}, first integrals={fi:.1e}, "
        f"F(0)-l^2 rel={f0_err:.1e}, zero-field delta+l^2={zero_err:.1e}",
        "1e-12, 1e-10, 1e-12, 8 eps of term scale, exact",
    )


CRITERIA = {
    "AC-1": ac1_blowup_time,
    "AC-2": ac2_equivalence,
    "AC-3": ac3_riccati,
    "AC-4": ac4_sigma_convergence,
    "AC-5": ac5_mc_agreement,
    "AC-6": ac6_identities,
}


def run_criterion(name: str, cfg: VerifyConfig | None = None) -> CriterionResult:
    cfg = cfg or VerifyConfig()
    return _timed(lambda: CRITERIA[name](cfg))


def run_all(cfg: VerifyConfig | None = None, names: Sequence[str] | None = None) -> list[CriterionResult]:
    cfg = cfg or VerifyConfig()
    cfg.lint()
    return [run_criterion(n, cfg) for n in (names or CRITERIA)]
