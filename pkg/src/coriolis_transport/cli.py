"""``coriolis-transport``: file-based driver for the library.

Configuration is a flat ``key = value`` file.  Values are layered as
built-in defaults, then ``--profile``, then ``--config``, then ``--set``,
then the dedicated ``--seed/--threads/--out`` flags.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import flow
from . import gradient_analysis as ga
from . import stochastic_rep as sr
from .convention import RotationConvention, use_convention
from .errors import (
    AtSingularity,
    ConfigError,
    EmptyWindow,
    InsufficientSamples,
    InvalidParams,
    NoConvergence,
    NotFound,
    VanishingDenominator,
)
from .fields import PRESET_KEYS, PRESETS, ScalarField2, VectorField2, make_gaussian_weight, make_preset
from .io import sha256_file, write_grid_csv, write_json, write_rows_csv
from .verification import VerifyConfig, run_all

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DOMAIN, EXIT_SOLVER = 0, 1, 2, 3, 4

DEFAULTS: dict[str, str] = {
    "preset": "vortex",
    "B0": "-1.5",
    "mu": "1",
    "a": "0.5",
    "c_u": "0",
    "c_v": "0",
    "amplitude": "1",
    "width": "1",
    "l": "1",
    "window": "-3,3,-3,3",
    "resolution": "201",
    "sigma": "0.1",
    "sigmas": "0.4,0.2,0.1,0.05",
    "seed": "0",
    "threads": "1",
    "output_dir": "out",
    "convention": RotationConvention.MAIN1.value,
    "pairing": "printed",
    "center_strategy": "target-backtrace",
    "radius_mult": "5",
    "n_per_axis": "129",
    "f0_center": "0,0",
    "f0_width": "1",
    "quad_tol": repr(sr.QUAD_TOL),
    "n_paths": "200000",
    "mc_sigma": "0.2",
    "mc_dt": "0.001",
}

PROFILES: dict[str, dict[str, str]] = {
    "paper-fig1": {
        "preset": "vortex",
        "l": "1",
        "mu": "1",
        "B0": "-1.5",
        "sigma": "0.1",
        "window": "-3,3,-3,3",
        "resolution": "201",
    },
}
PROFILE_NOTES = {
    "paper-fig1": "window and resolution are stand-ins fixed here for reproducibility",
}


def _floats(text: str, n: int | None, key: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{key}: values must be finite")
    return vals


def _float(text: str, key: str) -> float:
    return _floats(text, 1, key)[0]


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


@dataclass
class RunConfig:
    raw: dict[str, str]
    profile: str | None = None

    def get(self, key: str) -> str:
        return self.raw[key]

    def float(self, key: str) -> float:
        return _float(self.raw[key], key)

    def int(self, key: str) -> int:
        return _int(self.raw[key], key)

    @property
    def l(self) -> float:
        l = self.float("l")
        if not l > 0:
            raise ConfigError(f"l must be positive, got {l}")
        return l

    @property
    def window(self) -> tuple[float, ...]:
        return _floats(self.raw["window"], 4, "window")

    @property
    def resolution(self):
        vals = _floats(self.raw["resolution"], None, "resolution")
        if len(vals) not in (1, 2) or any(v != int(v) for v in vals):
            raise ConfigError("resolution: one or two integers")
        return int(vals[0]) if len(vals) == 1 else (int(vals[0]), int(vals[1]))

    @property
    def threads(self) -> int:
        n = self.int("threads")
        if n < 1:
            raise ConfigError("threads must be at least 1")
        return n

    def field(self) -> VectorField2:
        name = self.raw["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        params = {k: self.float(k) for k in PRESET_KEYS[name]}
        return make_preset(name, **params)

    def weight(self) -> ScalarField2:
        w = self.float("f0_width")
        if not w > 0:
            raise ConfigError("f0_width must be positive")
        return make_gaussian_weight(_floats(self.raw["f0_center"], 2, "f0_center"), w)

    def quadrature(self, sigma: float | None = None) -> sr.QuadratureSpec:
        return sr.QuadratureSpec(
            sigma=self.float("sigma") if sigma is None else sigma,
            radius_mult=self.float("radius_mult"),
            n_per_axis=self.int("n_per_axis"),
            center_strategy=self.raw["center_strategy"],
            pairing=self.raw["pairing"],
        )

    def convention(self) -> RotationConvention:
        try:
            return RotationConvention.parse(self.raw["convention"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def verify_config(self) -> VerifyConfig:
        return VerifyConfig(
            sigmas=_floats(self.raw["sigmas"], None, "sigmas"),
            seed=self.int("seed"),
            quad_tol=self.float("quad_tol"),
            n_paths=self.int("n_paths"),
            mc_sigma=self.float("mc_sigma"),
            mc_dt=self.float("mc_dt"),
            threads=self.threads,
        )

    def validate(self) -> None:
        """Parse every shared key once so malformed values fail before any work starts."""
        self.l, self.window, self.resolution, self.threads, self.int("seed")
        self.field()
        self.convention()

    def text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw = dict(DEFAULTS)
    if args.profile is not None:
        if args.profile not in PROFILES:
            raise ConfigError(f"unknown profile {args.profile!r}; choose from {sorted(PROFILES)}")
        raw.update(PROFILES[args.profile])
    if args.config is not None:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        raw.update(parse_config_text(text, args.config))
    for item in args.set or ():
        raw.update(parse_config_text(item, "--set"))
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.threads is not None:
        raw["threads"] = str(args.threads)
    if args.out is not None:
        raw["output_dir"] = args.out
    return RunConfig(raw, args.profile)


class Run:
    """Collects outputs and writes ``config.txt`` and ``manifest.json`` at the end."""

    def __init__(self, command: str, argv: Sequence[str], cfg: RunConfig):
        self.command = command
        self.argv = list(argv)
        self.cfg = cfg
        self.out = Path(cfg.raw["output_dir"])
        self.outputs: list[Path] = []
        self.t0 = time.perf_counter()
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def finish(self, status: int) -> int:
        (self.out / "config.txt").write_text(self.cfg.text(), encoding="utf-8")
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config": dict(sorted(self.cfg.raw.items())),
            "profile": self.cfg.profile,
            "profile_note": PROFILE_NOTES.get(self.cfg.profile or ""),
            "version": __version__,
            "convention": self.cfg.raw["convention"],
            "exit_code": status,
            "wall_time_s": time.perf_counter() - self.t0,
            "outputs": [{"path": p.name, "sha256": sha256_file(p)} for p in self.outputs if p.exists()],
        }
        write_json(self.out / "manifest.json", manifest)
        return status


def _report_points(rep: ga.SingularityReport) -> dict:
    return {
        "t_star": rep.t_star,
        "location": rep.location,
        "singular_points": [list(p) for p in rep.points],
        "n_singular_points": len(rep.points),
        "degenerate": rep.degenerate,
    }


def cmd_criterion(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    field, l = cfg.field(), cfg.l
    rep = ga.global_scan(field, l, cfg.window, cfg.resolution, workers=cfg.threads)
    ga.write_contour_csv(run.path("criterion.csv"), rep)
    g = rep.grid
    i_min = np.unravel_index(np.argmin(g.delta), g.delta.shape)
    i_max = np.unravel_index(np.argmax(g.delta), g.delta.shape)
    boundary = ga.on_boundary(field.grad(*np.meshgrid(g.xs, g.ys)), l, g.delta)
    summary = {
        "preset": cfg.raw["preset"],
        "l": l,
        "window": list(cfg.window),
        "min_delta": float(g.delta[i_min]),
        "argmin_delta": [float(g.xs[i_min[1]]), float(g.ys[i_min[0]])],
        "max_delta": float(g.delta[i_max]),
        "boundary_cells": int(np.sum(boundary)),
        "boundary_everywhere": bool(np.all(boundary)),
        "location_boundary": rep.boundary,
        **_report_points(rep),
    }
    if args.stabilise:
        try:
            cor = ga.corollary_l(field, cfg.window, cfg.resolution, workers=cfg.threads)
            summary["stabilising_l"] = cor.l
            summary["stabilising_l_touching_zero"] = list(cor.touching_zero)
        except NotFound as exc:
            summary["stabilising_l"] = None
            summary["stabilising_l_note"] = str(exc)
    write_json(run.path("summary.json"), summary)
    t = "none" if rep.t_star is None else f"{rep.t_star:.6f}"
    print(f"min delta {summary['min_delta']:.6g}, t* {t}, {len(rep.points)} singular point(s)")
    return EXIT_OK


def cmd_blowup(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    p = _floats(args.point, 2, "--point")
    rep = ga.analyze_point(cfg.field(), p, cfg.l)
    k = ga.k_coefficients(cfg.field(), p, cfg.l)
    payload = {
        "point": list(p),
        "l": cfg.l,
        "delta": rep.delta,
        "t_star": rep.t_star,
        "boundary": rep.boundary,
        "D0": k.D0,
        "divergence": k.d,
        "vorticity": k.xi,
    }
    write_json(run.path("blowup.json"), payload)
    print(f"delta {rep.delta:.6g}, t* {'none' if rep.t_star is None else format(rep.t_star, '.6f')}")
    return EXIT_OK


def _grid_axes(cfg: RunConfig):
    xs, ys = ga.window_axes(cfg.window, cfg.resolution)
    return xs, ys


def cmd_solve(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    field, l = cfg.field(), cfg.l
    if args.t == "t-star":
        rep = ga.global_scan(field, l, cfg.window, cfg.resolution, workers=cfg.threads)
        if rep.t_star is None:
            raise NotFound("no blow-up in the window, so --t t-star is undefined")
        t = rep.t_star
    else:
        t = _float(args.t, "--t")
        if not t >= 0:
            raise ConfigError(f"--t must be non-negative, got {t}")
    xs, ys = _grid_axes(cfg)
    if args.mode == "characteristics":
        u, v, ok = flow.solve_grid(field, xs, ys, t, l)
        header = ["x", "y", "u", "v"]
    else:
        spec = cfg.quadrature()
        if t == 0:
            X, Y = np.meshgrid(xs, ys)
            u, v = field.eval(X, Y)
        else:
            u, v = sr.evaluate_hat_grid(field, cfg.weight(), l, t, xs, ys, spec, workers=cfg.threads)
        u, v = np.broadcast_to(u, (len(ys), len(xs))), np.broadcast_to(v, (len(ys), len(xs)))
        ok = np.isfinite(u) & np.isfinite(v)
        header = ["x", "y", "u_hat", "v_hat"]
        meta = {**spec.metadata(), "t": t, "l": l, "f0_center": list(_floats(cfg.raw["f0_center"], 2, "f0_center")),
                "f0_width": cfg.float("f0_width"), "edge_tol": sr.EDGE_TOL}
        write_json(run.path("quadrature.json"), meta)
    write_grid_csv(run.path("solution.csv"), header, xs, ys, u, v)
    if not ok.all():
        iy, ix = np.nonzero(~ok)
        write_rows_csv(run.path("failures.csv"), ["x", "y"], zip(xs[ix], ys[iy]))
        print(f"solver failed at {len(ix)} of {ok.size} cells; see failures.csv", file=sys.stderr)
        for x, y in list(zip(xs[ix], ys[iy]))[:10]:
            print(f"  ({x:.6g}, {y:.6g})", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {len(xs)}x{len(ys)} grid at t={t:g} ({args.mode})")
    return EXIT_OK


def cmd_trajectories(run: Run, args: argparse.Namespace) -> int:
    cfg = run.cfg
    field, l = cfg.field(), cfg.l
    if args.n_samples < 2:
        raise ConfigError("--n-samples must be at least 2")
    starts = [_floats(s, 2, "--start") for s in args.start or ()]
    rep = ga.global_scan(field, l, cfg.window, cfg.resolution, workers=cfg.threads)
    t_end = args.t_end
    if args.singular:
        if rep.t_star is None:
            raise NotFound("no blow-up in the window; --singular has nothing to follow")
        p = rep.location
        mirror = min(rep.points, key=lambda q: math.hypot(q[0] + p[0], q[1] + p[1]))
        starts += [p] if mirror == p else [p, mirror]
        t_end = rep.t_star if t_end is None else t_end
    if not starts:
        raise ConfigError("give at least one --start x,y or use --singular")
    if t_end is None or not (math.isfinite(t_end) and t_end >= 0):
        raise ConfigError("--t-end must be a finite non-negative time")
    for i, s in enumerate(starts):
        flow.write_trajectory_csv(run.path(f"trajectory_{i:03d}.csv"), flow.trajectory(field, s, l, t_end, args.n_samples))
    endpoints = []
    if rep.t_star is not None:
        for q in rep.points:
            st = flow.advance(field, q, rep.t_star, l)
            endpoints.append({"start": list(q), "end": [st.x, st.y]})
    write_json(
        run.path("singular.json"),
        {"t_star": rep.t_star, "t_end": t_end, "starts": [list(s) for s in starts], "singular": endpoints},
    )
    print(f"wrote {len(starts)} trajectory file(s) to t={t_end:g}")
    return EXIT_OK


def cmd_verify(run: Run, args: argparse.Namespace) -> int:
    vcfg = run.cfg.verify_config()
    vcfg.lint()
    with use_convention(run.cfg.convention()):
        results = run_all(vcfg, args.only or None)
    for r in results:
        print(r.line())
    write_json(
        run.path("verify.json"),
        [{"name": r.name, "passed": r.passed, "measured": r.measured, "tolerance": r.tolerance} for r in results],
    )
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS: dict[str, Callable[[Run, argparse.Namespace], int]] = {
    "criterion": cmd_criterion,
    "blowup": cmd_blowup,
    "solve": cmd_solve,
    "trajectories": cmd_trajectories,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file")
    common.add_argument("--profile", help=f"named defaults ({', '.join(PROFILES)})")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="coriolis-transport", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("criterion", parents=[common], help="criterion and blow-up time over the window")
    p.add_argument("--stabilise", action="store_true", help="also report the smallest stabilising l")

    p = sub.add_parser("blowup", parents=[common], help="criterion and blow-up time at one point")
    p.add_argument("--point", required=True, metavar="X,Y")

    p = sub.add_parser("solve", parents=[common], help="solution grid at time t")
    p.add_argument("--t", required=True, help="time, or 't-star' for the earliest blow-up time in the window")
    p.add_argument("--mode", choices=("characteristics", "stochastic"), default="characteristics")

    p = sub.add_parser("trajectories", parents=[common], help="particle paths")
    p.add_argument("--start", action="append", metavar="X,Y")
    p.add_argument("--t-end", type=float)
    p.add_argument("--n-samples", type=int, default=201)
    p.add_argument("--singular", action="store_true", help="follow the earliest-blow-up points to t*")

    p = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    p.add_argument("--only", action="append", choices=("AC-1", "AC-2", "AC-3", "AC-4", "AC-5", "AC-6"))
    return parser


EXIT_FOR = [
    ((ConfigError, InvalidParams), EXIT_CONFIG),
    ((EmptyWindow, AtSingularity, NotFound), EXIT_DOMAIN),
    ((NoConvergence, VanishingDenominator, InsufficientSamples), EXIT_SOLVER),
]


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    run = None
    try:
        cfg = resolve_config(args)
        cfg.validate()
        convention = cfg.convention()
        run = Run(args.command, argv, cfg)
        with use_convention(convention):
            status = COMMANDS[args.command](run, args)
    except Exception as exc:
        for types, code in EXIT_FOR:
            if isinstance(exc, types):
                print(f"error: {exc}", file=sys.stderr)
                return run.finish(code) if run is not None else code
        raise
    return run.finish(status)


if __name__ == "__main__":
    sys.exit(main())
