"""Command-line front end: solve, verify, simulate, convergence, export-figures.

Exit codes: 0 success, 1 verification failed, 2 malformed config or
arguments, 3 missing artifacts, 4 solver failure (a partial report is
written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade import (
    CascadeConfig,
    RefineConfig,
    ValueSurface,
    assemble_surface,
    boundary_csv,
    cauchy_differences,
    read_surface_csv,
    refine_until_converged,
    solve_cascade,
    surface_csv,
)
from .errors import CascadeError, ConsistencyError, ConvergenceError, ParameterError, TruncationError
from .model import ModelParams, REFERENCE_PARAMS, Regime, classify_regime, g_value
from .simulate import SimConfig, estimate_value, parse_rule, path_streams, simulate_path, trace_csv
from .strategy import Strategy
from .verification import VerifyConfig, check_convergence, coarse_companion, cross_validate_mc, verify_surface

OUT_ENV = "DIVRATCHET_OUT"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING, EXIT_SOLVER = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class CascadeSection:
    n: int = 64
    h: float = 2e-3
    x_max: float | None = None
    tol_gap: float = 1e-10
    tol_invariant: float = 1e-8

    def build(self) -> CascadeConfig:
        return CascadeConfig(n=self.n, h=self.h, x_max=self.x_max, tol_gap=self.tol_gap,
                             tol_invariant=self.tol_invariant)


@dataclass(frozen=True)
class RefineSection:
    n0: int = 32
    h0: float = 4e-3
    max_steps: int = 3
    tol_conv: float = 1e-4
    tol_boundary: float = 5e-3


@dataclass(frozen=True)
class SimSection:
    dt: float = 1e-3
    t_horizon: float = 200.0
    paths: int = 100_000
    seed: int = 0
    antithetic: bool = False
    bridge_correction: bool = True
    workers: int = 1
    x0: float = 1.0
    c0: float = 0.1

    def build(self) -> SimConfig:
        return SimConfig(dt=self.dt, t_horizon=self.t_horizon, n_paths=self.paths, seed=self.seed,
                         antithetic=self.antithetic, bridge_correction=self.bridge_correction)


@dataclass(frozen=True)
class VerifySection:
    margin: float | None = None
    tol_resid: float = 1e-6
    tol_fit: float = 1e-4
    experimental: bool = False

    def build(self) -> VerifyConfig:
        return VerifyConfig(margin=self.margin, tol_resid=self.tol_resid, tol_fit=self.tol_fit,
                            experimental=self.experimental)


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = REFERENCE_PARAMS
    cascade: CascadeSection = CascadeSection()
    refine: RefineSection = RefineSection()
    sim: SimSection = SimSection()
    verify: VerifySection = VerifySection()
    out: str = "out"
    formats: tuple[str, ...] = ("csv", "json")

    def __post_init__(self):
        tols = [self.cascade.tol_gap, self.cascade.tol_invariant, self.refine.tol_conv,
                self.refine.tol_boundary, self.verify.tol_resid, self.verify.tol_fit]
        if any(not (t > 0) for t in tols):
            raise ParameterError("all tolerances must be positive")
        if self.sim.paths < 1:
            raise ParameterError(f"sim.paths must be >= 1, got {self.sim.paths}")
        if self.sim.workers < 1:
            raise ParameterError("sim.workers must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["formats"] = list(self.formats)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        sections = {"model": ModelParams, "cascade": CascadeSection, "refine": RefineSection,
                    "sim": SimSection, "verify": VerifySection}
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                kwargs[key] = _section(sections[key], value, key)
            elif key == "out":
                if not isinstance(value, str):
                    raise ConfigError("out must be a string")
                kwargs[key] = value
            elif key == "formats":
                if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                    raise ConfigError("formats must be a list of strings")
                kwargs[key] = tuple(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if "model" not in kwargs:
            kwargs["model"] = REFERENCE_PARAMS
        try:
            return cls(**kwargs)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)


def _section(kind, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be an object")
    fields = {f.name: f for f in dataclasses.fields(kind)}
    unknown = set(value) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    clean = {}
    for key, v in value.items():
        if isinstance(v, bool) or v is None:
            clean[key] = v
        elif isinstance(v, (int, float)):
            if fields[key].type in ("int", int):
                if isinstance(v, float) and not v.is_integer():
                    raise ConfigError(f"{name}.{key} must be an integer, got {v!r}")
                clean[key] = int(v)
            else:
                clean[key] = float(v)
        else:
            raise ConfigError(f"{name}.{key} must be a number, boolean or null, got {v!r}")
    try:
        return kind(**clean)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


# --- helpers -------------------------------------------------------------------

def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV) or cfg.out)


def _load_config(args) -> RunConfig:
    if not args.config:
        return RunConfig()
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return RunConfig.from_json(path.read_text())


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _err(msg: str):
    print(f"divratchet: {msg}", file=sys.stderr)


def _g_samples_csv(p: ModelParams, x_max: float, count: int = 201) -> str:
    xs = np.linspace(0.0, x_max, count)
    rows = ["x,g"] + [f"{x:.12g},{g:.12g}" for x, g in zip(xs, g_value(p, xs))]
    return "\n".join(rows) + "\n"


def _load_surface(out: Path, p: ModelParams, tol_gap: float) -> ValueSurface:
    text = (out / "surface.csv").read_text()
    return assemble_surface(read_surface_csv(text, p, tol_gap))


# --- commands ------------------------------------------------------------------

def cmd_solve(args, cfg: RunConfig) -> int:
    p = cfg.model
    out = _out_dir(args, cfg)
    regime = classify_regime(p)
    try:
        cs = solve_cascade(p, cfg.cascade.build())
        surface = assemble_surface(cs)
        coarse = coarse_companion(surface) if cs.n >= 2 and regime is Regime.COMPLICATED else None
    except (CascadeError, ConsistencyError, TruncationError, ConvergenceError, ParameterError) as exc:
        _err(f"solve failed: {type(exc).__name__}: {exc}")
        partial = {"status": "error", "stage": "solve", "error": type(exc).__name__, "message": str(exc),
                   "params": p.to_dict(), "level": getattr(exc, "level", None),
                   "residual": _num(getattr(exc, "residual", None))}
        _write(out / "report.json", json.dumps(partial, indent=2, sort_keys=True) + "\n")
        return EXIT_SOLVER
    _write(out / "surface.csv", surface_csv(surface))
    _write(out / "boundary.csv", boundary_csv(surface))
    _write(out / "strategy.json", Strategy.from_surface(surface, 0.0).to_json() + "\n")
    conv = {"n": cs.n, "h": cs.grid.h, "x_max": cs.grid.x_max, "regime": regime.value,
            "residual_max": float(np.max(cs.residuals)), "iterations": int(np.sum(cs.iterations)),
            "X_c_bar": float(surface.boundary(p.c_bar)), "X_0": float(surface.boundary(0.0))}
    if coarse is not None:
        dv, dx = cauchy_differences(coarse, surface)
        conv.update(coarse_n=coarse.cascade.n, coarse_h=coarse.grid.h, v_diff=dv, x_diff=dx)
    _write(out / "convergence.json", json.dumps(conv, indent=2, sort_keys=True) + "\n")
    if regime is Regime.SIMPLE:
        print("simple regime: V = g, pay c̄ always")
        _write(out / "g_samples.csv", _g_samples_csv(p, cs.grid.x_max))
    else:
        print(f"solved n={cs.n} h={cs.grid.h:g} x_max={cs.grid.x_max:g}: "
              f"X(0)={conv['X_0']:.6f} X(c_bar)={conv['X_c_bar']:.6f}")
    print(f"wrote artifacts to {out}")
    return EXIT_OK


def _num(x):
    return None if x is None or not math.isfinite(x) else float(x)


def cmd_verify(args, cfg: RunConfig) -> int:
    p = cfg.model
    out = _out_dir(args, cfg)
    if not (out / "surface.csv").is_file():
        _err(f"missing artifact {out / 'surface.csv'} (run solve first)")
        return EXIT_MISSING
    vcfg = dataclasses.replace(
        cfg.verify.build(),
        **{k: v for k, v in (("margin", args.margin), ("tol_resid", args.tol_resid), ("tol_fit", args.tol_fit))
           if v is not None},
    )
    try:
        surface = _load_surface(out, p, cfg.cascade.tol_gap)
    except (ParameterError, TruncationError, ConsistencyError, ValueError) as exc:
        report = {"summary": "fail", "checks": [{"name": "artifact.surface", "passed": False,
                                                 "detail": f"{type(exc).__name__}: {exc}"}]}
        _write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"FAIL  artifact.surface  {exc}")
        return EXIT_FAIL
    extra = []
    if args.mc:
        sim = cfg.sim
        scfg = SimConfig(dt=args.dt or sim.dt, t_horizon=sim.t_horizon, n_paths=args.paths or sim.paths,
                         seed=sim.seed if args.seed is None else args.seed, antithetic=sim.antithetic,
                         bridge_correction=sim.bridge_correction)
        x0 = sim.x0 if args.x0 is None else args.x0
        c0 = sim.c0 if args.c0 is None else args.c0
        strategy = Strategy.from_surface(surface, c0)
        extra = cross_validate_mc(surface, strategy, [(x0, c0)], scfg, workers=sim.workers)
    report = verify_surface(surface, vcfg, extra=extra)
    _write(out / "report.json", report.to_json())
    print(report.to_text(), end="")
    return EXIT_OK if report.summary else EXIT_FAIL


def cmd_simulate(args, cfg: RunConfig) -> int:
    p = cfg.model
    out = _out_dir(args, cfg)
    sim = cfg.sim
    try:
        scfg = SimConfig(dt=args.dt if args.dt is not None else sim.dt, t_horizon=sim.t_horizon,
                         n_paths=args.paths if args.paths is not None else sim.paths,
                         seed=args.seed if args.seed is not None else sim.seed,
                         antithetic=sim.antithetic, bridge_correction=sim.bridge_correction)
        rule = parse_rule(args.rule) if args.rule else None
    except ParameterError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if rule is None:
        path = Path(args.strategy) if args.strategy else out / "strategy.json"
        if not path.is_file():
            _err(f"missing strategy artifact {path} (run solve or pass --rule constant:<c>)")
            return EXIT_MISSING
        try:
            rule = Strategy.from_json(path.read_text())
        except ParameterError as exc:
            _err(str(exc))
            return EXIT_CONFIG
    x0 = sim.x0 if args.x0 is None else args.x0
    c0 = sim.c0 if args.c0 is None else args.c0
    try:
        res = estimate_value(p, rule, x0, c0, scfg, workers=sim.workers)
        traces = []
        if args.trace:
            for k, rng in enumerate(path_streams(scfg.seed, args.trace)):
                traces.append(simulate_path(p, rule, x0, c0, scfg, rng, trace=True).trace)
    except ParameterError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    _write(out / "simresult.json", res.to_json())
    for k, tr in enumerate(traces):
        _write(out / f"trace_{k:03d}.csv", trace_csv(tr))
    print(f"{res.rule} x0={x0:g} c0={c0:g}: mean={res.value_mean:.6f} se={res.value_se:.2e} "
          f"ruin={res.ruin_fraction:.4f} tail<={res.tail_bound:.2e}")
    return EXIT_OK


def cmd_convergence(args, cfg: RunConfig) -> int:
    p = cfg.model
    out = _out_dir(args, cfg)
    r = cfg.refine
    rcfg = RefineConfig(n0=r.n0, h0=r.h0, max_steps=r.max_steps, tol_conv=r.tol_conv,
                        tol_boundary=r.tol_boundary, x_max=cfg.cascade.x_max,
                        cascade=cfg.cascade.build())
    try:
        surface, report = refine_until_converged(p, rcfg)
    except (CascadeError, ConsistencyError, TruncationError, ConvergenceError) as exc:
        _err(f"refinement failed: {type(exc).__name__}: {exc}")
        _write(out / "convergence.json", json.dumps({"status": "error", "message": str(exc)}, indent=2) + "\n")
        return EXIT_SOLVER
    d = report.to_dict()
    d["checks"] = [dataclasses.asdict(c) for c in check_convergence(report, surface.grid.h)]
    _write(out / "convergence.json", json.dumps(d, indent=2, sort_keys=True) + "\n")
    for run in report.runs:
        extra = f" dv={run['v_diff']:.3e} dX={run['x_diff']:.3e}" if "v_diff" in run else ""
        print(f"n={run['n']:4d} h={run['h']:.2e} X(c_bar)={run['X_c_bar']:.6f}{extra}")
    print("converged" if report.converged else "not converged (refinement cap reached)")
    return EXIT_OK


def cmd_export_figures(args, cfg: RunConfig) -> int:
    """Plot-ready CSVs: g, the value surface, the boundary and the region ``v_x > 1``."""
    p = cfg.model
    out = _out_dir(args, cfg)
    fig = out / "figures"
    try:
        if (out / "surface.csv").is_file():
            surface = _load_surface(out, p, cfg.cascade.tol_gap)
        else:
            surface = assemble_surface(solve_cascade(p, cfg.cascade.build()))
    except (CascadeError, ConsistencyError, TruncationError, ConvergenceError, ParameterError) as exc:
        _err(f"cannot build surface: {exc}")
        return EXIT_SOLVER
    cs = surface.cascade
    x_plot = min(cs.grid.x_max, 10.0)
    _write(fig / "g.csv", _g_samples_csv(p, x_plot))
    _write(fig / "boundary.csv", boundary_csv(surface))
    stride = max(1, int(round(0.05 / cs.grid.h)))
    xs = cs.grid.x[::stride]
    xs = xs[xs <= x_plot]
    lines = ["x,c,v"]
    for i, c in enumerate(cs.levels.c):
        lines += [f"{x:.12g},{c:.12g},{v:.12g}" for x, v in zip(xs, cs.v[i, ::stride][: xs.size])]
    _write(fig / "value.csv", "\n".join(lines) + "\n")
    # per level: first x beyond which v_x <= 1, next to X(c)
    lines = ["c,x_vx_eq_1,X"]
    for i, c in enumerate(cs.levels.c):
        s = np.gradient(cs.v[i], cs.grid.h)
        idx = np.nonzero(s > 1.0)[0]
        x1 = cs.grid.x[idx[-1] + 1] if idx.size and idx[-1] + 1 < cs.grid.nodes else 0.0
        lines.append(f"{c:.12g},{x1:.12g},{surface.boundary(c):.12g}")
    _write(fig / "regions.csv", "\n".join(lines) + "\n")
    print(f"wrote figure data to {fig}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "convergence": cmd_convergence,
    "export-figures": cmd_export_figures,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="divratchet", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--rule", help="constant:<c>; default is the solved strategy")
    ap.add_argument("--strategy", help="strategy JSON (default <out>/strategy.json)")
    ap.add_argument("--x0", type=float)
    ap.add_argument("--c0", type=float)
    ap.add_argument("--paths", type=int)
    ap.add_argument("--dt", type=float)
    ap.add_argument("--trace", type=int, default=0, help="write this many sample-path CSVs")
    ap.add_argument("--mc", action="store_true", help="verify: add the Monte Carlo cross-check")
    ap.add_argument("--margin", type=float)
    ap.add_argument("--tol-resid", type=float)
    ap.add_argument("--tol-fit", type=float)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.paths is not None and args.paths < 1:
        _err(f"--paths must be >= 1, got {args.paths}")
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        _err("--seed must be non-negative")
        return EXIT_CONFIG
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        _err(f"bad config: {exc}")
        return EXIT_CONFIG
    return COMMANDS[args.command](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
