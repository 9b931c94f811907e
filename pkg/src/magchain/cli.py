"""Command-line entry point: ``magchain <subcommand> [--config PATH] ...``.

Exit status is 0 when every tolerance check of the subcommand passes, 1 when
a check fails and 2 for invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .chain import BudgetExceeded, ChainParams, resolve_workers, run
from .circle import center_observable, invariant_density
from .config import ExperimentConfig, load_config
from .experiments import (
    compare,
    covariance_leg,
    diffusion_report,
    equipartition_sweep,
    gamma_report,
    heat_leg,
    regime_scan,
    resolve_gamma,
    _jsonable,
    run_metadata,
    write_json,
    write_profile_csv,
)
from .spectral import diffusion_closed_form


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.budget is not None:
        updates["budget"] = args.budget
    return replace(cfg, **updates) if updates else cfg


def _emit(cfg, name, summary, out_dir=None):
    summary = dict(summary)
    summary["meta"] = run_metadata(cfg)
    out = Path(out_dir or cfg.out_dir)
    write_json(out / f"{name}.json", summary)
    # scalars only; arrays and nested reports live in the JSON file
    brief = {k: v for k, v in _jsonable(summary).items() if isinstance(v, (bool, int, float, str)) or v is None}
    print(json.dumps({"written": str(out / f"{name}.json"), **brief}, indent=2))


def cmd_diffusion(args) -> int:
    rep = diffusion_report(args.omega0)
    print(json.dumps(rep, indent=2))
    if args.out:
        write_json(Path(args.out) / "diffusion.json", rep)
    return 0 if rep["pass"] else 1


def cmd_gamma(args) -> int:
    cfg = _config(args)
    rep = gamma_report(cfg.map_model(), cfg.observable(), cfg.grid_size, center=cfg.obs_center)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    invariant_density(cfg.map_model(), cfg.grid_size).to_csv(out / "density.csv")
    _emit(cfg, "gamma", rep)
    return 0 if rep["agree"] else 1


def cmd_simulate(args) -> int:
    cfg = _config(args)
    fmap = cfg.map_model()
    b = cfg.observable()
    if cfg.obs_center:
        b = center_observable(b, invariant_density(fmap, cfg.grid_size))
    params = ChainParams(cfg.N, cfg.omega0, cfg.eps, cfg.substeps)
    t0 = time.perf_counter()
    try:
        res = run(params, fmap, b, cfg.initial_profile(), cfg.t_macro, cfg.ensemble_size, cfg.seed, budget=cfg.budget)
    except BudgetExceeded as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 1
    out = Path(cfg.out_dir)
    write_profile_csv(out / "simulate.csv", res.t_macro, res.mean, res.stderr)
    total = res.mean.sum(axis=1)
    summary = {
        "t_macro": res.t_macro,
        "rounding": res.rounding,
        "ensemble_size": res.ensemble_size,
        "substeps_per_trajectory": res.substeps_per_trajectory,
        "mean_total_energy": total,
        "workers": resolve_workers(),
        "wall_clock_s": time.perf_counter() - t0,
    }
    _emit(cfg, "simulate", summary)
    return 0


def cmd_covariance(args) -> int:
    cfg = _config(args)
    g = resolve_gamma(cfg)
    profiles = covariance_leg(cfg.N, cfg.omega0, g["gamma_generator"], cfg.initial_profile(), cfg.t_macro, cfg.dt)
    out = Path(cfg.out_dir)
    write_profile_csv(out / "covariance.csv", cfg.t_macro, np.array(profiles))
    _emit(cfg, "covariance", {"gamma": g, "t_macro": cfg.t_macro, "total_energy": [float(p.sum()) for p in profiles]})
    return 0


def cmd_heat(args) -> int:
    cfg = _config(args)
    g = resolve_gamma(cfg)
    gamma = g["gamma_generator"]
    if not gamma > 0:
        print("heat equation needs gamma > 0", file=sys.stderr)
        return 2
    D = diffusion_closed_form(cfg.omega0)
    K = cfg.kmax or 64
    sols = heat_leg(cfg.initial_profile(), cfg.t_macro, D, gamma, K)
    out = Path(cfg.out_dir)
    grid = np.arange(cfg.N) / cfg.N
    write_profile_csv(out / "heat.csv", cfg.t_macro, np.array([s.density(grid) for s in sols]))
    summary = {
        "gamma": g,
        "D": D,
        "heat_rate": D / (2 * gamma),
        "t_macro": cfg.t_macro,
        "measures": [json.loads(s.to_json()) for s in sols],
    }
    _emit(cfg, "heat", summary)
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    summary, tables = compare(cfg)
    out = Path(cfg.out_dir)
    for name, (t, mean, err) in tables.items():
        write_profile_csv(out / f"compare_{name}.csv", t, mean, err)
    _emit(cfg, "compare", summary)
    return 0 if summary["pass"] else 1


def cmd_regimes(args) -> int:
    cfg = _config(args)
    beta = args.beta if args.beta is not None else cfg.beta
    g = resolve_gamma(cfg)
    rep = regime_scan(cfg.N, cfg.omega0, g["gamma_generator"], cfg.initial_profile(), cfg.regime_t, beta, cfg.dt, cfg.kmax)
    rep["gamma"] = g
    _emit(cfg, "regimes", rep)
    return 0 if rep["pass"] else 1


def cmd_equipartition(args) -> int:
    cfg = _config(args)
    g = resolve_gamma(cfg)
    rep = equipartition_sweep(cfg.equipartition_N, cfg.omega0, g["gamma_generator"], cfg.initial_profile(), cfg.equipartition_t, cfg.dt)
    slopes = [s for s in rep["slope"].values() if s is not None]
    rep["pass"] = bool(slopes and max(slopes) <= -0.8 and max(rep["gibbs"]) <= 1e-8)
    rep["gamma"] = g
    _emit(cfg, "equipartition", rep)
    return 0 if rep["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magchain", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--budget", type=int, help="maximum substeps per trajectory for the deterministic leg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diffusion", parents=[common], help="three independent values of D")
    p.add_argument("--omega0", type=float, default=1.0)
    p.set_defaults(func=cmd_diffusion)

    for name, func, text in [
        ("gamma", cmd_gamma, "Green-Kubo and Birkhoff estimates of gamma"),
        ("simulate", cmd_simulate, "deterministic chain ensemble"),
        ("covariance", cmd_covariance, "covariance ODE energy profiles"),
        ("heat", cmd_heat, "exact heat-equation solution"),
        ("compare", cmd_compare, "deterministic vs covariance vs heat equation"),
        ("equipartition", cmd_equipartition, "virial discrepancy N-sweep"),
    ]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
    p = sub.add_parser("regimes", parents=[common], help="sub/super-diffusive time-scale scan")
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_regimes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
