"""Command-line entry points for the whole pipeline.

Subcommands: solve one value function, build a library, synthesize
supervisor data, fit a supervisor model, predict false-positive fractions,
run simulated trials, serve live sessions, and export contour slices.

Exit codes: 0 success, 2 usage, 3 data problem, 4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import asyncio
import os
import sys

import numpy as np

from .dynamics import DubinsParams
from .learning import (
    EmptyFeasibleSetError,
    ExclusionRateError,
    InsufficientDataError,
    SupervisorFit,
    load_fit_doc,
    predicted_fp_fraction,
    save_fit,
    select_value_function,
)
from .reachability import (
    DataFormatError,
    Grid3,
    KeepOutDisk,
    ValueFunction,
    build_library,
    default_grid,
    export_slice,
    load_value_function,
    save_value_function,
    solve_disk,
)
from .simulation import (
    ArenaTooCrowdedError,
    SafeSet,
    WorldConfig,
    conservative_safeset,
    learned_safeset,
    run_trial,
    save_metrics,
    standard_safeset,
)
from .supervisor import (
    SceneGenerationError,
    SupervisorParams,
    collect_interventions,
    read_records,
    write_records,
)

DEFAULT_RADIUS = 2.25

DATA_ERRORS = (DataFormatError, InsufficientDataError, ExclusionRateError,
               EmptyFeasibleSetError, SceneGenerationError,
               ArenaTooCrowdedError, OSError)


class NonConvergenceError(RuntimeError):
    pass


def _parse_grid(text: str) -> Grid3:
    try:
        nx, ny, nt = (int(p) for p in text.split(","))
    except Exception:
        raise ValueError(f"grid must be NX,NY,NT, got {text!r}")
    bound = 15.0
    return Grid3((-bound, -bound, -np.pi), (bound, bound, np.pi),
                 (nx, ny, nt))


def _parse_omegas(text: str) -> list[float]:
    try:
        start, stop, step_ = (float(p) for p in text.split(":"))
    except Exception:
        raise ValueError(f"omegas must be start:stop:step, got {text!r}")
    if step_ <= 0 or stop < start:
        raise ValueError(f"bad omega range {text!r}")
    n = int(round((stop - start) / step_)) + 1
    omegas = [start + i * step_ for i in range(n)]
    return [w for w in omegas if w <= stop + 1e-9]


def _solve(omega: float, radius: float, grid: Grid3 | None) -> ValueFunction:
    vf = solve_disk(KeepOutDisk(0.0, 0.0, radius), grid or default_grid(),
                    DubinsParams(speed=3.0, omega_max=omega))
    if not vf.converged:
        raise NonConvergenceError(
            f"solver did not converge for omega={omega} (residual {vf.residual:.3g})")
    return vf


def _load_library(path: str) -> list[ValueFunction]:
    names = sorted(n for n in os.listdir(path) if n.endswith(".json"))
    if not names:
        raise DataFormatError(f"{path}: no value-function files")
    lib = [load_value_function(os.path.join(path, n)) for n in names]
    lib.sort(key=lambda vf: vf.omega_max)
    return lib


def cmd_solve(args) -> int:
    grid = _parse_grid(args.grid) if args.grid else None
    vf = _solve(args.omega, args.radius, grid)
    save_value_function(vf, args.out)
    print(f"solved omega_max={args.omega} radius={args.radius} "
          f"iterations={vf.iterations} residual={vf.residual:.3g}")
    return 0


def cmd_library(args) -> int:
    omegas = _parse_omegas(args.omegas)
    grid = _parse_grid(args.grid) if args.grid else None
    library = build_library(omegas, args.radius, grid=grid)
    os.makedirs(args.out, exist_ok=True)
    stale = [vf for vf in library if not vf.converged]
    if stale:
        raise NonConvergenceError(
            f"{len(stale)} of {len(library)} library solves did not converge")
    for vf in library:
        name = f"omega_{vf.omega_max:.4f}.json"
        save_value_function(vf, os.path.join(args.out, name))
    print(f"library of {len(library)} value functions in {args.out}")
    return 0


def cmd_synth(args) -> int:
    grid = _parse_grid(args.grid) if args.grid else None
    vf = _solve(args.omega, args.radius, grid)
    params = SupervisorParams(vf, args.mu, args.sigma)
    rng = np.random.default_rng(args.seed)
    records = collect_interventions(params, args.scenes, rng)
    write_records(records, args.out)
    print(f"{len(records)} intervention records in {args.out}")
    return 0


def cmd_fit(args) -> int:
    library = _load_library(args.library)
    records = read_records(args.records)
    reference = None
    if not args.no_prior:
        if not args.true:
            raise ValueError("fit needs --true VF.json unless --no-prior is set")
        reference = load_value_function(args.true)
    fit = select_value_function(library, records, reference=reference)
    save_fit(fit, args.out)
    print(f"selected omega_max={fit.omega_max} mu_hat={fit.mu_hat:.6f} "
          f"sigma_hat={fit.sigma_hat:.6f} records={fit.n_records} "
          f"excluded={fit.n_excluded}")
    return 0


def cmd_predict(args) -> int:
    vf = load_value_function(args.vf)
    records = read_records(args.records)
    fraction = predicted_fp_fraction(vf, args.level, records)
    print(f"{fraction:.6f}")
    return 0


def _simulate_safeset(args, grid: Grid3 | None) -> SafeSet:
    if args.treatment == "standard":
        return standard_safeset(_solve(args.omega, args.radius, grid))
    if args.treatment == "conservative":
        return conservative_safeset(_solve(args.omega, 2.0 * args.radius, grid))
    if not args.fit:
        raise ValueError("--treatment learned needs --fit FIT.json")
    doc = load_fit_doc(args.fit)["selected"]
    vf = _solve(doc["omega_max"], args.radius, grid)
    fit = SupervisorFit(vf=vf, omega_max=doc["omega_max"],
                        mu_hat=doc["mu_hat"], sigma2_hat=doc["sigma2_hat"],
                        log_likelihood=doc["log_likelihood"],
                        per_candidate=[], n_records=0, n_excluded=0)
    return learned_safeset(fit)


def cmd_simulate(args) -> int:
    grid = _parse_grid(args.grid) if args.grid else None
    safeset = _simulate_safeset(args, grid)
    alpha_rule = {"zero": "zero", "mu": "mu",
                  "mu2sigma": "mu_plus_2sigma"}[args.alpha]
    supervisor = None
    sup_flags = (args.sup_omega, args.sup_mu, args.sup_sigma)
    if any(f is not None for f in sup_flags):
        if any(f is None for f in sup_flags):
            raise ValueError("--sup-omega, --sup-mu, --sup-sigma go together")
        supervisor = SupervisorParams(_solve(args.sup_omega, args.radius, grid),
                                      args.sup_mu, args.sup_sigma)
    runs = []
    for i in range(args.trials):
        config = WorldConfig(seed=args.seed + i, trial_ticks=args.ticks,
                             obstacle_radius=args.radius,
                             detection_prob=args.detection)
        runs.append(run_trial(config, safeset, supervisor=supervisor,
                              alpha_rule=alpha_rule))
    save_metrics(args.out, runs)
    print(f"{args.trials} trials: trips={sum(m.trips for m in runs)} "
          f"crashes={sum(m.crashes for m in runs)} "
          f"interventions={sum(m.interventions for m in runs)} "
          f"false_positives={sum(m.false_positives for m in runs)}")
    return 0


def cmd_serve(args) -> int:
    from .session_service import SessionConfig, serve

    library = _load_library(args.library)
    # operate the team on the library member closest to the true turn rate
    vf = min(library, key=lambda v: abs(v.omega_max - 1.0))

    def factory():
        return SessionConfig(safeset=standard_safeset(vf),
                             log_path=args.log)

    print(f"serving on ws://127.0.0.1:{args.port} "
          f"(safe set omega_max={vf.omega_max})")
    try:
        asyncio.run(serve(args.port, factory, time_scale=args.time_scale))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_export_slice(args) -> int:
    vf = load_value_function(args.vf)
    export_slice(vf, args.slice_theta, args.out)
    print(f"slice at theta={args.slice_theta} in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safekernel",
        description="Learn a supervisor's safe set and drive a robot team on it.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one avoidance value function")
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--grid", help="NX,NY,NT nodes (default 121,121,60)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("library", help="solve a family of value functions")
    p.add_argument("--omegas", default="0.25:3.0:0.25",
                   help="start:stop:step turn-rate sweep")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_library)

    p = sub.add_parser("synth", help="generate synthetic intervention records")
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit supervisor parameters over a library")
    p.add_argument("--library", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--true", help="reference value function for the prior")
    p.add_argument("--no-prior", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predicted false-positive fraction")
    p.add_argument("--vf", required=True)
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run seeded team trials")
    p.add_argument("--treatment", required=True,
                   choices=["standard", "learned", "conservative"])
    p.add_argument("--fit")
    p.add_argument("--alpha", default="zero",
                   choices=["zero", "mu", "mu2sigma"])
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ticks", type=int, default=10800)
    p.add_argument("--omega", type=float, default=1.0,
                   help="true turn rate for the standard safe set")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--detection", type=float, default=0.8)
    p.add_argument("--grid")
    p.add_argument("--sup-omega", type=float)
    p.add_argument("--sup-mu", type=float)
    p.add_argument("--sup-sigma", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the live session service")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--log", help="JSONL sink for phase II records")
    p.add_argument("--time-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-slice", help="CSV contour slice of a value function")
    p.add_argument("--vf", required=True)
    p.add_argument("--slice-theta", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_slice)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
