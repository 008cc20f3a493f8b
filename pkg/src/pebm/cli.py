"""Command-line front end: experiment dispatch and deterministic file output.

Numbers are written in their shortest round-trip form, so outputs are
byte-identical across runs with the same configuration and seed.  Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .integrators import StepFailure
from .loading import (ConfigError, isoerror_prestrain, keypoint_program,
                      shear_program)
from .material import (DomainError, MaterialParams, bundled_card,
                       bundled_card_names, load_material_card)
from .experiments import (GridSpec, INTEGRATORS, REFERENCE_DT,
                          convergence_study, isoerror_maps, isoerror_params,
                          iteration_count_map, loglog_slope, roundoff_study,
                          simulate_program, weak_invariance_audit)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _fmt(x) -> str:
    """Shortest round-trip representation; NaN spelled out for grid cells."""
    x = float(x)
    if math.isnan(x):
        return "NaN"
    return repr(x)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v)
                             for v in row])


def _write_grid_csv(path: Path, f11_values, f12_values, values):
    """Grid layout: header row of F12 values, first column of F11 values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["F11\\F12"] + [_fmt(v) for v in f12_values])
        for f11, row in zip(f11_values, values):
            writer.writerow([_fmt(f11)] + [_fmt(v) for v in row])


def _resolve_material(name: str, rate_independent: bool) -> MaterialParams:
    if name in bundled_card_names():
        params = bundled_card(name)
    elif Path(name).exists():
        params = load_material_card(name)
    else:
        raise ConfigError(f"material {name!r} is neither a bundled card "
                          f"({bundled_card_names()}) nor an existing file")
    if rate_independent:
        params = params.with_overrides(eta=0.0, m=1.0)
    return params


def _resolve_program(args):
    if args.program == "keypoint":
        return keypoint_program()
    if args.program == "shear":
        reversals = [float(t) for t in args.reversals.split(",") if t.strip()]
        return shear_program(args.shear_rate, reversals,
                             duration=args.duration)
    if args.program in ("tension", "tension_shear"):
        return isoerror_prestrain(args.program)
    raise ConfigError(f"unknown program {args.program!r}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, args):
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func",)}
    doc = {"command": command, "config": config, "version": __version__}
    with open(out / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

_TRAJECTORY_HEADER = (
    ["t"]
    + [f"F{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    + ["T11", "T12", "T13", "T22", "T23", "T33"]
    + ["xi", "det_Ci", "s", "s_d", "newton_iters"])


def cmd_simulate(args) -> int:
    params = _resolve_material(args.material, args.rate_independent)
    program = _resolve_program(args)
    if args.steps is not None:
        n_steps = args.steps
    elif args.dt is not None:
        n_steps = int(round(program.duration / args.dt))
        if not math.isclose(n_steps * args.dt, program.duration,
                            rel_tol=1e-9):
            raise ConfigError(f"dt = {args.dt} does not divide the program "
                              f"duration {program.duration}")
    else:
        raise ConfigError("one of --dt or --steps is required")
    if n_steps < 1:
        raise ConfigError("need at least one step")

    out = _out_dir(args)
    _write_manifest(out, "simulate", args)
    tr = simulate_program(program, params, n_steps,
                          integrator=args.integrator,
                          relax_passes=args.relax_passes,
                          max_subincrements=args.subincrement_cap,
                          partial_on_failure=True)

    rows = []
    for k in range(1, len(tr.times)):
        t = float(tr.times[k])
        F = program.F(t)
        T = tr.cauchy[k]
        rows.append([t] + [F[i, j] for i in range(3) for j in range(3)]
                    + [T[0, 0], T[0, 1], T[0, 2], T[1, 1], T[1, 2], T[2, 2]]
                    + [tr.xi[k], tr.det_ci[k], tr.s[k], tr.s_d[k],
                       int(tr.newton[k])])
    _write_csv(out / "trajectory.csv", _TRAJECTORY_HEADER, rows)
    if not args.no_figures and len(tr.times) > 1:
        from .figures import trajectory_figure
        trajectory_figure(tr.times, tr.cauchy, tr.xi, out / "trajectory.png")
    if tr.failure is not None:
        (out / "failure.json").write_text(json.dumps(
            {"error": tr.failure, "completed_steps": len(tr.times) - 1},
            indent=2) + "\n", encoding="utf-8")
        print(f"numerical failure: {tr.failure}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_convergence(args) -> int:
    params = _resolve_material(args.material, args.rate_independent)
    program = keypoint_program()
    dt_list = [float(v) for v in args.dt.split(",")]
    integrators = args.integrator.split(",") if args.integrator else list(INTEGRATORS)
    out = _out_dir(args)
    _write_manifest(out, "convergence", args)
    try:
        series = convergence_study(program, params, dt_list, integrators,
                                   reference_dt=args.reference_dt)
    except StepFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL

    for s in series:
        _write_csv(out / f"errors_{s.integrator}_{_fmt(s.dt)}.csv",
                   ["t", "error"],
                   list(zip(s.times.tolist(), s.errors.tolist())))
    summary_rows = []
    for integ in integrators:
        sub = sorted([s for s in series if s.integrator == integ],
                     key=lambda s: s.dt)
        slope = (loglog_slope([s.dt for s in sub],
                              [max(s.max_error, 1e-300) for s in sub])
                 if len(sub) > 1 else float("nan"))
        for s in sub:
            summary_rows.append([integ, s.dt, s.max_error, slope])
    _write_csv(out / "summary.csv",
               ["integrator", "dt", "max_error", "slope"], summary_rows)
    if not args.no_figures:
        from .figures import convergence_figure
        convergence_figure(series, out / "convergence.png")
    return EXIT_OK


def _grid_spec(args) -> GridSpec:
    return GridSpec(n=args.grid, span=args.grid_span)


def cmd_isoerror(args) -> int:
    base = _resolve_material(args.material, rate_independent=False)
    params = isoerror_params(base, k_override=args.iso_k)
    integrators = args.integrator.split(",") if args.integrator else list(INTEGRATORS)
    out = _out_dir(args)
    _write_manifest(out, "isoerror", args)
    try:
        grids = isoerror_maps(args.prestrain, params, _grid_spec(args),
                              integrators=integrators,
                              relax_passes=args.relax_passes,
                              max_subincrements=args.subincrement_cap)
    except StepFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL

    log_lines = []
    for integ, grid in grids.items():
        _write_grid_csv(out / f"isoerror_{integ}.csv", grid.f11_values,
                        grid.f12_values, grid.errors)
        log_lines += [f"{integ}: {line}" for line in grid.failures]
        if not args.no_figures:
            from .figures import grid_figure
            grid_figure(grid.f11_values, grid.f12_values, grid.errors,
                        f"single-step stress error [MPa], {integ}, "
                        f"{args.prestrain}",
                        out / f"isoerror_{integ}.png", log_scale=True)
    if log_lines:
        (out / "isoerror_failures.log").write_text(
            "\n".join(log_lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_itercount(args) -> int:
    base = _resolve_material(args.material, rate_independent=False)
    params = isoerror_params(base, k_override=args.iso_k)
    integrators = args.integrator.split(",") if args.integrator else list(INTEGRATORS)
    out = _out_dir(args)
    _write_manifest(out, "itercount", args)
    try:
        grids = iteration_count_map(args.prestrain, params, _grid_spec(args),
                                    integrators=integrators,
                                    relax_passes=args.relax_passes,
                                    max_subincrements=args.subincrement_cap)
    except StepFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL

    log_lines = []
    cost_rows = []
    pebm_cost = grids["pebm"].cost.sum() if "pebm" in grids else float("nan")
    for integ, grid in grids.items():
        newton = np.where(grid.newton < 0, np.nan, grid.newton.astype(float))
        _write_grid_csv(out / f"itercount_{integ}.csv", grid.f11_values,
                        grid.f12_values, newton)
        if integ != "pebm":
            _write_grid_csv(out / f"itercount_inner_{integ}.csv",
                            grid.f11_values, grid.f12_values,
                            grid.inner_newton.astype(float))
        cost_rows.append([integ, float(grid.cost.sum()),
                          float(grid.cost.sum() / pebm_cost)])
        log_lines += [f"{integ}: {line}" for line in grid.failures]
        if not args.no_figures:
            from .figures import grid_figure
            grid_figure(grid.f11_values, grid.f12_values, newton,
                        f"Newton iterations, {integ}, {args.prestrain}",
                        out / f"itercount_{integ}.png")
    _write_csv(out / "cost_summary.csv",
               ["integrator", "matrix_ops", "ratio_vs_pebm"], cost_rows)
    if log_lines:
        (out / "itercount_failures.log").write_text(
            "\n".join(log_lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_audit(args) -> int:
    params = _resolve_material(args.material, args.rate_independent)
    program = keypoint_program()
    out = _out_dir(args)
    _write_manifest(out, "audit", args)
    try:
        report = weak_invariance_audit(program, params, n_steps=args.steps,
                                       n_random_F0=args.n_f0, seed=args.seed,
                                       relax_passes=args.relax_passes)
    except StepFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    ro = roundoff_study(n_samples=args.roundoff_samples, seed=args.seed)

    doc = {
        "seed": report.seed,
        "n_steps": report.n_steps,
        "control_n_steps": report.control_n_steps,
        "stress_deviations": report.stress_deviations,
        "internal_deviations": report.internal_deviations,
        "f0_determinants": report.f0_determinants,
        "negative_controls": {
            "additive_identity_correction": report.control_additive,
            "noninvariant_shift": report.control_shift,
        },
        "roundoff": {
            "xi_primes": ro.xi_primes,
            "max_naive_deviation": [float(np.nanmax(ro.naive_deviation[k]))
                                    for k in range(len(ro.xi_primes))],
            "max_stable_deviation": [float(np.nanmax(ro.stable_deviation[k]))
                                     for k in range(len(ro.xi_primes))],
            "min_amplification_last": float(np.nanmin(
                ro.amplification(len(ro.xi_primes) - 1))),
        },
    }
    with open(out / "audit_report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    rows = []
    for k, xp in enumerate(ro.xi_primes):
        for i in range(ro.naive_deviation.shape[1]):
            rows.append([xp, i, ro.naive_deviation[k, i],
                         ro.stable_deviation[k, i], ro.amplification(k)[i]])
    _write_csv(out / "roundoff.csv",
               ["xi_prime", "sample", "naive_dev", "stable_dev", "ratio"],
               rows)
    if not args.no_figures:
        from .figures import audit_figure, roundoff_figure
        audit_figure(report, out / "audit.png")
        roundoff_figure(ro, out / "roundoff.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p, program=False, grid=False):
    p.add_argument("--material", required=True,
                   help="bundled card name (aa5754o, 42crmo4) or JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--relax-passes", type=int, default=3,
                   help="relaxation passes of the partitioned method (1-10)")
    p.add_argument("--subincrement-cap", type=int, default=256,
                   help="maximum continuation stages of the baselines")
    p.add_argument("--rate-independent", action="store_true",
                   help="override the card with eta = 0, m = 1")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering next to the CSV output")
    if program:
        p.add_argument("--program", default="keypoint",
                       choices=["keypoint", "shear", "tension",
                                "tension_shear"])
        p.add_argument("--shear-rate", type=float, default=0.07,
                       help="shear rate of the shear program [1/s]")
        p.add_argument("--reversals", default="",
                       help="comma list of shear reversal times [s]")
        p.add_argument("--duration", type=float, default=10.0,
                       help="duration of the shear program [s]")
    if grid:
        p.add_argument("--prestrain", default="tension",
                       choices=["tension", "tension_shear"])
        p.add_argument("--grid", type=int, default=25,
                       help="points per grid axis")
        p.add_argument("--grid-span", type=float, default=0.06,
                       help="half-width of the increment grid")
        p.add_argument("--iso-k", type=float, default=None,
                       help="yield-radius override (defaults per bundled card)")
        p.add_argument("--integrator", default=None,
                       help="comma list; default pebm,ebmsc,em")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pebm",
        description="Material-point laboratory for finite-strain "
                    "viscoplasticity with a nested multiplicative split")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a deformation program")
    _add_common(p, program=True)
    p.add_argument("--integrator", default="pebm",
                   choices=list(INTEGRATORS))
    p.add_argument("--dt", type=float, default=None, help="step size [s]")
    p.add_argument("--steps", type=int, default=None, help="step count")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("convergence",
                       help="error-vs-step-size study on the key-point program")
    _add_common(p)
    p.add_argument("--integrator", default=None,
                   help="comma list; default pebm,ebmsc,em")
    p.add_argument("--dt", default="10,5,2.5,1.25",
                   help="comma list of step sizes [s]")
    p.add_argument("--reference-dt", type=float, default=REFERENCE_DT,
                   help="step size of the ground-truth run [s]")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("isoerror", help="single-step error maps")
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_isoerror)

    p = sub.add_parser("itercount", help="Newton-iteration maps")
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_itercount)

    p = sub.add_parser("audit",
                       help="reference-change invariance audit and round-off study")
    _add_common(p)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--n-f0", type=int, default=10,
                   help="number of random reference changes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--roundoff-samples", type=int, default=50)
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, FileNotFoundError,
            json.JSONDecodeError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
