"""Command-line front end: ``trackcosim {run,compare,sweep,analyze,demo}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import compare_traces, load_scenario_model, run_scenario, sweep_mass_scaling
from .config import load_scenario
from .errors import ConfigError, ConvergenceError, DivergenceError, FormatError, ModelError, TrackCosimError
from .model import load_track_model
from .timestep import DEFAULT_CFL, mass_scale
from .traces import Trace

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_MODEL = 5
EXIT_DIVERGENCE = 6


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")


def cmd_run(args) -> int:
    scenario = load_scenario(args.config)
    changes = {}
    if args.approach:
        changes["approach"] = args.approach
    if args.transport:
        changes["transport"] = args.transport
    if args.m_c is not None:
        changes["m_c"] = args.m_c
    if args.t_end is not None:
        changes["t_end"] = args.t_end
    if changes:
        scenario = scenario.with_(**changes)
    out = Path(args.output) if args.output else scenario.output
    out.mkdir(parents=True, exist_ok=True)

    run = run_scenario(scenario)
    trace_path = run.trace.to_csv(out / f"trace_{run.approach}.csv")
    _write_json(out / f"timings_{run.approach}.json", run.timings)
    if run.mass_scaling is not None:
        run.mass_scaling.write_csv(out / "mass_scaling.csv")
    print(
        f"{run.approach}: dt={run.dt_track:.6g} s steps={run.trace.meta['n_steps']} "
        f"wall={run.timings['total']:.3f} s max_F={np.max(run.trace.F_contact):.6g} N -> {trace_path}"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    for p in (args.trace, args.reference):
        if not Path(p).is_file():
            raise FileNotFoundError(f"trace file not found: {p}")
    cand, ref = Trace.from_csv(args.trace), Trace.from_csv(args.reference)
    m = compare_traces(cand, ref, threshold=args.threshold, window=args.window, static_load=args.static_load)
    print(f"max_rel_disp_dev = {100 * m.max_rel_disp_dev:.6g} %")
    print(f"peaks = {len(m.peak_forces)} (reference {len(m.peak_forces_ref)})")
    for t, s, f in m.peak_forces:
        print(f"  peak t={t:.6g} s s={s:.6g} m F={f:.6g} N")
    if m.peak_force_dev is not None:
        print(f"peak_force_dev = {100 * m.peak_force_dev:.6g} %")
    print(f"cpu_ratio = {m.cpu_ratio:.6g}" if m.cpu_ratio is not None else "cpu_ratio = n/a")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "comparison.json", m.as_dict())
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.config)
    out = Path(args.output) if args.output else scenario.output
    out.mkdir(parents=True, exist_ok=True)
    jobs = 1 if args.serial else args.jobs
    result = sweep_mass_scaling(scenario, args.mc, jobs=jobs)
    result.reference.to_csv(out / "trace_reference.csv")
    path = result.to_csv(out / "sweep.csv")
    for row in result.rows:
        if row.status == "ok":
            print(
                f"m_c={row.m_c:.6g} dt={row.dt:.6g} s cpu_ratio={row.cpu_ratio:.4g} "
                f"dev={100 * row.max_rel_disp_dev:.4g} %"
            )
        else:
            print(f"m_c={row.m_c:.6g} {row.status}")
    for note in result.notes:
        print(f"note: {note}")
    print(f"-> {path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not Path(args.model).is_dir():
        raise FileNotFoundError(f"model directory not found: {args.model}")
    model = load_track_model(args.model)
    _, report = mass_scale(
        model, args.mc, dt_target=args.dt_target, cfl_constant=args.cfl, rotations=not args.translational_only
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "mass_scaling.csv")
    print(f"base_dt = {report.base_dt:.9g} s")
    print(f"achieved_dt = {report.achieved_dt:.9g} s")
    print(f"added_mass = {report.total_added_mass:.6g} on {int(np.count_nonzero(report.added_mass))} dofs")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .demo import build_demo

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    print(build_demo(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trackcosim", description="Vehicle/track co-simulation bench.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--seed", type=int, default=0, help="seed for numpy's global generator")
    ap.add_argument("--serial", action="store_true", help="run everything in one process")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--approach", choices=("standard", "new"))
    p.add_argument("--transport", choices=("in_process", "file_exchange"))
    p.add_argument("--mc", dest="m_c", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--output", help="output directory (defaults to run.output)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare a trace against a reference trace")
    p.add_argument("trace")
    p.add_argument("reference")
    p.add_argument("--threshold", type=float, help="peak threshold [N] (default 1.2 W)")
    p.add_argument("--window", type=float, default=5e-3, help="peak separation window [s]")
    p.add_argument("--static-load", type=float, help="W [N] when the traces carry no metadata")
    p.add_argument("--output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="mass-scaling sweep against the standard approach")
    p.add_argument("--config", required=True)
    p.add_argument("--mc", type=float, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="stable time step and mass-scaling report, no dynamics")
    p.add_argument("--model", required=True)
    p.add_argument("--mc", type=float, default=0.0)
    p.add_argument("--dt-target", type=float)
    p.add_argument("--cfl", type=float, default=DEFAULT_CFL)
    p.add_argument("--translational-only", action="store_true")
    p.add_argument("--output", default=".")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("demo", help="write the synthetic demo track and scenario")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    np.random.seed(args.seed)

    def fail(code: int, exc: BaseException) -> int:
        print(f"trackcosim: error: {exc}", file=sys.stderr)
        return code

    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return fail(EXIT_MISSING_FILE, exc)
    except ConfigError as exc:
        return fail(EXIT_CONFIG, exc)
    except (ModelError, FormatError) as exc:
        return fail(EXIT_MODEL, exc)
    except (DivergenceError, ConvergenceError) as exc:
        return fail(EXIT_DIVERGENCE, exc)
    except (TrackCosimError, ValueError, OSError) as exc:
        return fail(EXIT_ERROR, exc)


if __name__ == "__main__":
    raise SystemExit(main())
