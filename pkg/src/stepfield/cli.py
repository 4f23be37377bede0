"""Command-line surface.

Subcommands: validate (terrain check), field (penalty grid export), plan
(single offline solve), mpc (closed-loop run), serve (teleoperation service).
Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .field import field_grid
from .planner import assemble_problem, default_guess, run_closed_loop
from .solver import SolverSettings, solve


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stepfield", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("validate", parents=[], help="validate a terrain file")
    p.add_argument("terrain", type=Path)

    p = sub.add_parser("field", help="export a penalty-field grid as CSV")
    p.add_argument("terrain", type=Path)
    p.add_argument("--bbox", type=str, default=None, help="xmin,ymin,xmax,ymax (default: bounds + 1 m)")
    p.add_argument("--res", type=float, default=0.01, help="grid resolution in meters")
    p.add_argument("--out", type=Path, default=Path("field.csv"))

    p = sub.add_parser("plan", help="single offline solve for the first horizon")
    p.add_argument("scenario", type=Path)
    p.add_argument("--out", type=Path, default=Path("plan_out"))

    p = sub.add_parser("mpc", help="closed-loop receding-horizon run")
    p.add_argument("scenario", type=Path)
    p.add_argument("--out", type=Path, default=Path("mpc_out"))
    p.add_argument("--grid-res", type=float, default=None, help="also export a field grid at this resolution")

    p = sub.add_parser("serve", help="run the teleoperation service")
    p.add_argument("scenario", type=Path)
    p.add_argument("--listen", type=str, default="127.0.0.1:8571", help="host:port")
    p.add_argument("--vmax", type=float, default=1.0, help="command velocity clamp, m/s")

    return parser


def _cmd_validate(args) -> int:
    try:
        terrain, warnings = sio.load_terrain_with_warnings(args.terrain)
    except (sio.SchemaError, ValueError) as exc:
        print(f"invalid: {exc}")
        return 1
    print(f"{args.terrain}: {terrain.n_patches} patches")
    for patch in terrain.patches:
        from .geometry import signed_area

        area = signed_area(patch.polygon)
        print(
            f"  {patch.id}: {patch.polygon.n_vertices} vertices, area {area:.4f} m^2, "
            f"height {patch.height} m, friction {patch.friction}"
        )
    for w in warnings:
        print(f"  warning: {w}")
    return 0


def _cmd_field(args) -> int:
    terrain = sio.load_terrain(args.terrain)
    if args.bbox:
        vals = [float(v) for v in args.bbox.split(",")]
        if len(vals) != 4:
            raise _UsageError("--bbox needs xmin,ymin,xmax,ymax")
        lo, hi = (vals[0], vals[1]), (vals[2], vals[3])
    else:
        blo, bhi = terrain.bounds()
        lo, hi = (blo - 1.0), (bhi + 1.0)
    grid = field_grid(terrain, lo, hi, args.res)
    path = sio.write_field_grid(grid, args.out)
    print(f"wrote {path} ({grid.penalty.shape[1]} x {grid.penalty.shape[0]} cells)")
    return 0


def _cmd_plan(args) -> int:
    scenario = sio.load_scenario(args.scenario)
    problem, info = assemble_problem(scenario, scenario.initial_state, 0.0)
    settings = SolverSettings(max_iterations=scenario.mpc.offline_iterations)
    sol = solve(problem, default_guess(scenario, info), settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = scenario.robot.n_feet
    header = ["k", "t", "r_x", "r_y", "r_z", "rd_x", "rd_y", "rd_z"]
    for i in range(n):
        header += [f"foot{i}_x", f"foot{i}_y", f"foot{i}_z"]
    for i in range(n):
        header += [f"u{i}_x", f"u{i}_y", f"u{i}_z"]
    rows = []
    for k in range(problem.n_nodes):
        rows.append([k, info.node_times[k], *sol.xs[k], *sol.us[k]])
    sio._write_csv(out / "plan.csv", header, rows)
    (out / "summary.json").write_text(
        json.dumps(
            {
                "cost": sol.cost,
                "iterations": sol.iterations,
                "converged": sol.converged,
                "status": sol.status,
                "violations": sol.violations,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"solved: cost {sol.cost:.6g}, {sol.iterations} iterations, {sol.status}")
    print(f"wrote {out / 'plan.csv'} and {out / 'summary.json'}")
    return 0


def _cmd_mpc(args) -> int:
    scenario = sio.load_scenario(args.scenario)
    log = run_closed_loop(scenario)
    paths = sio.write_log(log, args.out)
    if args.grid_res:
        lo, hi = scenario.terrain.bounds()
        grid = field_grid(scenario.terrain, lo - 0.5, hi + 0.5, args.grid_res)
        paths.append(sio.write_field_grid(grid, Path(args.out) / "field.csv"))
    summary = log.summary()
    print(
        f"{scenario.name or args.scenario}: {summary['ticks']} ticks, "
        f"{summary['touchdowns']} touchdowns ({summary['containment_fraction']:.0%} contained), "
        f"mean solve {summary['mean_solve_ms']:.1f} ms"
    )
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_serve(args) -> int:
    from .teleop import TeleopServer

    scenario = sio.load_scenario(args.scenario)
    host, _, port = args.listen.rpartition(":")
    server = TeleopServer(scenario, host=host or "127.0.0.1", port=int(port), vmax=args.vmax)
    print(f"serving {scenario.name or args.scenario} on {server.host}:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "field": _cmd_field,
    "plan": _cmd_plan,
    "mpc": _cmd_mpc,
    "serve": _cmd_serve,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.command:
        parser.print_help()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (sio.SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
