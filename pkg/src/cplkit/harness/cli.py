"""Command line entry point: ``python -m cplkit <command>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..config import errors, parse, to_dot, validate
from ..errors import ConfigError, CouplingError
from ..mesh import read_mesh
from .dummy import run_dummy
from .heat1d import Heat1dProblem, run_participant, solve_monolithic, write_solution
from .mapping_test import SHORT_NAMES, run_mapping_test


def _problem_args(p):
    p.add_argument("--alpha", type=float, default=1.0, help="diffusivity")
    p.add_argument("--points", type=int, default=50, help="grid points per side including the interface")
    p.add_argument("--initial", default="sin", help="sin or constant:<value>")
    p.add_argument("--left", type=float, default=0.0, help="temperature at x=0")
    p.add_argument("--right", type=float, default=1.0, help="temperature at x=1")
    p.add_argument("--output", default=None, help="CSV file for u(x, T_end)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cplkit", description="Two-participant coupling toolkit.")
    parser.add_argument("-v", "--log-level", default="WARNING", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mapping-test", help="map a test field between two mesh files and report the error")
    p.add_argument("--mesh-a", required=True)
    p.add_argument("--mesh-b", required=True)
    p.add_argument("--mapping", default="nn", choices=sorted(SHORT_NAMES))
    p.add_argument("--constraint", default="consistent", choices=["consistent", "conservative"])
    p.add_argument("--support-radius", type=float, default=None)
    p.add_argument("--polynomial", default="separated", choices=["separated", "integrated", "none"])
    p.add_argument("--function", default="wave", help="wave or affine:c0,c1,c2[,c3]")
    p.add_argument("--verbose", action="store_true", help="dump vertex values")

    p = sub.add_parser("solverdummy", help="coupled dummy solver that copies read data to write data")
    p.add_argument("config")
    p.add_argument("participant")
    p.add_argument("--vertices", type=int, default=5)
    p.add_argument("--exchange-dir", default=None)

    p = sub.add_parser("heat1d", help="one participant of the partitioned heat equation")
    p.add_argument("config")
    p.add_argument("participant", choices=["dirichlet", "neumann"])
    p.add_argument("--exchange-dir", default=None)
    p.add_argument("--substeps", type=int, default=1, help="solver steps per time window")
    p.add_argument("--watch-dir", default=".", help="directory for watch-point CSV files")
    _problem_args(p)

    p = sub.add_parser("heat1d-monolithic", help="reference solve of the unsplit heat equation")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--windows", type=int, default=20)
    _problem_args(p)

    p = sub.add_parser("config-viz", help="print the configuration as a graphviz digraph")
    p.add_argument("config")
    p.add_argument("--validate-only", action="store_true")
    return parser


def _problem(args, **extra) -> Heat1dProblem:
    return Heat1dProblem(args.alpha, args.points, initial=args.initial, left=args.left, right=args.right, **extra)


def cmd_mapping_test(args):
    lines = run_mapping_test(
        read_mesh(args.mesh_a), read_mesh(args.mesh_b), args.mapping, args.constraint,
        args.support_radius, args.polynomial, args.function, args.verbose,
    )
    print("\n".join(lines))
    return 0


def cmd_solverdummy(args):
    stats = run_dummy(args.config, args.participant, args.vertices, args.exchange_dir)
    print(f"participant: {args.participant}")
    print(f"windows completed: {stats['windows']}")
    print(f"advances: {stats['advances']}")
    print(f"coupling iterations: {stats['iterations']}")
    return 0


def cmd_heat1d(args):
    problem = _problem(args)
    res = run_participant(args.config, args.participant, problem, args.exchange_dir,
                          output_dir=args.watch_dir, substeps=args.substeps)
    if args.output:
        write_solution(args.output, res.x, res.u)
    print(f"participant: {args.participant}")
    print(f"windows completed: {res.windows}")
    print(f"total coupling iterations: {res.iterations}")
    if res.max_iteration_windows:
        print(f"max-iterations reached in {res.max_iteration_windows} window(s)", file=sys.stderr)
        return 1
    return 0


def cmd_heat1d_monolithic(args):
    problem = _problem(args, dt=args.dt, windows=args.windows)
    x, u = solve_monolithic(problem)
    if args.output:
        write_solution(args.output, x, u)
    else:
        for xi, ui in zip(x, u):
            print(f"{xi:.17g},{ui:.17g}")
    return 0


def cmd_config_viz(args):
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse(text, strict=False)
    diags = validate(cfg)
    for d in diags:
        print(d, file=sys.stderr)
    errs = errors(diags)
    if args.validate_only:
        print(f"{len(errs)} error(s), {len(diags) - len(errs)} warning(s)")
    if errs:
        return 1
    if not args.validate_only:
        sys.stdout.write(to_dot(cfg))
    return 0


COMMANDS = {
    "mapping-test": cmd_mapping_test,
    "solverdummy": cmd_solverdummy,
    "heat1d": cmd_heat1d,
    "heat1d-monolithic": cmd_heat1d_monolithic,
    "config-viz": cmd_config_viz,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for d in exc.diagnostics or [exc]:
            print(d, file=sys.stderr)
        return 1
    except (CouplingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1



