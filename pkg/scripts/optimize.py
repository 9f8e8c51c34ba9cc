#!/usr/bin/env python3
"""
optimize.py

Plans one mission with a chosen variant and writes the results to an
output directory:

    trajectory.csv    - per-segment waypoints, length, time, speed, schedule
    convergence.csv   - SCA trace (SCA variants only)
    energy.json       - total/flight/communication energy and delivered bits

Every flag falls back to the matching INPUT_* environment variable, so the
script runs unchanged as a composite-action step.

Outputs (written to GITHUB_OUTPUT):
    total_energy_j, flight_energy_j, comm_energy_j, iterations, out_dir
"""

import argparse
import dataclasses
import os
import sys

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from channel import GeometryError  # noqa: E402
from cli_utils import (  # noqa: E402
    DEFAULT_SCENARIO,
    env_default,
    fail,
    run_variant,
    set_output,
    write_solution,
)
from conic import DEFAULT_TOL  # noqa: E402
from power import TrajectoryError  # noqa: E402
from sca import ScaError, ScaOptions  # noqa: E402
from scenario import ScenarioError, load_scenario  # noqa: E402
from trajectory import ALL_VARIANTS, VARIANT_GENERAL, VARIANT_HEURISTIC  # noqa: E402


def build_parser():
    parser = argparse.ArgumentParser(description="Plan an energy-minimal IRS-aided UAV mission.")
    parser.add_argument("--scenario", default=env_default("scenario", DEFAULT_SCENARIO))
    parser.add_argument(
        "--variant", choices=ALL_VARIANTS, default=env_default("variant", VARIANT_GENERAL)
    )
    parser.add_argument(
        "--q-bits", type=float, default=env_default("q_bits"),
        help="data demand applied to every UE (bits); scenario values when omitted",
    )
    parser.add_argument("--max-iters", type=int, default=env_default("max_iters", "100"))
    parser.add_argument("--tol", type=float, default=env_default("tol", str(DEFAULT_TOL)))
    parser.add_argument("--seed", type=int, default=env_default("seed"))
    parser.add_argument("--margin-bits", type=float, default=env_default("margin_bits"))
    parser.add_argument("--segments", type=int, default=None, help="segment count override")
    parser.add_argument("--out", default=env_default("out", "out"))
    parser.add_argument("--dump-cbf", action="store_true", help="write every subproblem as CBF")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    try:
        cfg = load_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        fail(exc, {"path": args.scenario})
    if args.q_bits is not None:
        cfg = cfg.with_data_bits(args.q_bits)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)

    print(f"Scenario: {args.scenario} ({cfg.n_ue} UEs, {cfg.n_irs} IRSs)")
    print(f"Variant: {args.variant}")

    try:
        opts = None
        if args.variant != VARIANT_HEURISTIC:
            opts = ScaOptions(
                variant=args.variant,
                max_iters=args.max_iters,
                margin_bits=args.margin_bits,
                solver_tol=args.tol,
                n_segments_hint=args.segments,
                verbose=args.verbose,
                dump_dir=os.path.join(args.out, "cbf") if args.dump_cbf else None,
            )
        solution, matching = run_variant(cfg, args.variant, opts, margin_bits=args.margin_bits)
    except ScaError as exc:
        if exc.last_solution is not None:
            try:
                write_solution(args.out, exc.last_solution, cfg, prefix="last_good_")
            except OSError as io_exc:
                print(f"Warning: could not write last good iterate: {io_exc}", file=sys.stderr)
        fail(exc, {"variant": args.variant, "out": args.out})
    except (TrajectoryError, GeometryError, ValueError) as exc:
        fail(exc, {"variant": args.variant})

    try:
        out = write_solution(args.out, solution, cfg, matching)
    except OSError as exc:
        fail(exc, {"path": args.out})

    energy = solution.energy
    iterations = max(0, len(solution.convergence) - 1)
    print("\nSummary:")
    print(f"  total energy:  {energy.total_j:.2f} J")
    print(f"  flight energy: {energy.flight_j:.2f} J")
    print(f"  comm energy:   {energy.comm_j:.4f} J")
    print(f"  segments:      {solution.trajectory.n_segments}")
    print(f"  iterations:    {iterations}")

    set_output("total_energy_j", f"{energy.total_j:.6f}")
    set_output("flight_energy_j", f"{energy.flight_j:.6f}")
    set_output("comm_energy_j", f"{energy.comm_j:.6f}")
    set_output("iterations", iterations)
    set_output("out_dir", str(out))


if __name__ == "__main__":
    main()
