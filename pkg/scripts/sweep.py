#!/usr/bin/env python3
"""
sweep.py

Energy versus data demand: plans every (demand, variant) pair of a grid,
running points concurrently, and writes energy_vs_q.csv with the columns

    q_bits, variant, total_j, flight_j, comm_j, status

A failed point is recorded in the status column; the sweep continues.
Rows come out in grid order whatever the worker count.

Outputs (written to GITHUB_OUTPUT):
    points  - number of rows
    failed  - rows whose status is not "ok"
    out_dir
"""

import argparse
import csv
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from channel import GeometryError  # noqa: E402
from cli_utils import (  # noqa: E402
    DEFAULT_SCENARIO,
    env_default,
    fail,
    parse_float_list,
    prepare_out_dir,
    run_variant,
    set_output,
)
from conic import DEFAULT_TOL  # noqa: E402
from power import TrajectoryError  # noqa: E402
from sca import ScaError, ScaOptions  # noqa: E402
from scenario import ScenarioError, load_scenario  # noqa: E402
from trajectory import (  # noqa: E402
    ALL_VARIANTS,
    VARIANT_GENERAL,
    VARIANT_HEURISTIC,
    VARIANT_MATCHING,
    VARIANT_NO_IRS,
)

CSV_NAME = "energy_vs_q.csv"
DEFAULT_GRID = (0.0, 5e7, 1e8, 2e8, 5e8)
DEFAULT_VARIANTS = (VARIANT_GENERAL, VARIANT_MATCHING, VARIANT_NO_IRS, VARIANT_HEURISTIC)


@dataclass(frozen=True)
class SweepSpec:
    q_grid: tuple
    variants: tuple
    scenario_path: str
    out_dir: str
    seed: int | None = None
    max_iters: int = 100
    tol: float = DEFAULT_TOL
    margin_bits: float | None = None

    def __post_init__(self):
        if not self.q_grid:
            raise ValueError("data-demand grid is empty")
        if any(b <= a for a, b in zip(self.q_grid, self.q_grid[1:])):
            raise ValueError("data-demand grid must be strictly ascending")
        if any(q < 0 for q in self.q_grid):
            raise ValueError("data demands must be >= 0")
        unknown = [v for v in self.variants if v not in ALL_VARIANTS]
        if unknown or not self.variants:
            raise ValueError(f"unknown or missing variants: {unknown}")


def _run_point(task):
    """Plan one (demand, variant) point; never raises."""
    cfg, q_bits, variant, max_iters, tol, margin_bits = task
    cfg = cfg.with_data_bits(q_bits)
    opts = None
    if variant != VARIANT_HEURISTIC:
        opts = ScaOptions(variant=variant, max_iters=max_iters, solver_tol=tol, margin_bits=margin_bits)
    try:
        solution, _ = run_variant(cfg, variant, opts, margin_bits=margin_bits)
    except (ScaError, TrajectoryError, GeometryError, ValueError) as exc:
        message = str(exc).replace("\n", " ")
        return (q_bits, variant, float("nan"), float("nan"), float("nan"), f"error: {message}")
    e = solution.energy
    return (q_bits, variant, e.total_j, e.flight_j, e.comm_j, "ok")


def run_sweep(spec: SweepSpec, jobs=1, cfg=None):
    """Rows ordered by grid position, then by variant order in *spec*."""
    if cfg is None:
        cfg = load_scenario(spec.scenario_path)
    if spec.seed is not None:
        cfg = dataclasses.replace(cfg, seed=spec.seed)
    tasks = [
        (cfg, q, variant, spec.max_iters, spec.tol, spec.margin_bits)
        for q in spec.q_grid
        for variant in spec.variants
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_point, tasks))
    else:
        rows = [_run_point(t) for t in tasks]
    for row in rows:
        if row[5] != "ok":
            print(f"Warning: Q={row[0]:g} {row[1]}: {row[5]}", file=sys.stderr)
    return rows


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q_bits", "variant", "total_j", "flight_j", "comm_j", "status"])
        for q, variant, total, flight, comm, status in rows:
            writer.writerow([repr(float(q)), variant, repr(total), repr(flight), repr(comm), status])


def build_parser():
    parser = argparse.ArgumentParser(description="Sweep mission energy over data demands.")
    parser.add_argument("--scenario", default=env_default("scenario", DEFAULT_SCENARIO))
    parser.add_argument(
        "--q-bits", type=parse_float_list,
        default=env_default("q_bits", ",".join(f"{q:g}" for q in DEFAULT_GRID)),
    )
    parser.add_argument(
        "--variants", type=lambda s: [v.strip() for v in s.split(",") if v.strip()],
        default=env_default("variants", ",".join(DEFAULT_VARIANTS)),
    )
    parser.add_argument("--max-iters", type=int, default=env_default("max_iters", "100"))
    parser.add_argument("--tol", type=float, default=env_default("tol", str(DEFAULT_TOL)))
    parser.add_argument("--seed", type=int, default=env_default("seed"))
    parser.add_argument("--margin-bits", type=float, default=env_default("margin_bits"))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default=env_default("out", "out"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = SweepSpec(
            q_grid=tuple(args.q_bits),
            variants=tuple(args.variants),
            scenario_path=args.scenario,
            out_dir=args.out,
            seed=args.seed,
            max_iters=args.max_iters,
            tol=args.tol,
            margin_bits=args.margin_bits,
        )
        cfg = load_scenario(spec.scenario_path)
    except (ScenarioError, OSError) as exc:
        fail(exc, {"path": args.scenario})
    except ValueError as exc:
        fail(exc)

    print(f"Sweep: {len(spec.q_grid)} demands x {len(spec.variants)} variants, jobs={args.jobs}")
    rows = run_sweep(spec, jobs=args.jobs, cfg=cfg)

    try:
        out = prepare_out_dir(spec.out_dir)
        write_rows(out / CSV_NAME, rows)
    except OSError as exc:
        fail(exc, {"path": spec.out_dir})

    failed = sum(1 for row in rows if row[5] != "ok")
    for q, variant, total, _, _, status in rows:
        print(f"  Q={q:>10.4g}  {variant:<14} {total:12.2f} J  {status}")

    set_output("points", len(rows))
    set_output("failed", failed)
    set_output("out_dir", str(out))


if __name__ == "__main__":
    main()
