#!/usr/bin/env python3
"""
rate_validate.py

Compares the closed-form expected rate with a Monte Carlo estimate along a
UAV track, for one UE with every IRS reflecting. The track is the straight
line from the scenario's start to its finish point unless --track names a
CSV file with x_m and y_m columns (a trajectory.csv written by optimize.py
qualifies).

Writes rate_validation.csv with the columns
    position_index, x_m, y_m, rate_closed_form_bps, rate_mc_bps, mc_stderr_bps

Outputs (written to GITHUB_OUTPUT):
    max_rel_gap       - largest |closed form - MC| / MC along the track
    jensen_violations - positions where closed form < MC - 3 stderr
    out_dir
"""

import argparse
import csv
import os
import sys

import numpy as np

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from channel import GeometryError, monte_carlo_rate  # noqa: E402
from cli_utils import DEFAULT_SCENARIO, env_default, fail, prepare_out_dir, set_output  # noqa: E402
from rate import build_rate_model, rate_at_positions  # noqa: E402
from scenario import ScenarioError, load_scenario  # noqa: E402

CSV_NAME = "rate_validation.csv"


def track_points(cfg, n_points):
    """*n_points* evenly spaced positions from start to finish."""
    start = np.asarray(cfg.uav.start_xy_m, dtype=float)
    finish = np.asarray(cfg.uav.finish_xy_m, dtype=float)
    s = np.linspace(0.0, 1.0, n_points)
    return start[None, :] + s[:, None] * (finish - start)[None, :]


def load_track(path):
    """UAV positions from the x_m and y_m columns of a CSV file, in file order."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x_m", "y_m"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: track file lacks columns {sorted(missing)}")
        points = [(float(row["x_m"]), float(row["y_m"])) for row in reader]
    if not points:
        raise ValueError(f"{path}: track file has no positions")
    return np.array(points, dtype=float)


def validate_track(cfg, track, ue_index, n_samples, seed, jobs=1, exact_second_moment=False):
    """Closed-form and Monte Carlo rates (with stderr) at each track position."""
    model = build_rate_model(cfg, exact_second_moment=exact_second_moment)
    active = model.all_irs()
    closed = rate_at_positions(model, cfg, track, ue_index, active)
    rows = []
    for i, xy in enumerate(track):
        est = monte_carlo_rate(cfg, xy, ue_index, active, n_samples, seed, jobs=jobs)
        rows.append((i, float(xy[0]), float(xy[1]), float(closed[i]), est.rate_bps, est.stderr_bps))
    return rows


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["position_index", "x_m", "y_m", "rate_closed_form_bps", "rate_mc_bps", "mc_stderr_bps"]
        )
        for row in rows:
            writer.writerow([row[0]] + [repr(v) for v in row[1:]])


def build_parser():
    parser = argparse.ArgumentParser(description="Check the closed-form rate against Monte Carlo.")
    parser.add_argument("--scenario", default=env_default("scenario", DEFAULT_SCENARIO))
    parser.add_argument("--ue", type=int, default=0, help="UE index")
    parser.add_argument("--points", type=int, default=50, help="track positions")
    parser.add_argument(
        "--track", default=env_default("track"),
        help="CSV with x_m and y_m columns; replaces the start-finish line",
    )
    parser.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples per position")
    parser.add_argument("--seed", type=int, default=env_default("seed"))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--exact-second-moment", action="store_true")
    parser.add_argument("--out", default=env_default("out", "out"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.samples < 1 or args.points < 1:
        fail(ValueError("--samples and --points must be >= 1"))

    try:
        cfg = load_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        fail(exc, {"path": args.scenario})
    if not 0 <= args.ue < cfg.n_ue:
        fail(IndexError(f"UE index {args.ue} out of range"), {"n_ue": cfg.n_ue})
    seed = cfg.seed if args.seed is None else args.seed

    if args.track:
        try:
            track = load_track(args.track)
        except (ValueError, OSError) as exc:
            fail(exc, {"path": args.track})
    else:
        track = track_points(cfg, args.points)

    print(f"Scenario: {args.scenario}; UE {args.ue}; {len(track)} positions x {args.samples} samples")
    try:
        rows = validate_track(
            cfg,
            track,
            args.ue,
            args.samples,
            seed,
            jobs=args.jobs,
            exact_second_moment=args.exact_second_moment,
        )
    except GeometryError as exc:
        fail(exc)

    try:
        out = prepare_out_dir(args.out)
        write_rows(out / CSV_NAME, rows)
    except OSError as exc:
        fail(exc, {"path": args.out})

    closed = np.array([r[3] for r in rows])
    mc = np.array([r[4] for r in rows])
    stderr = np.array([r[5] for r in rows])
    gaps = np.abs(closed - mc) / np.maximum(mc, 1e-300)
    violations = int(np.count_nonzero(closed < mc - 3.0 * stderr))
    print(f"max relative gap: {gaps.max():.4%}")
    print(f"positions below MC - 3 stderr: {violations}")

    set_output("max_rel_gap", f"{gaps.max():.6g}")
    set_output("jensen_violations", violations)
    set_output("out_dir", str(out))


if __name__ == "__main__":
    main()
