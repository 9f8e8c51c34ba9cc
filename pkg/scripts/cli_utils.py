#!/usr/bin/env python3
"""
cli_utils.py

Shared helpers for the planner entry scripts: INPUT_* fallbacks, GITHUB_OUTPUT
writing, JSON failure reports and the per-variant dispatch.
"""

import json
import os
import sys
from pathlib import Path

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from heuristic import build_heuristic_plan  # noqa: E402
from sca import ScaOptions, matching_extraction, sca_optimize  # noqa: E402
from trajectory import (  # noqa: E402
    VARIANT_HEURISTIC,
    VARIANT_MATCHING,
    write_convergence_csv,
    write_trajectory_csv,
)

DEFAULT_SCENARIO = str(Path(_SCRIPTS_DIR).parent / "scenarios" / "default.json")


def set_output(key, value):
    """Write a key=value pair to GITHUB_OUTPUT.

    Strips newline and carriage-return characters from values to prevent
    output injection through scenario-controlled strings.
    """
    output_file = os.environ.get("GITHUB_OUTPUT", "")
    if output_file:
        sanitized = str(value).replace("\n", "").replace("\r", "")
        with open(output_file, "a") as f:
            f.write(f"{key}={sanitized}\n")


def env_default(name, default=None):
    """Value of ``INPUT_<NAME>`` when set and non-empty, else *default*."""
    value = os.environ.get(f"INPUT_{name.upper()}", "")
    return value if value.strip() else default


def fail(exc, context=None):
    """Report *exc* as one JSON object on stderr and exit with status 1."""
    payload = {
        "error": str(exc),
        "type": type(exc).__name__,
        "context": {**getattr(exc, "context", {}), **(context or {})},
    }
    print(json.dumps(payload, default=str), file=sys.stderr)
    sys.exit(1)


def parse_float_list(text):
    """Parse ``"0,5e7,1e8"`` into floats (argparse type)."""
    return [float(item) for item in str(text).split(",") if item.strip()]


def prepare_out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")


def run_variant(cfg, variant, opts: ScaOptions | None = None, margin_bits=None):
    """Plan *cfg* with one variant; returns the solution and the matching report if any."""
    if variant == VARIANT_HEURISTIC:
        return build_heuristic_plan(cfg, margin_bits=margin_bits).solution, None
    opts = opts or ScaOptions(variant=variant, margin_bits=margin_bits)
    solution = sca_optimize(cfg, opts)
    report = matching_extraction(solution, cfg) if variant == VARIANT_MATCHING else None
    return solution, report


def energy_summary(solution, cfg, matching=None):
    summary = {
        "variant": solution.variant,
        **solution.energy.as_dict(),
        "delivered_bits": [float(b) for b in solution.delivered_bits],
        "demand_bits": [ue.data_bits for ue in cfg.ues],
        "n_segments": solution.trajectory.n_segments,
        "duration_s": solution.trajectory.duration_s,
        "iterations": max(0, len(solution.convergence) - 1),
    }
    if matching is not None:
        summary["matching_choices"] = matching.choices.tolist()
        summary["matching_degenerate"] = [list(map(int, nk)) for nk in matching.degenerate]
    return summary


def write_solution(out_dir, solution, cfg, matching=None, prefix=""):
    """Write trajectory CSV, convergence CSV (SCA runs) and the energy summary."""
    out = prepare_out_dir(out_dir)
    write_trajectory_csv(solution.trajectory, out / f"{prefix}trajectory.csv")
    if solution.convergence:
        write_convergence_csv(solution.convergence, out / f"{prefix}convergence.csv")
    write_json(out / f"{prefix}energy.json", energy_summary(solution, cfg, matching))
    return out
