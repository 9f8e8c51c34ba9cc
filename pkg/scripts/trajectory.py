"""
trajectory.py

The discretized path shared by every planner: waypoints, per-segment flight
times, TDMA transmit times and (for the IRS-matching planner) per-IRS
matching times. Also builds the hover-and-transmit seed plan and exports
trajectories and convergence traces as CSV.

Segment ``n`` runs from ``waypoints[n]`` to ``waypoints[n + 1]``; its
channels are evaluated at the start waypoint.
"""

from __future__ import annotations

import csv
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from channel import link_distances  # noqa: E402
from power import EnergyBreakdown, TrajectoryError, energy_efficient_speed  # noqa: E402
from rate import build_rate_model, rate_and_gradient  # noqa: E402

VARIANT_SISU = "sisu"
VARIANT_GENERAL = "mimu-general"
VARIANT_MATCHING = "mimu-matching"
VARIANT_NO_IRS = "no-irs"
VARIANT_HEURISTIC = "heuristic"
SCA_VARIANTS = (VARIANT_SISU, VARIANT_GENERAL, VARIANT_MATCHING, VARIANT_NO_IRS)
ALL_VARIANTS = SCA_VARIANTS + (VARIANT_HEURISTIC,)

VALIDATE_SLACK = 1e-6
HOVER_SAFETY = 1.0 + 1e-6
MIN_FLIGHT_TIME_S = 1e-3


@dataclass(eq=False)
class Trajectory:
    waypoints: np.ndarray
    flight_times: np.ndarray
    tx_times: np.ndarray
    match_times: np.ndarray | None = None

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        self.flight_times = np.asarray(self.flight_times, dtype=float).reshape(-1)
        n = self.n_segments
        self.tx_times = np.asarray(self.tx_times, dtype=float).reshape(n, -1)
        if self.match_times is not None:
            self.match_times = np.asarray(self.match_times, dtype=float)
        if self.flight_times.shape[0] != n:
            raise TrajectoryError(
                f"{n} segments but {self.flight_times.shape[0]} flight times"
            )

    @property
    def n_segments(self):
        return self.waypoints.shape[0] - 1

    @property
    def deltas(self):
        return np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)

    @property
    def speeds(self):
        t = self.flight_times
        return np.divide(self.deltas, t, out=np.zeros_like(t), where=t > 0)

    @property
    def duration_s(self):
        return float(np.sum(self.flight_times))

    def copy(self):
        return Trajectory(
            waypoints=self.waypoints.copy(),
            flight_times=self.flight_times.copy(),
            tx_times=self.tx_times.copy(),
            match_times=None if self.match_times is None else self.match_times.copy(),
        )


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective_j: float
    max_constraint_violation: float
    true_delivered_bits_min_ratio: float


@dataclass(eq=False)
class PlanSolution:
    trajectory: Trajectory
    energy: EnergyBreakdown
    delivered_bits: np.ndarray
    convergence: list[IterationRecord] = field(default_factory=list)
    variant: str = VARIANT_GENERAL

    @property
    def objective_trace(self):
        return [rec.objective_j for rec in self.convergence]


def demands_bits(cfg, margin_bits=None):
    """Per-UE data requirement including the delivery margin."""
    margin = cfg.channel.data_margin_bits if margin_bits is None else float(margin_bits)
    return np.array([ue.data_bits + margin for ue in cfg.ues], dtype=float)


def rate_model_for(cfg, variant, exact_second_moment=False):
    """Rate model matching a planner variant (the no-IRS benchmark drops every IRS)."""
    return build_rate_model(
        cfg,
        exact_second_moment=exact_second_moment,
        include_irs=variant != VARIANT_NO_IRS,
    )


def segment_rates(cfg, model, waypoints):
    """Rates at each segment start: (N, K) with all model IRSs active."""
    starts = np.asarray(waypoints, dtype=float)[:-1]
    d_ue, d_irs = link_distances(cfg, starts)
    rates = np.zeros((starts.shape[0], cfg.n_ue))
    active = model.all_irs()
    for k in range(cfg.n_ue):
        dists = np.column_stack([d_ue[:, k]] + [d_irs[:, w] for w in active])
        rates[:, k], _ = rate_and_gradient(model, k, dists, active)
    return rates


def matching_rates(cfg, model, waypoints):
    """Single-IRS rates at each segment start: (N, W, K)."""
    starts = np.asarray(waypoints, dtype=float)[:-1]
    d_ue, d_irs = link_distances(cfg, starts)
    rates = np.zeros((starts.shape[0], model.n_irs, cfg.n_ue))
    for w in range(model.n_irs):
        for k in range(cfg.n_ue):
            dists = np.column_stack([d_ue[:, k], d_irs[:, w]])
            rates[:, w, k], _ = rate_and_gradient(model, k, dists, (w,))
    return rates


def delivered_bits(traj: Trajectory, cfg, model) -> np.ndarray:
    """Bits each UE receives under the closed-form rate.

    Trajectories carrying matching times are credited per matched IRS,
    everything else with every IRS of *model* reflecting at once.
    """
    if traj.n_segments == 0:
        return np.zeros(cfg.n_ue)
    if traj.match_times is not None:
        rates = matching_rates(cfg, model, traj.waypoints)
        return np.einsum("nwk,nwk->k", traj.match_times, rates)
    rates = segment_rates(cfg, model, traj.waypoints)
    return np.sum(traj.tx_times * rates, axis=0)


def constraint_violations(traj: Trajectory, cfg):
    """Amount by which each structural constraint is exceeded, keyed by name."""
    uav = cfg.uav
    deltas = traj.deltas
    t = traj.flight_times
    out = {
        "endpoints": max(
            float(np.linalg.norm(traj.waypoints[0] - np.asarray(uav.start_xy_m))),
            float(np.linalg.norm(traj.waypoints[-1] - np.asarray(uav.finish_xy_m))),
        ),
        "flight_time": float(np.max(-t, initial=0.0)),
        "segment_length": float(np.max(deltas - uav.seg_max_m, initial=0.0)),
        "speed": float(np.max(deltas - uav.v_max_mps * t, initial=0.0)),
        "tx_time": float(np.max(-traj.tx_times, initial=0.0)),
        "tdma": float(np.max(np.sum(traj.tx_times, axis=1) - t, initial=0.0)),
    }
    if traj.match_times is not None:
        out["match_time"] = float(np.max(-traj.match_times, initial=0.0))
        out["matching"] = float(
            np.max(np.sum(traj.match_times, axis=1) - traj.tx_times, initial=0.0)
        )
    return out


def max_violation(traj, cfg):
    return max(constraint_violations(traj, cfg).values())


def validate(traj: Trajectory, cfg) -> list[str]:
    """Describe every violated trajectory invariant; empty when all hold."""
    problems = []
    uav = cfg.uav
    if traj.tx_times.shape[1] != cfg.n_ue:
        problems.append(f"shape: tx_times has {traj.tx_times.shape[1]} columns for {cfg.n_ue} UEs")
        return problems
    if traj.n_segments < 1:
        problems.append("shape: trajectory has no segments")
        return problems

    if np.linalg.norm(traj.waypoints[0] - np.asarray(uav.start_xy_m)) > VALIDATE_SLACK:
        problems.append(f"endpoints: first waypoint {traj.waypoints[0].tolist()} is not the start")
    if np.linalg.norm(traj.waypoints[-1] - np.asarray(uav.finish_xy_m)) > VALIDATE_SLACK:
        problems.append(f"endpoints: last waypoint {traj.waypoints[-1].tolist()} is not the finish")

    deltas = traj.deltas
    t = traj.flight_times
    tx_sum = np.sum(traj.tx_times, axis=1)
    for n in range(traj.n_segments):
        if t[n] <= 0:
            problems.append(f"flight_time: segment {n} has flight time {t[n]}")
        if deltas[n] > uav.seg_max_m + VALIDATE_SLACK:
            problems.append(
                f"segment_length: segment {n} spans {deltas[n]:.6f} m > seg_max_m {uav.seg_max_m}"
            )
        if deltas[n] > uav.v_max_mps * t[n] + VALIDATE_SLACK:
            problems.append(
                f"speed: segment {n} needs {deltas[n] / max(t[n], 1e-300):.6f} m/s > v_max_mps {uav.v_max_mps}"
            )
        if np.any(traj.tx_times[n] < -VALIDATE_SLACK):
            problems.append(f"tx_time: segment {n} has a negative transmit time")
        if tx_sum[n] > t[n] + VALIDATE_SLACK:
            problems.append(f"tdma: segment {n} transmit times sum to {tx_sum[n]:.6f} s > {t[n]:.6f} s")

    if traj.match_times is not None:
        m = traj.match_times
        if m.ndim != 3 or m.shape[0] != traj.n_segments or m.shape[2] != cfg.n_ue:
            problems.append(f"shape: match_times has shape {m.shape}")
            return problems
        if np.any(m < -VALIDATE_SLACK):
            problems.append("match_time: negative matching time")
        excess = np.sum(m, axis=1) - traj.tx_times
        for n, k in zip(*np.nonzero(excess > VALIDATE_SLACK)):
            problems.append(f"matching: segment {n}, UE {k} matching times exceed the transmit time")
    return problems


def nearest_neighbor_order(start, points):
    """Greedy visiting order over *points* starting from *start*."""
    remaining = list(range(len(points)))
    order = []
    here = np.asarray(start, dtype=float)
    while remaining:
        dists = [np.linalg.norm(np.asarray(points[i]) - here) for i in remaining]
        pick = remaining.pop(int(np.argmin(dists)))
        order.append(pick)
        here = np.asarray(points[pick], dtype=float)
    return order


def _split_counts(lengths, total, seg_max):
    """Segments per leg: enough for *seg_max*, remaining budget spread by length."""
    lengths = np.asarray(lengths, dtype=float)
    base = np.where(lengths > 0, np.ceil(lengths / seg_max - 1e-12), 0).astype(int)
    extra = total - int(base.sum())
    if extra <= 0 or lengths.sum() <= 0:
        return base
    share = extra * lengths / lengths.sum()
    counts = base + np.floor(share).astype(int)
    leftover = extra - int(np.floor(share).sum())
    for i in np.argsort(-(share - np.floor(share)), kind="stable")[:leftover]:
        counts[i] += 1
    return counts


def _discretize(a, b, count):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    steps = np.linspace(0.0, 1.0, count + 1)[1:]
    return a[None, :] + steps[:, None] * (b - a)[None, :]


def best_irs_matching(tx_times, per_irs_rates):
    """Matching times putting each slot's whole transmit time on its best-rate IRS.

    *per_irs_rates* is (N, W, K); ties go to the lowest IRS index.
    """
    rates = np.asarray(per_irs_rates, dtype=float)
    best = np.argmax(rates, axis=1)
    match = np.zeros(rates.shape)
    np.put_along_axis(match, best[:, None, :], np.asarray(tx_times, dtype=float)[:, None, :], axis=1)
    return match


def rematch(traj: Trajectory, cfg, model) -> Trajectory:
    """Copy of a matching trajectory with every slot moved onto its best-rate IRS.

    Energy is unchanged and no UE receives fewer bits.
    """
    out = traj.copy()
    out.match_times = best_irs_matching(traj.tx_times, matching_rates(cfg, model, traj.waypoints))
    return out


def _variant_rates(cfg, model, waypoints, variant):
    """Effective per-segment rates (N, K) and, for matching, per-IRS rates."""
    if variant == VARIANT_MATCHING:
        per_irs = matching_rates(cfg, model, waypoints)
        return per_irs.max(axis=1), per_irs
    return segment_rates(cfg, model, waypoints), None


def initial_plan(
    cfg,
    n_segments_hint=None,
    *,
    variant=VARIANT_GENERAL,
    model=None,
    margin_bits=None,
    transmit_while_moving=True,
) -> Trajectory:
    """Feasible seed: visit every UE in nearest-neighbor order and hover to finish delivery.

    Moving segments fly at the energy-efficient speed; with
    *transmit_while_moving* every UE that still needs data gets an equal
    share of each moving segment. A hover segment above each such UE then
    covers what is left. For the matching variant every slot is matched to
    its best-rate IRS and rates are sized with that IRS alone.
    """
    if model is None:
        model = rate_model_for(cfg, variant)
    if variant == VARIANT_MATCHING and model.n_irs == 0:
        raise TrajectoryError("the matching planner needs at least one IRS")
    uav = cfg.uav
    demand = demands_bits(cfg, margin_bits)
    served = demand > 0
    v_cruise = min(energy_efficient_speed(cfg.power), uav.v_max_mps)

    order = nearest_neighbor_order(uav.start_xy_m, [ue.xy_m for ue in cfg.ues])
    stops = [np.asarray(uav.start_xy_m, dtype=float)]
    stops += [np.asarray(cfg.ues[k].xy_m, dtype=float) for k in order]
    stops.append(np.asarray(uav.finish_xy_m, dtype=float))
    legs = [float(np.linalg.norm(stops[i + 1] - stops[i])) for i in range(len(stops) - 1)]
    path_len = sum(legs)

    n_hover = int(np.count_nonzero(served))
    if n_segments_hint is None:
        n_segments_hint = math.ceil(1.5 * path_len / uav.seg_max_m)
    counts = _split_counts(legs, max(0, n_segments_hint - n_hover), uav.seg_max_m)

    # Waypoints with a repeated point for each hover.
    waypoints = [stops[0]]
    hover_at = {}
    for i, count in enumerate(counts):
        if count:
            waypoints.extend(_discretize(stops[i], stops[i + 1], int(count)))
        if i < len(order):
            k = order[i]
            if served[k]:
                hover_at[k] = len(waypoints) - 1
                waypoints.append(stops[i + 1].copy())
    if len(waypoints) == 1:
        waypoints.append(stops[-1].copy())
    waypoints = np.array(waypoints)
    n_seg = waypoints.shape[0] - 1

    deltas = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    times = np.where(deltas > 0, deltas / v_cruise, MIN_FLIGHT_TIME_S)
    tx = np.zeros((n_seg, cfg.n_ue))
    moving = deltas > 0
    if transmit_while_moving and served.any():
        tx[np.ix_(moving, served)] = (times[moving] / np.count_nonzero(served))[:, None]

    rates, per_irs = _variant_rates(cfg, model, waypoints, variant)
    moved = np.sum(tx * rates, axis=0)
    for k, n in hover_at.items():
        residual = demand[k] - moved[k]
        if residual <= 0:
            continue
        if rates[n, k] <= 0:
            raise TrajectoryError(
                f"UE {k} has zero expected rate overhead; data demand cannot be met"
            )
        tau = residual / rates[n, k] * HOVER_SAFETY
        tx[n, k] = tau
        times[n] = tau

    match = None
    if variant == VARIANT_MATCHING:
        match = best_irs_matching(tx, per_irs)
    return Trajectory(waypoints=waypoints, flight_times=times, tx_times=tx, match_times=match)


# -- export -------------------------------------------------------------------


def write_trajectory_csv(traj: Trajectory, path):
    """One row per segment (plus the final waypoint) with speed and schedule."""
    k_count = traj.tx_times.shape[1]
    header = ["n", "x_m", "y_m", "delta_m", "T_s", "V_mps"]
    header += [f"tau_{k + 1}_s" for k in range(k_count)]
    if traj.match_times is not None:
        w_count = traj.match_times.shape[1]
        header += [f"eta_{w + 1}_{k + 1}_s" for w in range(w_count) for k in range(k_count)]
    deltas = traj.deltas
    speeds = traj.speeds
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for n in range(traj.n_segments):
            row = [n + 1, *_fmt(traj.waypoints[n]), _f(deltas[n]), _f(traj.flight_times[n]), _f(speeds[n])]
            row += [_f(v) for v in traj.tx_times[n]]
            if traj.match_times is not None:
                row += [_f(v) for v in traj.match_times[n].reshape(-1)]
            writer.writerow(row)
        last = [traj.n_segments + 1, *_fmt(traj.waypoints[-1])]
        writer.writerow(last + [""] * (len(header) - len(last)))


def write_convergence_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iter", "objective_j", "max_constraint_violation", "true_delivered_bits_min_ratio"]
        )
        for rec in records:
            writer.writerow(
                [
                    rec.iteration,
                    _f(rec.objective_j),
                    _f(rec.max_constraint_violation),
                    _f(rec.true_delivered_bits_min_ratio),
                ]
            )


def _f(value):
    return repr(float(value))


def _fmt(xy):
    return [_f(xy[0]), _f(xy[1])]
