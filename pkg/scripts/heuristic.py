"""
heuristic.py

Low-complexity planner that never calls a conic solver:

1. pair every UE with its closest IRS;
2. find each UE's best-rate point on the segment between the UE and its IRS;
3. fly a straight "toy" path from start to finish at the energy-efficient
   speed, splitting time equally between UEs, and record the fraction
   ``f_k`` of each UE's demand it would deliver;
4. place each transmit point between the best-rate point and its
   projection on the toy path according to ``min(f_k, 1)``;
5. visit the transmit points in shortest open-path order. Each segment
   serves the UE its leg leads to and gives spare time, the final leg to
   the finish included, to unfinished UEs by rate; hovering at the
   transmit points delivers what is left.

When every ``f_k >= 1`` the toy path itself is the plan.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass

import numpy as np
from scipy import optimize

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from channel import irs_ue_distance  # noqa: E402
from power import TrajectoryError, energy_efficient_speed, total_energy  # noqa: E402
from rate import build_rate_model, rate_at_positions  # noqa: E402
from trajectory import (  # noqa: E402
    HOVER_SAFETY,
    MIN_FLIGHT_TIME_S,
    VARIANT_HEURISTIC,
    PlanSolution,
    Trajectory,
    delivered_bits,
    demands_bits,
)

GRID_RESOLUTION_M = 0.1
EXACT_TSP_LIMIT = 12


@dataclass(eq=False)
class HeuristicPlan:
    pairing: list
    q_hat: np.ndarray
    q_bar: np.ndarray
    fractions: np.ndarray
    transmit_points: np.ndarray
    order: list
    solution: PlanSolution

    @property
    def trajectory(self):
        return self.solution.trajectory


def pair_ues(cfg):
    """Index of the nearest IRS (3-D distance) per UE, or None without IRSs."""
    if not cfg.irss:
        return [None] * cfg.n_ue
    pairing = []
    for ue in cfg.ues:
        dists = [irs_ue_distance(irs, ue) for irs in cfg.irss]
        pairing.append(int(np.argmin(dists)))
    return pairing


def _active(irs_w):
    return () if irs_w is None else (irs_w,)


def best_rate_point(cfg, ue_k, irs_w, model=None, resolution=GRID_RESOLUTION_M):
    """Horizontal point on the UE-IRS segment maximizing the single-IRS rate."""
    ue_xy = np.asarray(cfg.ues[ue_k].xy_m, dtype=float)
    if irs_w is None:
        return ue_xy
    if model is None:
        model = build_rate_model(cfg)
    irs_xy = np.asarray(cfg.irss[irs_w].xy_m, dtype=float)
    span = irs_xy - ue_xy
    length = float(np.linalg.norm(span))
    if length == 0.0:
        return ue_xy

    def rate(s):
        pts = ue_xy[None, :] + np.atleast_1d(s)[:, None] * span[None, :]
        return rate_at_positions(model, cfg, pts, ue_k, (irs_w,))

    grid = np.linspace(0.0, 1.0, max(2, math.ceil(length / resolution) + 1))
    values = rate(grid)
    i = int(np.argmax(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best = grid[i]
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda s: -float(rate(s)[0]),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-6 / length},
        )
        if -res.fun > values[i]:
            best = float(res.x)
    return ue_xy + best * span


def _leg_points(a, b, seg_max):
    """Waypoints after *a* that split the leg a -> b into pieces no longer than *seg_max*."""
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        return np.zeros((0, 2))
    count = math.ceil(length / seg_max - 1e-12)
    steps = np.linspace(0.0, 1.0, count + 1)[1:]
    return a[None, :] + steps[:, None] * (b - a)[None, :]


def _paired_rates(cfg, model, pairing, waypoints):
    starts = np.asarray(waypoints, dtype=float)[:-1]
    rates = np.zeros((starts.shape[0], cfg.n_ue))
    for k in range(cfg.n_ue):
        rates[:, k] = rate_at_positions(model, cfg, starts, k, _active(pairing[k]))
    return rates


def _toy_path(cfg):
    start = np.asarray(cfg.uav.start_xy_m, dtype=float)
    finish = np.asarray(cfg.uav.finish_xy_m, dtype=float)
    v_h = min(energy_efficient_speed(cfg.power), cfg.uav.v_max_mps)
    pts = _leg_points(start, finish, cfg.uav.seg_max_m)
    if len(pts) == 0:
        return np.array([start, finish]), np.array([MIN_FLIGHT_TIME_S])
    waypoints = np.vstack([start, pts])
    return waypoints, np.linalg.norm(np.diff(waypoints, axis=0), axis=1) / v_h


def toy_fractions(cfg, model=None, margin_bits=None, pairing=None):
    """Share of each UE's demand the straight start-to-finish flight delivers.

    Every segment is split equally between all UEs. UEs without demand get
    ``inf``.
    """
    if model is None:
        model = build_rate_model(cfg)
    if pairing is None:
        pairing = pair_ues(cfg)
    waypoints, times = _toy_path(cfg)
    rates = _paired_rates(cfg, model, pairing, waypoints)
    delivered = np.sum((times / cfg.n_ue)[:, None] * rates, axis=0)
    demand = demands_bits(cfg, margin_bits)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(demand > 0, delivered / np.where(demand > 0, demand, 1.0), np.inf)


def project_onto_segment(p, a, b):
    p, a, b = (np.asarray(x, dtype=float) for x in (p, a, b))
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return a.copy()
    s = min(1.0, max(0.0, float(np.dot(p - a, ab)) / denom))
    return a + s * ab


def transmit_points(f, q_hat, q_bar):
    """Move each best-rate point toward the toy path by ``min(f, 1)``."""
    g = np.minimum(np.asarray(f, dtype=float), 1.0)
    q_hat = np.asarray(q_hat, dtype=float).reshape(-1, 2)
    q_bar = np.asarray(q_bar, dtype=float).reshape(-1, 2)
    return q_hat + g[:, None] * (q_bar - q_hat)


# -- open-path TSP --------------------------------------------------------------


def path_length(order, points, start, end):
    route = [np.asarray(start, dtype=float)]
    route += [np.asarray(points[i], dtype=float) for i in order]
    route.append(np.asarray(end, dtype=float))
    return float(sum(np.linalg.norm(route[i + 1] - route[i]) for i in range(len(route) - 1)))


def _held_karp(d_start, d_end, dist):
    k = len(d_start)
    full = (1 << k) - 1
    cost = np.full((1 << k, k), np.inf)
    parent = np.full((1 << k, k), -1, dtype=int)
    for i in range(k):
        cost[1 << i, i] = d_start[i]
    for mask in range(1, full + 1):
        for j in range(k):
            here = cost[mask, j]
            if not (mask >> j) & 1 or here == np.inf:
                continue
            for nxt in range(k):
                if (mask >> nxt) & 1:
                    continue
                grown = mask | (1 << nxt)
                cand = here + dist[j, nxt]
                if cand < cost[grown, nxt]:
                    cost[grown, nxt] = cand
                    parent[grown, nxt] = j
    last = int(np.argmin(cost[full] + d_end))
    order = []
    mask = full
    while last != -1:
        order.append(last)
        prev = parent[mask, last]
        mask &= ~(1 << last)
        last = int(prev)
    return order[::-1]


def _two_opt(order, points, start, end):
    best = list(order)
    best_len = path_length(best, points, start, end)
    improved = True
    while improved:
        improved = False
        for i in range(len(best) - 1):
            for j in range(i + 1, len(best)):
                cand = best[:i] + best[i : j + 1][::-1] + best[j + 1 :]
                cand_len = path_length(cand, points, start, end)
                if cand_len < best_len - 1e-12:
                    best, best_len = cand, cand_len
                    improved = True
    return best


def open_path_tsp(points, start, end):
    """Visiting order of *points* minimizing the start -> points -> end length.

    Exact (Held-Karp) up to twelve points, nearest neighbor plus 2-opt
    beyond.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    k = pts.shape[0]
    if k <= 1:
        return list(range(k))
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if k <= EXACT_TSP_LIMIT:
        d_start = np.linalg.norm(pts - start, axis=1)
        d_end = np.linalg.norm(pts - end, axis=1)
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        return _held_karp(d_start, d_end, dist)

    remaining = list(range(k))
    order = []
    here = start
    while remaining:
        pick = min(remaining, key=lambda i: np.linalg.norm(pts[i] - here))
        remaining.remove(pick)
        order.append(pick)
        here = pts[pick]
    return _two_opt(order, pts, start, end)


# -- planning -----------------------------------------------------------------


def _match_times(tx, pairing, n_irs):
    if n_irs == 0:
        return None
    match = np.zeros((tx.shape[0], n_irs, tx.shape[1]))
    for k, w in enumerate(pairing):
        match[:, w, k] = tx[:, k]
    return match


def _toy_trajectory(cfg, pairing, served, n_irs):
    waypoints, times = _toy_path(cfg)
    tx = np.zeros((len(times), cfg.n_ue))
    tx[:, served] = (times / cfg.n_ue)[:, None]
    return Trajectory(
        waypoints=waypoints,
        flight_times=times,
        tx_times=tx,
        match_times=_match_times(tx, pairing, n_irs),
    )


def _moving_schedule(times, dests, rates, demand):
    """TDMA while moving: each segment first serves the UE its leg leads to,
    then spends spare time on the unfinished UEs in order of rate."""
    need = np.array(demand, dtype=float)
    tx = np.zeros((len(times), need.shape[0]))
    for n, (t, dest) in enumerate(zip(times, dests)):
        left = t
        for k in sorted(range(need.shape[0]), key=lambda k: (k != dest, -rates[n, k])):
            if left <= 0:
                break
            if need[k] <= 0 or rates[n, k] <= 0:
                continue
            share = min(left, need[k] / rates[n, k] * HOVER_SAFETY)
            tx[n, k] = share
            need[k] -= share * rates[n, k]
            left -= share
    return tx


def _route_trajectory(cfg, model, pairing, order, q_star, demand):
    uav = cfg.uav
    v_h = min(energy_efficient_speed(cfg.power), uav.v_max_mps)
    start = np.asarray(uav.start_xy_m, dtype=float)
    finish = np.asarray(uav.finish_xy_m, dtype=float)

    waypoints = [start]
    times, dests, arrival = [], [], {}
    here = start
    for k in list(order) + [None]:
        dest = finish if k is None else q_star[k]
        for p in _leg_points(here, dest, uav.seg_max_m):
            times.append(float(np.linalg.norm(p - waypoints[-1])) / v_h)
            waypoints.append(p)
            dests.append(k)
        if k is not None:
            arrival[k] = len(waypoints) - 1
        here = dest
    if len(waypoints) == 1:
        waypoints.append(finish.copy())
        times.append(MIN_FLIGHT_TIME_S)
        dests.append(None)

    rates = _paired_rates(cfg, model, pairing, np.array(waypoints))
    moving = _moving_schedule(times, dests, rates, demand)
    moved = np.sum(moving * rates, axis=0)
    tx = list(moving)
    hovers = []
    for k in order:
        residual = demand[k] - moved[k]
        if residual <= 0:
            continue
        rate = float(rate_at_positions(model, cfg, q_star[k][None, :], k, _active(pairing[k]))[0])
        if rate <= 0:
            raise TrajectoryError(f"UE {k} has zero expected rate at its transmit point")
        hovers.append((arrival[k], k, residual / rate * HOVER_SAFETY))
    for idx, k, tau in sorted(hovers, key=lambda h: h[0], reverse=True):
        row = np.zeros(cfg.n_ue)
        row[k] = tau
        waypoints.insert(idx + 1, np.array(q_star[k], dtype=float))
        times.insert(idx, tau)
        tx.insert(idx, row)

    tx = np.array(tx)
    return Trajectory(
        waypoints=np.array(waypoints),
        flight_times=np.array(times),
        tx_times=tx,
        match_times=_match_times(tx, pairing, model.n_irs),
    )


def build_heuristic_plan(cfg, margin_bits=None, model=None) -> HeuristicPlan:
    if model is None:
        model = build_rate_model(cfg)
    pairing = pair_ues(cfg)
    demand = demands_bits(cfg, margin_bits)
    served = demand > 0
    start = np.asarray(cfg.uav.start_xy_m, dtype=float)
    finish = np.asarray(cfg.uav.finish_xy_m, dtype=float)

    f = toy_fractions(cfg, model, margin_bits, pairing)
    q_hat = np.array([best_rate_point(cfg, k, pairing[k], model) for k in range(cfg.n_ue)])
    q_bar = np.array([project_onto_segment(p, start, finish) for p in q_hat])
    q_star = transmit_points(f, q_hat, q_bar)

    if np.all(f >= 1.0):
        order = []
        traj = _toy_trajectory(cfg, pairing, served, model.n_irs)
    else:
        targets = [k for k in range(cfg.n_ue) if served[k]]
        order = [targets[i] for i in open_path_tsp(q_star[targets], start, finish)]
        traj = _route_trajectory(cfg, model, pairing, order, q_star, demand)

    solution = PlanSolution(
        trajectory=traj,
        energy=total_energy(traj, cfg.uav.tx_power_w, cfg.power),
        delivered_bits=delivered_bits(traj, cfg, model),
        convergence=[],
        variant=VARIANT_HEURISTIC,
    )
    return HeuristicPlan(
        pairing=pairing,
        q_hat=q_hat,
        q_bar=q_bar,
        fractions=f,
        transmit_points=q_star,
        order=order,
        solution=solution,
    )


def plan(cfg, margin_bits=None, model=None) -> PlanSolution:
    return build_heuristic_plan(cfg, margin_bits, model).solution
