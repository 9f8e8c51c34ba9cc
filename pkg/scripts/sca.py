"""
sca.py

Successive convex approximation for the joint trajectory, speed and TDMA
schedule. Each iteration convexifies the energy-minimization problem
around the current plan:

* data and rate couplings use slacks ``A^2 / tau <= R~`` where ``R~`` is
  the first-order bound of the expected rate over the distance slacks
  ``u`` (UAV-IRS) and ``v`` (UAV-UE), and the data constraint uses the
  linearized ``2 A0 A - A0^2``;
* the induced-power term uses the slack ``y`` with ``T^4 / y^2`` bounded
  by the linearization of ``y^2 + ||q[n+1] - q[n]||^2 / v0^2``.

Every iterate is re-evaluated with the true expected rate and true flight
energy before it is accepted, so the reported objective never increases.

Variants: ``mimu-general`` (all IRSs reflect for every UE), ``mimu-matching``
(each slice of transmit time is matched to one IRS), ``no-irs`` (the IRSs
are ignored) and ``sisu`` (one IRS, one UE; same builder). Matching plans
are re-matched to the best-rate IRS of every slot after each accepted step.

Rates inside the programs are in Mbit/s and data in Mbit.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from pathlib import Path

import cvxpy as cp
import numpy as np

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from channel import link_distances  # noqa: E402
from conic import DEFAULT_TOL, ConicProgram, dump_cbf, solve  # noqa: E402
from power import blade_drag_coeff, induced_slack, parasite_coeff, total_energy  # noqa: E402
from rate import build_rate_model, rate_and_gradient  # noqa: E402
from trajectory import (  # noqa: E402
    MIN_FLIGHT_TIME_S,
    SCA_VARIANTS,
    VARIANT_GENERAL,
    VARIANT_MATCHING,
    VARIANT_SISU,
    IterationRecord,
    PlanSolution,
    Trajectory,
    delivered_bits,
    demands_bits,
    initial_plan,
    matching_rates,
    max_violation,
    rate_model_for,
    rematch,
)

MBIT = 1e6
RESIDUAL_ACCEPT = 1e-5
TIGHTNESS_TOL = 1e-5
MIN_MATCH_TIME_S = 1e-6
MATCH_MASS = 1.0 - 1e-3


class ScaError(ValueError):
    """The SCA run cannot start or continue; carries the last good plan if any."""

    def __init__(self, message, last_solution=None, context=None):
        super().__init__(message)
        self.last_solution = last_solution
        self.context = context or {}


@dataclass(frozen=True)
class ScaOptions:
    variant: str = VARIANT_GENERAL
    max_iters: int = 100
    rel_decrease_threshold: float = 1e-3
    margin_bits: float | None = None
    solver_tol: float = DEFAULT_TOL
    min_flight_time_s: float = MIN_FLIGHT_TIME_S
    n_segments_hint: int | None = None
    transmit_while_moving: bool = True
    exact_second_moment: bool = False
    max_halvings: int = 8
    verbose: bool = False
    dump_dir: str | None = None

    def __post_init__(self):
        if self.variant not in SCA_VARIANTS:
            raise ValueError(f"unknown SCA variant {self.variant!r}")
        if self.rel_decrease_threshold <= 0:
            raise ValueError("rel_decrease_threshold must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(eq=False)
class LocalPoint:
    """Slack values of a plan, tight at its waypoints.

    ``rates``/``grads`` are (N, K) / (N, K, 1 + W) for the general variant,
    with gradient columns ``[d/dv_nk, d/du_n1, ...]``, and (N, W, K) /
    (N, W, K, 2) for matching. ``amp`` holds ``A = sqrt(tau R)`` in
    sqrt(Mbit) (``sqrt(eta R)`` for matching).
    """

    trajectory: Trajectory
    deltas: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    rates: np.ndarray
    grads: np.ndarray
    amp: np.ndarray
    matching: bool = False


def local_point_from(traj: Trajectory, cfg, model, matching=False) -> LocalPoint:
    starts = traj.waypoints[:-1]
    d_ue, d_irs = link_distances(cfg, starts)
    d_irs = d_irs[:, : model.n_irs] if model.n_irs else np.zeros((starts.shape[0], 0))
    n_seg, n_ue, n_irs = traj.n_segments, cfg.n_ue, model.n_irs

    if matching:
        rates = np.zeros((n_seg, n_irs, n_ue))
        grads = np.zeros((n_seg, n_irs, n_ue, 2))
        for w in range(n_irs):
            for k in range(n_ue):
                dists = np.column_stack([d_ue[:, k], d_irs[:, w]])
                rates[:, w, k], grads[:, w, k, :] = rate_and_gradient(model, k, dists, (w,))
        amp = np.sqrt(np.maximum(traj.match_times, 0.0) * rates / MBIT)
    else:
        rates = np.zeros((n_seg, n_ue))
        grads = np.zeros((n_seg, n_ue, 1 + n_irs))
        active = model.all_irs()
        for k in range(n_ue):
            dists = np.column_stack([d_ue[:, k], d_irs])
            rates[:, k], grads[:, k, :] = rate_and_gradient(model, k, dists, active)
        amp = np.sqrt(np.maximum(traj.tx_times, 0.0) * rates / MBIT)

    return LocalPoint(
        trajectory=traj,
        deltas=traj.deltas,
        y=induced_slack(traj.deltas, traj.flight_times, cfg.power),
        u=d_irs,
        v=d_ue,
        rates=rates,
        grads=grads,
        amp=amp,
        matching=matching,
    )


def check_local_point(local: LocalPoint, cfg, model):
    """Raise :class:`ScaError` unless every slack is consistent with its definition."""
    traj = local.trajectory
    d_ue, d_irs = link_distances(cfg, traj.waypoints[:-1])
    d_irs = d_irs[:, : model.n_irs]
    problems = []
    if np.any(local.u < d_irs - 1e-9):
        problems.append("u below the UAV-IRS distance")
    if np.any(local.v < d_ue - 1e-9):
        problems.append("v below the UAV-UE distance")
    if np.any(local.y <= 0):
        problems.append("nonpositive induced-power slack")
    times = traj.match_times if local.matching else traj.tx_times
    if times is None:
        problems.append("matching local point without matching times")
    elif np.any(local.amp**2 > times * local.rates / MBIT * (1 + 1e-9) + 1e-12):
        problems.append("A^2 exceeds tau * R")
    if problems:
        raise ScaError("inconsistent local point: " + "; ".join(problems))


def _check_variant(cfg, variant, model):
    if variant == VARIANT_SISU and (cfg.n_irs != 1 or cfg.n_ue != 1):
        raise ScaError(
            f"sisu needs exactly one IRS and one UE, got {cfg.n_irs} and {cfg.n_ue}",
            context={"variant": variant},
        )
    if variant == VARIANT_MATCHING and model.n_irs == 0:
        raise ScaError("mimu-matching needs at least one IRS", context={"variant": variant})


def _distance_slacks(prog, cfg, model, starts):
    """SOC-bounded slacks u (N, W) and v (N, K) on the 3-D link distances."""
    n_seg = starts.shape[0]
    h = cfg.uav.altitude_m
    u = None
    if model.n_irs:
        u = prog.variable("u", (n_seg, model.n_irs))
        for w in range(model.n_irs):
            irs = cfg.irss[w]
            prog.add_soc(
                u[:, w],
                [starts[:, 0] - irs.xy_m[0], starts[:, 1] - irs.xy_m[1], np.full(n_seg, h - irs.height_m)],
                "irs_distance",
            )
    v = prog.variable("v", (n_seg, cfg.n_ue))
    for k, ue in enumerate(cfg.ues):
        prog.add_soc(
            v[:, k],
            [starts[:, 0] - ue.xy_m[0], starts[:, 1] - ue.xy_m[1], np.full(n_seg, h - ue.height_m)],
            "ue_distance",
        )
    return u, v


def _affine_rate(value, grad, anchors, slacks):
    """First-order rate bound in Mbit/s as a cvxpy expression."""
    offset = value - sum(grad[:, i] * anchors[i] for i in range(len(anchors)))
    terms = [cp.multiply(grad[:, i] / MBIT, slack) for i, slack in enumerate(slacks)]
    return sum(terms[1:], terms[0]) + offset / MBIT


def build_subproblem(cfg, variant, local: LocalPoint, model=None, opts=None) -> ConicProgram:
    """Convex program of one SCA iteration around *local*."""
    opts = opts or ScaOptions(variant=variant)
    if model is None:
        model = rate_model_for(cfg, variant, opts.exact_second_moment)
    _check_variant(cfg, variant, model)
    check_local_point(local, cfg, model)
    matching = variant == VARIANT_MATCHING

    uav, pp = cfg.uav, cfg.power
    traj0 = local.trajectory
    n_seg, n_ue, n_irs = traj0.n_segments, cfg.n_ue, model.n_irs
    demand = demands_bits(cfg, opts.margin_bits)
    served = demand > 0

    prog = ConicProgram(name=f"{variant}")
    q = prog.variable("q", (n_seg + 1, 2))
    T = prog.variable("T", (n_seg,))
    tau = prog.variable("tau", (n_seg, n_ue), nonneg=True)
    y = prog.variable("y", (n_seg,))

    prog.add_zero(q[0] - np.asarray(uav.start_xy_m), "start")
    prog.add_zero(q[n_seg] - np.asarray(uav.finish_xy_m), "finish")
    prog.add_nonneg(T - opts.min_flight_time_s, "min_flight_time")

    dq = q[1:] - q[:-1]
    delta = prog.add_norm_bound([dq[:, 0], dq[:, 1]], "segment_length")
    prog.add_nonneg(uav.seg_max_m - delta, "seg_max")
    prog.add_nonneg(uav.v_max_mps * T - delta, "v_max")

    blade = prog.add_quad_over_lin(delta, T, "blade")
    parasite = prog.add_cubic_over_square(delta, T, "parasite")

    dq0 = np.diff(traj0.waypoints, axis=0)
    v0sq = pp.v0_mps**2
    y_bound = (
        2.0 * cp.multiply(local.y, y - local.y)
        + (local.y**2 - np.sum(dq0**2, axis=1) / v0sq)
        + (2.0 / v0sq) * (cp.multiply(dq0[:, 0], dq[:, 0]) + cp.multiply(dq0[:, 1], dq[:, 1]))
    )
    prog.add_quartic_over_square(T, y, y_bound, "induced")
    prog.add_nonneg(T - cp.sum(tau, axis=1), "tdma")

    u, v = _distance_slacks(prog, cfg, model, q[:-1])
    prog.handles.update(delta=delta, blade=blade, parasite=parasite)

    for k in np.flatnonzero(~served):
        prog.add_zero(tau[:, k], "unserved")

    if matching:
        etas = [prog.variable(f"eta_{w}", (n_seg, n_ue), nonneg=True) for w in range(n_irs)]
        amps = [prog.variable(f"A_{w}", (n_seg, n_ue), nonneg=True) for w in range(n_irs)]
        prog.add_nonneg(tau - sum(etas), "matching")
        for k in np.flatnonzero(served):
            linearized = 0
            for w in range(n_irs):
                rate_bound = _affine_rate(
                    local.rates[:, w, k],
                    local.grads[:, w, k, :],
                    [local.v[:, k], local.u[:, w]],
                    [v[:, k], u[:, w]],
                )
                t_rate = prog.add_quad_over_lin(amps[w][:, k], etas[w][:, k], "rate")
                prog.add_nonneg(rate_bound - t_rate, "rate")
                a0 = local.amp[:, w, k]
                linearized = linearized + cp.sum(cp.multiply(2.0 * a0, amps[w][:, k])) - np.sum(a0**2)
            prog.add_nonneg(linearized - demand[k] / MBIT, "data")
    else:
        amp = prog.variable("A", (n_seg, n_ue), nonneg=True)
        for k in np.flatnonzero(served):
            anchors = [local.v[:, k]] + [local.u[:, w] for w in range(n_irs)]
            slacks = [v[:, k]] + [u[:, w] for w in range(n_irs)]
            rate_bound = _affine_rate(local.rates[:, k], local.grads[:, k, :], anchors, slacks)
            t_rate = prog.add_quad_over_lin(amp[:, k], tau[:, k], "rate")
            prog.add_nonneg(rate_bound - t_rate, "rate")
            a0 = local.amp[:, k]
            linearized = cp.sum(cp.multiply(2.0 * a0, amp[:, k])) - np.sum(a0**2)
            prog.add_nonneg(linearized - demand[k] / MBIT, "data")

    prog.minimize(
        pp.p0_w * cp.sum(T)
        + pp.p0_w * blade_drag_coeff(pp) * cp.sum(blade)
        + parasite_coeff(pp) * cp.sum(parasite)
        + pp.pi_w * cp.sum(y)
        + uav.tx_power_w * cp.sum(tau)
    )
    return prog


# -- iteration ----------------------------------------------------------------


@dataclass(eq=False)
class _Iterate:
    trajectory: Trajectory
    energy: object
    delivered: np.ndarray
    min_ratio: float
    violation: float
    feasible: bool


def _evaluate(traj, cfg, model, demand) -> _Iterate:
    energy = total_energy(traj, cfg.uav.tx_power_w, cfg.power)
    delivered = delivered_bits(traj, cfg, model)
    served = demand > 0
    ratio = float(np.min(delivered[served] / demand[served])) if served.any() else 1.0
    violation = max_violation(traj, cfg)
    short = demand - delivered - 1e-6 * np.maximum(demand, 1.0)
    feasible = violation <= 1e-6 and not np.any(short > 0)
    return _Iterate(traj, energy, delivered, ratio, violation, bool(feasible))


def _trajectory_from(point, local: LocalPoint, cfg, n_irs):
    uav = cfg.uav
    q = np.array(point["q"], dtype=float)
    q[0] = uav.start_xy_m
    q[-1] = uav.finish_xy_m
    times = np.array(point["T"], dtype=float)
    tau = np.maximum(np.array(point["tau"], dtype=float), 0.0)
    load = tau.sum(axis=1)
    over = load > times
    tau[over] *= (times[over] / load[over])[:, None]
    match = None
    if local.matching:
        match = np.maximum(np.stack([point[f"eta_{w}"] for w in range(n_irs)], axis=1), 0.0)
        load = match.sum(axis=1)
        over = load > tau
        scale = np.divide(tau, load, out=np.zeros_like(tau), where=load > 0)
        match = np.where(over[:, None, :], match * scale[:, None, :], match)
    return Trajectory(waypoints=q, flight_times=times, tx_times=tau, match_times=match)


def _blend(old: Trajectory, new: Trajectory, theta):
    match = None
    if old.match_times is not None:
        match = (1 - theta) * old.match_times + theta * new.match_times
    return Trajectory(
        waypoints=(1 - theta) * old.waypoints + theta * new.waypoints,
        flight_times=(1 - theta) * old.flight_times + theta * new.flight_times,
        tx_times=(1 - theta) * old.tx_times + theta * new.tx_times,
        match_times=match,
    )


def slack_gaps(prog: ConicProgram, cfg):
    """Largest relative gap between each solved slack and the quantity it bounds.

    Epigraph slacks are checked everywhere. The distance slacks ``u`` and
    ``v`` only where they feed a transmitting slot, since elsewhere the
    rate bound is inactive and the slack may float.
    """
    delta = prog.handles["delta"].value
    T = prog.var("T").value
    q = prog.var("q").value
    tau = prog.var("tau").value
    if delta is None or T is None or q is None or tau is None:
        return {}
    gaps = {
        "blade": _rel_gap(prog.handles["blade"].value, delta**2 / T),
        "parasite": _rel_gap(prog.handles["parasite"].value, delta**3 / T**2),
    }
    d_ue, d_irs = link_distances(cfg, q[:-1])
    transmitting = tau > MIN_MATCH_TIME_S
    gaps["ue_distance"] = _rel_gap(prog.var("v").value, d_ue, transmitting)
    if "u" in prog.variables:
        u = prog.var("u").value
        n_irs = u.shape[1]
        if "eta_0" in prog.variables:
            feeds = np.stack(
                [np.any(prog.var(f"eta_{w}").value > MIN_MATCH_TIME_S, axis=1) for w in range(n_irs)],
                axis=1,
            )
        else:
            feeds = np.repeat(np.any(transmitting, axis=1)[:, None], n_irs, axis=1)
        gaps["irs_distance"] = _rel_gap(u, d_irs[:, :n_irs], feeds)
    return gaps


def _rel_gap(value, target, where=None):
    gap = np.abs(np.asarray(value) - target) / np.maximum(1.0, np.abs(target))
    if where is not None:
        gap = gap[where]
    return float(np.max(gap, initial=0.0))


def _warn_if_loose(gaps):
    for name, gap in gaps.items():
        if gap > TIGHTNESS_TOL:
            print(f"Warning: slack '{name}' not tight (gap {gap:.1e})", file=sys.stderr)


def _solution(it: _Iterate, records, variant):
    return PlanSolution(
        trajectory=it.trajectory,
        energy=it.energy,
        delivered_bits=it.delivered,
        convergence=list(records),
        variant=variant,
    )


def sca_optimize(cfg, opts: ScaOptions | None = None, model=None) -> PlanSolution:
    """Run SCA from the hover-and-transmit seed until the energy stops decreasing."""
    opts = opts or ScaOptions()
    variant = opts.variant
    if model is None:
        model = rate_model_for(cfg, variant, opts.exact_second_moment)
    _check_variant(cfg, variant, model)
    matching = variant == VARIANT_MATCHING
    demand = demands_bits(cfg, opts.margin_bits)

    seed = initial_plan(
        cfg,
        opts.n_segments_hint,
        variant=variant,
        model=model,
        margin_bits=opts.margin_bits,
        transmit_while_moving=opts.transmit_while_moving,
    )
    current = _evaluate(seed, cfg, model, demand)
    records = [IterationRecord(0, current.energy.total_j, current.violation, current.min_ratio)]
    if opts.verbose:
        print(
            f"[sca] {variant}: {seed.n_segments} segments, "
            f"initial energy={current.energy.total_j:.2f} J"
        )

    for it in range(1, opts.max_iters + 1):
        local = local_point_from(current.trajectory, cfg, model, matching=matching)
        prog = build_subproblem(cfg, variant, local, model=model, opts=opts)
        if opts.dump_dir:
            dump_cbf(prog, Path(opts.dump_dir) / f"{variant}-iter{it:03d}.cbf")
        report = solve(prog, tol=opts.solver_tol)

        if report.status == "numerical-limit" and report.point.get("q") is not None and report.max_residual < RESIDUAL_ACCEPT:
            print(
                f"Warning: solver returned an inaccurate solution at iteration {it} "
                f"(max residual {report.max_residual:.1e})",
                file=sys.stderr,
            )
        elif report.status != "optimal":
            context = {
                "variant": variant,
                "iteration": it,
                "status": report.status,
                "solver_status": report.solver_status,
                "max_residual": report.max_residual,
            }
            last = _solution(current, records, variant)
            if it == 1:
                raise ScaError(
                    f"subproblem at the initial plan is {report.status}; check the scenario",
                    last_solution=last,
                    context=context,
                )
            raise ScaError(
                f"solver stopped with status {report.status} at iteration {it}",
                last_solution=last,
                context=context,
            )
        _warn_if_loose(slack_gaps(prog, cfg))

        target = _trajectory_from(report.point, local, cfg, model.n_irs)
        candidate = _evaluate(target, cfg, model, demand)
        theta = 1.0
        halvings = 0
        while (
            not candidate.feasible or candidate.energy.total_j > current.energy.total_j
        ) and halvings < opts.max_halvings:
            theta /= 2.0
            halvings += 1
            candidate = _evaluate(_blend(current.trajectory, target, theta), cfg, model, demand)
        if not candidate.feasible or candidate.energy.total_j > current.energy.total_j:
            if opts.verbose:
                print(f"[sca] iter {it}: no improving step after {halvings} halvings, stopping")
            break

        previous = current.energy.total_j
        current = candidate
        if matching:
            current = _evaluate(rematch(current.trajectory, cfg, model), cfg, model, demand)
        rel = (previous - current.energy.total_j) / previous
        records.append(IterationRecord(it, current.energy.total_j, current.violation, current.min_ratio))
        if opts.verbose:
            step = "" if halvings == 0 else f", step {theta:g}"
            print(
                f"[sca] iter {it}: energy={current.energy.total_j:.2f} J "
                f"(rel. decrease {rel:.1e}{step})"
            )
        if rel < opts.rel_decrease_threshold:
            break

    return _solution(current, records, variant)


# -- matching -----------------------------------------------------------------


@dataclass(eq=False)
class MatchingReport:
    """Chosen IRS per (segment, UE); -1 where nothing is transmitted."""

    choices: np.ndarray
    degenerate: list

    @property
    def n_degenerate(self):
        return len(self.degenerate)


def matching_extraction(solution: PlanSolution, cfg, model=None) -> MatchingReport:
    """IRS with the highest single-IRS rate for each transmitting (segment, UE).

    Ties go to the lowest index. A slot whose matching time is not
    concentrated on best-rate IRSs is reported as degenerate.
    """
    traj = solution.trajectory
    if traj.match_times is None:
        raise ScaError("matching extraction needs a solution with matching times")
    if model is None:
        model = build_rate_model(cfg)
    rates = matching_rates(cfg, model, traj.waypoints)
    n_seg, n_ue = traj.tx_times.shape
    choices = np.full((n_seg, n_ue), -1, dtype=int)
    degenerate = []
    for n in range(n_seg):
        for k in range(n_ue):
            tau = traj.tx_times[n, k]
            if tau <= MIN_MATCH_TIME_S:
                continue
            r = rates[n, :, k]
            best = int(np.argmax(r))
            choices[n, k] = best
            tied = np.isclose(r, r[best], rtol=1e-12, atol=0.0)
            if traj.match_times[n, tied, k].sum() < MATCH_MASS * tau:
                degenerate.append((n, k))
    if degenerate:
        print(
            f"Warning: {len(degenerate)} transmit slots split time across IRSs "
            f"with different rates",
            file=sys.stderr,
        )
    return MatchingReport(choices=choices, degenerate=degenerate)
