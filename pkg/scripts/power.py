"""
power.py

Rotary-wing propulsion power, mission energy and the energy-efficient
cruise speed.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy import optimize


class TrajectoryError(ValueError):
    """A trajectory violates a structural invariant or cannot be built."""


@dataclass(frozen=True)
class EnergyBreakdown:
    flight_j: float
    comm_j: float

    @property
    def total_j(self):
        return self.flight_j + self.comm_j

    def as_dict(self):
        return {"total_j": self.total_j, "flight_j": self.flight_j, "comm_j": self.comm_j}


def blade_drag_coeff(params):
    return 3.0 / params.u_tip_mps**2


def parasite_coeff(params):
    return 0.5 * params.d0 * params.rho * params.solidity * params.rotor_area_m2


def _induced_factor(v, params):
    # sqrt(sqrt(1 + a^2) - a) rewritten without cancellation at high speed.
    a = v * v / (2.0 * params.v0_mps**2)
    return np.sqrt(1.0 / (np.sqrt(1.0 + a * a) + a))


def flight_power(v_mps, params):
    """Propulsion power in watts at horizontal speed *v_mps* (scalar or array)."""
    v = np.asarray(v_mps, dtype=float)
    if np.any(v < 0):
        raise ValueError("speed must be >= 0")
    power = (
        params.p0_w * (1.0 + blade_drag_coeff(params) * v * v)
        + params.pi_w * _induced_factor(v, params)
        + parasite_coeff(params) * v**3
    )
    return float(power) if power.ndim == 0 else power


def induced_slack(delta_m, time_s, params):
    """Induced-power slack ``T * sqrt(sqrt(1 + V^4/4v0^4) - V^2/2v0^2)`` at V = delta/T."""
    delta = np.asarray(delta_m, dtype=float)
    t = np.asarray(time_s, dtype=float)
    v = np.divide(delta, t, out=np.zeros_like(delta), where=t > 0)
    return t * _induced_factor(v, params)


def energy_efficient_speed(params, v_max=100.0, grid_step=0.1) -> float:
    """Speed minimizing energy per meter, P(V)/V.

    A grid pre-scan brackets the minimum before a golden-section search.
    """
    grid = np.arange(grid_step, v_max + grid_step / 2, grid_step)
    per_meter = flight_power(grid, params) / grid
    slope_sign = np.sign(np.diff(per_meter))
    if np.count_nonzero(np.diff(slope_sign[slope_sign != 0])) > 1:
        print("Warning: energy per meter is not unimodal on the speed grid", file=sys.stderr)
    i = int(np.argmin(per_meter))
    if i == 0 or i == len(grid) - 1:
        return float(grid[i])
    res = optimize.minimize_scalar(
        lambda v: flight_power(v, params) / v,
        bracket=(grid[i - 1], grid[i], grid[i + 1]),
        method="golden",
        tol=1e-8,
    )
    return float(res.x)


def segment_energy(deltas, times, params):
    """Flight energy of each segment; zero-length segments hover at P(0)."""
    deltas = np.asarray(deltas, dtype=float)
    times = np.asarray(times, dtype=float)
    bad = np.flatnonzero((times <= 0) & (deltas > 0))
    if bad.size:
        raise TrajectoryError(f"segment {int(bad[0])}: zero flight time over {deltas[bad[0]]} m")
    speeds = np.divide(deltas, times, out=np.zeros_like(deltas), where=times > 0)
    return times * flight_power(speeds, params)


def total_energy(traj, p_c, params) -> EnergyBreakdown:
    """Flight plus communication energy of *traj* at transmit power *p_c*."""
    flight = float(np.sum(segment_energy(traj.deltas, traj.flight_times, params)))
    comm = float(np.sum(traj.tx_times)) * p_c
    return EnergyBreakdown(flight_j=flight, comm_j=comm)


def straight_line_energy(cfg):
    """Energy of flying directly from start to finish at the efficient speed."""
    v_e = min(energy_efficient_speed(cfg.power), cfg.uav.v_max_mps)
    dist = math.dist(cfg.uav.start_xy_m, cfg.uav.finish_xy_m)
    return dist / v_e * flight_power(v_e, cfg.power)
