"""Solver-free planner: pairing, best-rate points, toy fractions and routing."""

import itertools

import numpy as np
import pytest

from conftest import make_cfg
from heuristic import (
    EXACT_TSP_LIMIT,
    _moving_schedule,
    best_rate_point,
    build_heuristic_plan,
    open_path_tsp,
    pair_ues,
    path_length,
    plan,
    project_onto_segment,
    toy_fractions,
    transmit_points,
)
from power import energy_efficient_speed
from rate import build_rate_model, rate_at_positions
from trajectory import VARIANT_HEURISTIC, delivered_bits, demands_bits, validate


# -- pairing and best-rate points -------------------------------------------------


def test_pairing_picks_nearest_irs():
    cfg = make_cfg(irs_xy=((0.0, 0.0), (10.0, 0.0)), ue_xy=((9.0, 0.0), (1.0, 0.0)))
    assert pair_ues(cfg) == [1, 0]


def test_pairing_tie_goes_to_lowest_index():
    cfg = make_cfg(irs_xy=((0.0, 0.0), (10.0, 0.0)), ue_xy=((5.0, 0.0),))
    assert pair_ues(cfg) == [0]


def test_pairing_without_irss():
    assert pair_ues(make_cfg(ue_xy=((1.0, 1.0), (2.0, 2.0)))) == [None, None]


def test_best_point_without_irs_is_the_ue():
    cfg = make_cfg(ue_xy=((20.0, 30.0),))
    assert np.allclose(best_rate_point(cfg, 0, None), (20.0, 30.0))


def test_best_point_for_coincident_irs_and_ue():
    cfg = make_cfg(irs_xy=((20.0, 30.0),), ue_xy=((20.0, 30.0),))
    assert np.allclose(best_rate_point(cfg, 0, 0), (20.0, 30.0))


def test_best_point_beats_segment_ends(default_cfg):
    model = build_rate_model(default_cfg)
    for k, w in enumerate(pair_ues(default_cfg)):
        q_hat = best_rate_point(default_cfg, k, w, model)
        ends = np.array([default_cfg.ues[k].xy_m, default_cfg.irss[w].xy_m])
        rates = rate_at_positions(model, default_cfg, np.vstack([q_hat, ends]), k, (w,))
        assert rates[0] >= rates[1:].max() - 1e-9 * rates[0]


# -- toy path and transmit points ------------------------------------------------------


def test_zero_demand_fraction_is_infinite(default_cfg):
    f = toy_fractions(default_cfg.with_data_bits(0.0))
    assert np.all(np.isinf(f))


def test_fraction_scales_inversely_with_demand(default_cfg):
    f1 = toy_fractions(default_cfg.with_data_bits(1e7))
    f2 = toy_fractions(default_cfg.with_data_bits(2e7))
    assert np.allclose(f2, f1 / 2.0, rtol=1e-12)
    assert np.all(f1 > 0)


def test_transmit_points_interpolate():
    q_hat = [[0.0, 0.0], [10.0, 10.0], [4.0, 4.0]]
    q_bar = [[2.0, 0.0], [20.0, 10.0], [8.0, 0.0]]
    got = transmit_points([0.0, 0.5, 3.0], q_hat, q_bar)
    assert np.allclose(got, [[0.0, 0.0], [15.0, 10.0], [8.0, 0.0]])


def test_projection_clamps_to_segment():
    assert np.allclose(project_onto_segment((5.0, 5.0), (0.0, 0.0), (10.0, 0.0)), (5.0, 0.0))
    assert np.allclose(project_onto_segment((-3.0, 1.0), (0.0, 0.0), (10.0, 0.0)), (0.0, 0.0))
    assert np.allclose(project_onto_segment((1.0, 1.0), (2.0, 2.0), (2.0, 2.0)), (2.0, 2.0))


# -- open-path TSP -------------------------------------------------------------------------


def test_tsp_collinear():
    assert open_path_tsp([[7.0, 0.0], [2.0, 0.0], [5.0, 0.0]], (0.0, 0.0), (10.0, 0.0)) == [1, 2, 0]


def test_tsp_trivial_sizes():
    assert open_path_tsp(np.zeros((0, 2)), (0.0, 0.0), (1.0, 1.0)) == []
    assert open_path_tsp([[3.0, 4.0]], (0.0, 0.0), (1.0, 1.0)) == [0]


@pytest.mark.parametrize("k", [2, 5, 7])
def test_tsp_matches_brute_force(k):
    rng = np.random.default_rng(k)
    pts = rng.uniform(0.0, 100.0, (k, 2))
    start, end = (0.0, 0.0), (100.0, 100.0)
    order = open_path_tsp(pts, start, end)
    best = min(path_length(p, pts, start, end) for p in itertools.permutations(range(k)))
    assert sorted(order) == list(range(k))
    assert path_length(order, pts, start, end) == pytest.approx(best, rel=1e-12)


@pytest.mark.slow
def test_tsp_random_trials_match_brute_force():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        k = 2 + trial % 7
        pts = rng.uniform(0.0, 100.0, (k, 2))
        start, end = rng.uniform(0.0, 100.0, 2), rng.uniform(0.0, 100.0, 2)
        order = open_path_tsp(pts, start, end)
        best = min(path_length(p, pts, start, end) for p in itertools.permutations(range(k)))
        assert path_length(order, pts, start, end) == pytest.approx(best, rel=1e-12)


def test_tsp_large_instance_is_a_permutation():
    rng = np.random.default_rng(99)
    k = EXACT_TSP_LIMIT + 8
    pts = rng.uniform(0.0, 100.0, (k, 2))
    order = open_path_tsp(pts, (0.0, 0.0), (100.0, 100.0))
    assert sorted(order) == list(range(k))
    identity = path_length(list(range(k)), pts, (0.0, 0.0), (100.0, 100.0))
    assert path_length(order, pts, (0.0, 0.0), (100.0, 100.0)) <= identity


# -- planning ------------------------------------------------------------------------------


def test_light_demand_keeps_the_straight_line(small_cfg):
    cfg = small_cfg.with_data_bits(1.0)
    result = build_heuristic_plan(cfg)
    assert result.order == []
    traj = result.trajectory
    assert traj.deltas.sum() == pytest.approx(np.hypot(100.0, 100.0))
    assert np.allclose(traj.speeds, energy_efficient_speed(cfg.power))
    assert validate(traj, cfg) == []
    assert np.all(result.solution.delivered_bits >= 1.0)


def test_heavy_demand_plan_is_valid(small_cfg):
    cfg = small_cfg.with_data_bits(5e8)
    result = build_heuristic_plan(cfg)
    assert sorted(result.order) == [0, 1]
    assert np.all(result.fractions < 1.0)
    traj = result.trajectory
    assert validate(traj, cfg) == []
    model = build_rate_model(cfg)
    assert np.all(delivered_bits(traj, cfg, model) >= demands_bits(cfg))
    assert result.solution.variant == VARIANT_HEURISTIC
    assert result.solution.convergence == []
    assert np.any(traj.deltas == 0.0)


def test_heavy_demand_transmits_on_every_moving_segment(small_cfg):
    traj = build_heuristic_plan(small_cfg.with_data_bits(5e8)).trajectory
    moving = traj.deltas > 0
    assert np.allclose(traj.tx_times.sum(axis=1)[moving], traj.flight_times[moving])
    # The last leg ends at the finish and serves nobody's transmit point.
    assert traj.tx_times[-1].sum() > 0


def test_moving_schedule_serves_leg_destination_first():
    rates = np.array([[1.0, 4.0], [1.0, 4.0], [2.0, 1.0]])
    tx = _moving_schedule([1.0, 1.0, 1.0], [0, 0, None], rates, np.array([1.5, 3.0]))
    assert tx[0].tolist() == [1.0, 0.0]
    assert tx[1, 0] == pytest.approx(0.5, rel=1e-5)
    assert tx[1, 1] == pytest.approx(0.5, rel=1e-5)
    # UE 0 is done, so the final leg goes to UE 1 despite its lower rate.
    assert tx[2].tolist() == [0.0, 1.0]
    assert np.all(tx.sum(axis=1) <= 1.0)


def test_energy_never_decreases_with_demand(small_cfg):
    energies = [plan(small_cfg.with_data_bits(q)).energy.total_j for q in (0.0, 1e7, 5e7, 1e8, 2e8, 5e8)]
    assert all(b >= a * (1 - 1e-9) for a, b in zip(energies, energies[1:]))
    assert energies[-1] > energies[0]


def test_plan_without_irss():
    cfg = make_cfg(ue_xy=((30.0, 60.0),), data_bits=5e7, seg_max_m=5.0)
    solution = plan(cfg)
    assert solution.trajectory.match_times is None
    assert validate(solution.trajectory, cfg) == []
    assert solution.delivered_bits[0] >= 5e7
