"""Closed-form expected rate, gradient, Taylor bound and convexity certificate."""

import dataclasses
import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import make_cfg
from rate import (
    LN2,
    GammaSet,
    RateModel,
    build_rate_model,
    cascade_second_moment,
    expected_rate,
    convexity_certificate,
    link_constants,
    rate_and_gradient,
    rate_gradient,
    rician_magnitude_mean,
    second_moment_gap,
    state_table,
    taylor_lower_bound,
)


# -- Rician mean ----------------------------------------------------------------


def test_rayleigh_mean():
    assert rician_magnitude_mean(0.0) == pytest.approx(math.sqrt(math.pi) / 2.0, rel=1e-12)


def test_deterministic_envelope():
    assert rician_magnitude_mean(math.inf) == 1.0
    assert rician_magnitude_mean(1e4) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("kappa", [0.5, 5.0, 30.0, 200.0])
def test_closed_form_matches_quadrature(kappa):
    sigma = math.sqrt(1.0 / (2.0 * (kappa + 1.0)))
    nu = math.sqrt(kappa / (kappa + 1.0))
    value, _ = integrate.quad(
        lambda x: x * stats.rice.pdf(x, nu / sigma, scale=sigma),
        0.0,
        nu + 30.0 * sigma,
        points=[nu],
        limit=200,
    )
    assert rician_magnitude_mean(kappa) == pytest.approx(value, rel=1e-7)


def test_large_kappa_branch_is_continuous():
    assert rician_magnitude_mean(500.0) == pytest.approx(rician_magnitude_mean(500.0001), rel=1e-6)


def test_kappa_five_against_samples():
    rng = np.random.default_rng(21)
    kappa = 5.0
    n = 1_000_000
    los = math.sqrt(kappa / (kappa + 1.0)) * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, n))
    scatter = math.sqrt(1.0 / (kappa + 1.0)) * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    mags = np.abs(los + scatter)
    assert abs(mags.mean() - rician_magnitude_mean(kappa)) < 3.5 * mags.std() / math.sqrt(n)


# -- constants ------------------------------------------------------------------------


def test_primed_constants_not_larger(default_cfg):
    model = build_rate_model(default_cfg)
    for g in model.gammas:
        assert np.all(g.gamma_i >= g.gamma_i_prime)
        assert g.gamma_u >= g.gamma_u_prime


def test_second_moment_forms():
    mu = 0.9
    assert cascade_second_moment(1, mu, 1.0) == pytest.approx(mu**2 + 1.0)
    # A single element has exact second moment 1 for unit-power factors.
    assert cascade_second_moment(1, mu, 1.0, exact=True) == pytest.approx(1.0)


def test_second_moment_gap_is_small_for_large_surfaces(default_cfg):
    gap = second_moment_gap(default_cfg)
    assert gap.shape == (2, 2)
    assert np.all(np.abs(gap) < 1e-3)


def test_exact_second_moment_changes_self_constant(default_cfg):
    clt = build_rate_model(default_cfg)
    exact = build_rate_model(default_cfg, exact_second_moment=True)
    assert not np.allclose(clt.gammas[0].gamma_i, exact.gammas[0].gamma_i, rtol=1e-12, atol=0)
    assert np.allclose(clt.gammas[0].gamma_i_prime, exact.gammas[0].gamma_i_prime)


def test_state_weights_sum_to_one():
    for n in range(1, 5):
        probs = np.linspace(0.1, 0.9, n)
        states, weights, scales = state_table(probs, 0.2)
        assert states.shape == (2**n, n)
        assert weights.sum() == pytest.approx(1.0)
        assert np.all(scales[states == 0] == 0.2)


# -- expected rate ------------------------------------------------------------------


def _model_with_probs(cfg, p_ue, p_irs):
    model = build_rate_model(cfg)
    return dataclasses.replace(
        model,
        los_p_ue=np.full(cfg.n_ue, p_ue, dtype=float),
        los_p_irs=np.full(cfg.n_irs, p_irs, dtype=float),
    )


def test_all_blocked_rate_is_zero(default_cfg):
    model = _model_with_probs(default_cfg, 0.0, 0.0)
    assert expected_rate(model, 0, 100.0, [90.0, 95.0]) == 0.0


def test_single_state_collapse():
    cfg = make_cfg()
    model = _model_with_probs(cfg, 1.0, 0.0)
    g = model.gammas[0]
    expected = 1e6 * math.log2(1.0 + g.gamma_u**2 * 120.0**-2.5)
    assert expected_rate(model, 0, 120.0) == pytest.approx(expected, rel=1e-12)


def _brute_force(model, ue, dists, nu=0.0):
    eps, zeta, alphas, probs = link_constants(model, ue)
    total = 0.0
    for s in itertools.product((0, 1), repeat=len(eps)):
        c = np.array([1.0 if si else nu for si in s])
        weight = np.prod([p if si else 1 - p for si, p in zip(s, probs)])
        snr = 0.0
        for i in range(len(eps)):
            snr += c[i] ** 2 * eps[i] * dists[i] ** -alphas[i]
            for j in range(len(eps)):
                if j != i:
                    snr += c[i] * c[j] * zeta[i] * zeta[j] * dists[i] ** (-alphas[i] / 2) * dists[j] ** (-alphas[j] / 2)
        total += weight * math.log2(1.0 + snr)
    return model.bandwidth_hz * total


@pytest.mark.parametrize("nu", [0.0, 0.3])
def test_two_irs_matches_state_enumeration(default_cfg, nu):
    cfg = dataclasses.replace(default_cfg, channel=dataclasses.replace(default_cfg.channel, nlos_attenuation=nu))
    model = build_rate_model(cfg)
    dists = [110.0, 85.0, 92.0]
    assert expected_rate(model, 1, dists[0], dists[1:]) == pytest.approx(_brute_force(model, 1, dists, nu), rel=1e-10)


def test_single_active_irs_matches_enumeration(default_cfg):
    model = build_rate_model(default_cfg)
    full = _brute_force(dataclasses.replace(model, los_p_irs=model.los_p_irs[:1]), 0, [100.0, 85.0])
    assert expected_rate(model, 0, 100.0, [85.0], active_set=(0,)) == pytest.approx(full, rel=1e-10)


def test_rate_nonincreasing_in_distance(default_cfg):
    model = build_rate_model(default_cfg)
    base = np.array([110.0, 85.0, 92.0])
    r0 = expected_rate(model, 0, base[0], base[1:])
    for z in range(3):
        farther = base.copy()
        farther[z] += 5.0
        assert expected_rate(model, 0, farther[0], farther[1:]) <= r0


def test_mismatched_distances_rejected(default_cfg):
    model = build_rate_model(default_cfg)
    with pytest.raises(ValueError):
        expected_rate(model, 0, 100.0, [90.0])
    with pytest.raises(ValueError):
        rate_and_gradient(model, 0, [100.0, -1.0, 90.0])


# -- gradient ---------------------------------------------------------------------------


def test_gradient_single_term_by_hand():
    """log2(1 + u^-2) has derivative -1/ln2 at u = 1."""
    model = RateModel(
        gammas=(GammaSet(1.0, 0.0, np.zeros(0), np.zeros(0), np.zeros(0)),),
        los_p_ue=np.array([1.0]),
        los_p_irs=np.zeros(0),
        alpha_ue=2.0,
        alpha_irs=2.2,
        bandwidth_hz=1.0,
    )
    assert rate_gradient(model, 0, [1.0])[0] == pytest.approx(-1.0 / LN2, rel=1e-12)
    assert convexity_certificate([1.0], [0.0], [2.0], [1.0]).min_eigenvalue >= 0.0


def test_gradient_matches_finite_differences(default_cfg):
    rng = np.random.default_rng(31)
    model = build_rate_model(default_cfg)
    for _ in range(100):
        ue = int(rng.integers(0, 2))
        dists = rng.uniform(80.0, 300.0, 3)
        grad = rate_gradient(model, ue, dists)
        for z in range(3):
            h = 1e-6 * dists[z]
            up, down = dists.copy(), dists.copy()
            up[z] += h
            down[z] -= h
            fd = (rate_and_gradient(model, ue, up)[0] - rate_and_gradient(model, ue, down)[0]) / (2 * h)
            assert grad[z] == pytest.approx(fd, rel=1e-6, abs=1e-9 * abs(grad).max())


def test_gradient_zero_for_constant_function():
    model = build_rate_model(make_cfg())
    zeroed = dataclasses.replace(model, los_p_ue=np.zeros(1))
    assert np.all(rate_gradient(zeroed, 0, [120.0]) == 0.0)


def test_batched_evaluation_matches_single(default_cfg):
    model = build_rate_model(default_cfg)
    pts = np.array([[100.0, 85.0, 92.0], [150.0, 120.0, 80.0]])
    rates, grads = rate_and_gradient(model, 0, pts)
    for p in range(2):
        r, g = rate_and_gradient(model, 0, pts[p])
        assert rates[p] == pytest.approx(r, rel=1e-12)
        assert np.allclose(grads[p], g, rtol=1e-12, atol=0.0)


# -- Taylor bound -------------------------------------------------------------------------


def test_taylor_bound_exact_at_anchor(default_cfg):
    model = build_rate_model(default_cfg)
    anchor = np.array([100.0, 85.0, 92.0])
    bound = taylor_lower_bound(model, 0, anchor)
    assert bound(anchor) == pytest.approx(expected_rate(model, 0, 100.0, [85.0, 92.0]), rel=1e-10)
    assert np.allclose(bound.gradient, rate_gradient(model, 0, anchor))
    assert bound(anchor) == pytest.approx(bound.offset + bound.gradient @ anchor, rel=1e-10)


def test_taylor_bound_underestimates(default_cfg):
    rng = np.random.default_rng(41)
    model = build_rate_model(default_cfg)
    anchor = np.array([120.0, 95.0, 88.0])
    bound = taylor_lower_bound(model, 1, anchor)
    points = rng.uniform(80.0, 400.0, (10_000, 3))
    rates, _ = rate_and_gradient(model, 1, points)
    slack = 1e-9 * float(bound.value)
    assert np.all(bound(points) <= rates + slack)


# -- convexity certificate -----------------------------------------------------------------


def test_hessian_zero_for_zero_constants():
    cert = convexity_certificate([0.0, 0.0], [0.0, 0.0], [2.2, 2.5], [3.0, 7.0])
    assert np.allclose(cert.hessian, 0.0)
    assert cert.is_psd


def test_random_instances_are_convex():
    rng = np.random.default_rng(51)
    for _ in range(1000):
        z = int(rng.integers(1, 5))
        cert = convexity_certificate(
            rng.uniform(0.0, 10.0, z),
            rng.uniform(0.0, 10.0, z),
            rng.uniform(2.0, 4.0, z),
            rng.uniform(0.1, 100.0, z),
        )
        assert cert.min_eigenvalue_scaled >= -1e-8
        assert cert.is_psd


def test_hessian_rejects_bad_inputs():
    with pytest.raises(ValueError):
        convexity_certificate([-1.0], [0.0], [2.0], [1.0])
    with pytest.raises(ValueError):
        convexity_certificate([1.0], [0.0], [2.0], [0.0])
