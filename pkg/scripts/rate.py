"""
rate.py

Closed-form expected achievable rate for the UAV downlink with IRS
assistance, its gradient with respect to link distances, the first-order
lower bound used by the convexified subproblems, and a numerical
certificate that the per-state log term is convex in the distances.

Links are ordered ``[direct UE link, active IRS cascades...]`` everywhere
in this module. For each subset ``s`` of unblocked links the SNR is

    1 + sum_i eps_i u_i^-a_i + sum_{i != j} zeta_i zeta_j u_i^-a_i/2 u_j^-a_j/2

where a blocked link keeps a fraction ``nu`` of its amplitude.
"""

from __future__ import annotations

import itertools
import math
import os
import sys
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

_SCRIPTS_DIR = os.path.dirname(os.path.abspath(__file__))
if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from channel import GeometryError, irs_ue_distance, link_distances, los_probability  # noqa: E402

LN2 = math.log(2.0)

# Above this K-factor the Bessel closed form loses digits to cancellation.
_KAPPA_QUAD_THRESHOLD = 500.0


def rician_magnitude_mean(kappa):
    """E|g| for a unit-power Rician envelope with K-factor *kappa*."""
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    if math.isinf(kappa):
        return 1.0
    if kappa > _KAPPA_QUAD_THRESHOLD:
        return _rician_mean_quad(kappa)
    half = kappa / 2.0
    return math.sqrt(math.pi / (4.0 * (kappa + 1.0))) * (
        (1.0 + kappa) * special.ive(0, half) + kappa * special.ive(1, half)
    )


def _rician_mean_quad(kappa):
    sigma = math.sqrt(1.0 / (2.0 * (kappa + 1.0)))
    nu = math.sqrt(kappa / (kappa + 1.0))
    b = nu / sigma
    lo = max(0.0, nu - 40.0 * sigma)
    hi = nu + 40.0 * sigma
    value, _ = integrate.quad(
        lambda x: x * stats.rice.pdf(x, b, scale=sigma), lo, hi, points=[nu], limit=200
    )
    return value


@dataclass(frozen=True, eq=False)
class GammaSet:
    """SNR constants of one UE: the direct link and one cascade per IRS."""

    gamma_u: float
    gamma_u_prime: float
    gamma_i: np.ndarray
    gamma_i_prime: np.ndarray
    mu_i: np.ndarray


@dataclass(frozen=True, eq=False)
class RateModel:
    gammas: tuple[GammaSet, ...]
    los_p_ue: np.ndarray
    los_p_irs: np.ndarray
    alpha_ue: float
    alpha_irs: float
    bandwidth_hz: float
    nlos_attenuation: float = 0.0

    @property
    def n_irs(self):
        return len(self.los_p_irs)

    @property
    def n_ue(self):
        return len(self.gammas)

    def all_irs(self):
        return tuple(range(self.n_irs))


def cascade_second_moment(n_elements, mu_ua_irs, mu_irs_ue, exact=False):
    """Second moment of the magnitude sum over *n_elements* reflecting elements."""
    mu_i = n_elements * mu_ua_irs * mu_irs_ue
    if exact:
        return n_elements * (1.0 - (mu_ua_irs * mu_irs_ue) ** 2) + mu_i**2
    return mu_i**2 + 1.0


def second_moment_gap(cfg):
    """Relative gap (closed form minus exact) / exact per (IRS, UE) pair."""
    ch = cfg.channel
    mu_a = rician_magnitude_mean(ch.kappa_ua_irs)
    mu_b = rician_magnitude_mean(ch.kappa_irs_ue)
    gaps = np.zeros((cfg.n_irs, cfg.n_ue))
    for w, irs in enumerate(cfg.irss):
        closed = cascade_second_moment(irs.n_elements, mu_a, mu_b)
        exact = cascade_second_moment(irs.n_elements, mu_a, mu_b, exact=True)
        gaps[w, :] = (closed - exact) / exact
    return gaps


def build_rate_model(cfg, exact_second_moment=False, include_irs=True) -> RateModel:
    """Precompute every SNR constant and LoS probability of *cfg*.

    With ``include_irs=False`` the model ignores the scenario's IRSs, which
    is the no-IRS benchmark.
    """
    ch = cfg.channel
    irss = cfg.irss if include_irs else ()
    snr0 = cfg.uav.tx_power_w / (ch.bandwidth_hz * ch.noise_psd_w_per_hz)
    gamma_u = math.sqrt(ch.beta0 * snr0)
    gamma_u_prime = gamma_u * rician_magnitude_mean(ch.kappa_ua_ue)
    mu_a = rician_magnitude_mean(ch.kappa_ua_irs)
    mu_b = rician_magnitude_mean(ch.kappa_irs_ue)

    gammas = []
    for ue in cfg.ues:
        g_i, g_ip, mus = [], [], []
        for irs in irss:
            d_wk = irs_ue_distance(irs, ue)
            if d_wk <= 0:
                raise GeometryError(f"IRS at {irs.xy_m} coincides with UE at {ue.xy_m}")
            mu_i = irs.n_elements * mu_a * mu_b
            base = math.sqrt(ch.beta0**2 * snr0 / d_wk**ch.alpha_irs_ue)
            second = cascade_second_moment(irs.n_elements, mu_a, mu_b, exact=exact_second_moment)
            g_i.append(base * math.sqrt(second))
            g_ip.append(base * mu_i)
            mus.append(mu_i)
        gammas.append(
            GammaSet(
                gamma_u=gamma_u,
                gamma_u_prime=gamma_u_prime,
                gamma_i=np.array(g_i, dtype=float),
                gamma_i_prime=np.array(g_ip, dtype=float),
                mu_i=np.array(mus, dtype=float),
            )
        )
    return RateModel(
        gammas=tuple(gammas),
        los_p_ue=np.array(
            [los_probability(ue.elevation_deg, ue.los_a, ue.los_b) for ue in cfg.ues]
        ),
        los_p_irs=np.array(
            [los_probability(irs.elevation_deg, irs.los_a, irs.los_b) for irs in irss],
            dtype=float,
        ),
        alpha_ue=ch.alpha_ua_ue,
        alpha_irs=ch.alpha_ua_irs,
        bandwidth_hz=ch.bandwidth_hz,
        nlos_attenuation=ch.nlos_attenuation,
    )


def _resolve_active(model, active_set):
    if active_set is None:
        return model.all_irs()
    active = tuple(int(w) for w in active_set)
    for w in active:
        if not 0 <= w < model.n_irs:
            raise IndexError(f"IRS index {w} out of range for {model.n_irs} IRSs")
    return active


def link_constants(model: RateModel, ue_index, active_set=None):
    """Self and cross constants, exponents and LoS probabilities per link."""
    active = _resolve_active(model, active_set)
    g = model.gammas[ue_index]
    eps = np.array([g.gamma_u**2] + [g.gamma_i[w] ** 2 for w in active])
    zeta = np.array([g.gamma_u_prime] + [g.gamma_i_prime[w] for w in active])
    alphas = np.array([model.alpha_ue] + [model.alpha_irs] * len(active))
    probs = np.array([model.los_p_ue[ue_index]] + [model.los_p_irs[w] for w in active])
    return eps, zeta, alphas, probs


def state_table(probs, nlos_attenuation=0.0):
    """All LoS states of the links with their probabilities and amplitude scales."""
    z = len(probs)
    states = np.array(list(itertools.product((0, 1), repeat=z)), dtype=float).reshape(-1, z)
    weights = np.prod(np.where(states > 0, probs, 1.0 - np.asarray(probs)), axis=1)
    scales = states + (1.0 - states) * nlos_attenuation
    return states, weights, scales


def _snr_excess(eps_s, zeta_s, alphas, u):
    """SNR excess over 1 per point and state, plus the powers reused by the gradient."""
    a = u ** (-alphas / 2.0)
    a2 = a * a
    self_term = a2 @ eps_s.T
    lin = a @ zeta_s.T
    sq = a2 @ (zeta_s**2).T
    x = np.maximum(self_term + lin * lin - sq, 0.0)
    return x, a, lin


def rate_and_gradient(model: RateModel, ue_index, dists, active_set=None):
    """Expected rate and its distance gradient at one or more points.

    ``dists`` has shape (Z,) or (P, Z) with Z = 1 + number of active IRSs,
    ordered ``[d_ue, d_irs...]``. Returns rates in bits/s with shape () or
    (P,) and gradients in bits/s/m with the shape of ``dists``.
    """
    eps, zeta, alphas, probs = link_constants(model, ue_index, active_set)
    u = np.asarray(dists, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != len(eps):
        raise ValueError(f"expected {len(eps)} distances per point, got {u.shape[1]}")
    if np.any(u <= 0):
        raise ValueError("distances must be positive")
    _, weights, scales = state_table(probs, model.nlos_attenuation)
    eps_s = scales**2 * eps
    zeta_s = scales * zeta

    x, a, lin = _snr_excess(eps_s, zeta_s, alphas, u)
    rate = model.bandwidth_hz * (np.log1p(x) @ weights) / LN2

    # d x / d u_z for every point, state and link.
    d_self = -eps_s[None, :, :] * (alphas * u ** (-alphas - 1.0))[:, None, :]
    d_cross = (
        -(alphas * u ** (-alphas / 2.0 - 1.0))[:, None, :]
        * zeta_s[None, :, :]
        * (lin[:, :, None] - zeta_s[None, :, :] * a[:, None, :])
    )
    dx = d_self + d_cross
    grad = model.bandwidth_hz / LN2 * np.einsum("s,psz->pz", weights, dx / (1.0 + x)[:, :, None])
    if single:
        return float(rate[0]), grad[0]
    return rate, grad


def expected_rate(model: RateModel, ue_index, dist_ue, dists_irs=(), active_set=None):
    """Closed-form expected rate for one UE at the given link distances.

    ``dists_irs`` lines up with *active_set* (all IRSs of the model when
    omitted).
    """
    active = _resolve_active(model, active_set)
    dists_irs = list(dists_irs)
    if len(dists_irs) != len(active):
        raise ValueError(f"{len(active)} active IRSs but {len(dists_irs)} distances")
    rate, _ = rate_and_gradient(model, ue_index, np.array([dist_ue] + dists_irs), active)
    return rate


def rate_gradient(model: RateModel, ue_index, dists, active_set=None):
    _, grad = rate_and_gradient(model, ue_index, dists, active_set)
    return grad


def rate_at_positions(model: RateModel, cfg, uav_xy, ue_index, active_set=None):
    """Expected rate of UE *ue_index* at UAV horizontal positions (P, 2)."""
    active = _resolve_active(model, active_set)
    d_ue, d_irs = link_distances(cfg, uav_xy)
    dists = np.column_stack([d_ue[:, ue_index]] + [d_irs[:, w] for w in active])
    rate, _ = rate_and_gradient(model, ue_index, dists, active)
    return rate


@dataclass(frozen=True, eq=False)
class TaylorBound:
    """Affine under-estimator anchored at ``anchor`` (one row per point)."""

    anchor: np.ndarray
    value: np.ndarray
    gradient: np.ndarray

    def __call__(self, dists):
        dists = np.asarray(dists, dtype=float)
        return self.value + np.sum(self.gradient * (dists - self.anchor), axis=-1)

    @property
    def offset(self):
        """Constant term once the bound is written as ``offset + gradient . u``."""
        return self.value - np.sum(self.gradient * self.anchor, axis=-1)


def taylor_lower_bound(model: RateModel, ue_index, local_dists, active_set=None) -> TaylorBound:
    """First-order expansion of the rate around *local_dists*.

    The rate is convex in the distances, so the expansion never exceeds it.
    """
    anchor = np.asarray(local_dists, dtype=float)
    value, grad = rate_and_gradient(model, ue_index, anchor, active_set)
    return TaylorBound(anchor=anchor, value=np.asarray(value), gradient=np.asarray(grad))


@dataclass(frozen=True, eq=False)
class HessianCertificate:
    hessian: np.ndarray
    min_eigenvalue: float
    min_eigenvalue_scaled: float

    @property
    def is_psd(self):
        return self.min_eigenvalue_scaled >= -1e-8


def convexity_certificate(epsilons, zetas, alphas, point) -> HessianCertificate:
    """Analytic Hessian of log2(g(u)) for one LoS state and its least eigenvalues.

    ``min_eigenvalue_scaled`` is taken on diag(u) H diag(u), which is
    congruent to H, keeping round-off relative when distances span decades.
    """
    eps = np.asarray(epsilons, dtype=float)
    zeta = np.asarray(zetas, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    u = np.asarray(point, dtype=float)
    if np.any(eps < 0) or np.any(zeta < 0):
        raise ValueError("constants must be nonnegative")
    if np.any(u <= 0):
        raise ValueError("point must be strictly positive")

    half = alphas / 2.0
    a = u ** (-half)
    a1 = -half * u ** (-half - 1.0)
    a2 = half * (half + 1.0) * u ** (-half - 2.0)
    s = float(np.dot(zeta, a))

    g = 1.0 + np.sum(eps * u ** (-alphas)) + s * s - np.sum((zeta * a) ** 2)
    grad_g = -alphas * eps * u ** (-alphas - 1.0) + 2.0 * zeta * a1 * (s - zeta * a)
    hess_g = np.outer(2.0 * zeta * a1, zeta * a1)
    np.fill_diagonal(
        hess_g,
        alphas * (alphas + 1.0) * eps * u ** (-alphas - 2.0) + 2.0 * zeta * a2 * (s - zeta * a),
    )

    hess = (g * hess_g - np.outer(grad_g, grad_g)) / (g * g * LN2)
    scaled_grad = grad_g * u
    scaled = (g * hess_g * np.outer(u, u) - np.outer(scaled_grad, scaled_grad)) / (g * g * LN2)
    scaled = 0.5 * (scaled + scaled.T)
    return HessianCertificate(
        hessian=hess,
        min_eigenvalue=float(np.min(np.linalg.eigvalsh(0.5 * (hess + hess.T)))),
        min_eigenvalue_scaled=float(np.min(np.linalg.eigvalsh(scaled))),
    )
