"""
channel.py

Link geometry, the probabilistic line-of-sight model, Rician small-scale
fading, IRS phase alignment and the Monte Carlo achievable-rate oracle.

LoS probabilities are evaluated at each node's fixed elevation angle, so
they do not move with the UAV. Monte Carlo samples are drawn in fixed-size
blocks; block ``b`` of a run seeded with ``seed`` always uses the substream
``SeedSequence([seed, b])``, so results are independent of how blocks are
scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

MC_BLOCK_SIZE = 1024


class GeometryError(ValueError):
    """A link is degenerate (UAV not strictly above the node)."""


class PhaseError(ValueError):
    """Optimal phases are undefined because a channel entry is zero."""


@dataclass(frozen=True)
class LinkGeometry:
    distance_m: float
    elevation_deg: float


@dataclass(frozen=True)
class LosState:
    s_ue: int
    s_irs: tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class ChannelDraw:
    """One realization of the small-scale channels seen by one UE.

    Entries exclude pathloss; ``h_ua_irs[i]`` and ``h_irs_ue[i]`` belong to
    the i-th IRS of the set the draw was made for.
    """

    h_ua_ue: complex
    h_ua_irs: tuple[np.ndarray, ...]
    h_irs_ue: tuple[np.ndarray, ...]
    los: LosState


@dataclass(frozen=True)
class MonteCarloEstimate:
    rate_bps: float
    stderr_bps: float
    n_samples: int


def link_geometry(node_xy, node_h, uav_xy, uav_h) -> LinkGeometry:
    dh = float(uav_h) - float(node_h)
    if dh <= 0:
        raise GeometryError(
            f"UAV height {uav_h} must be above node height {node_h}"
        )
    dx, dy = np.asarray(uav_xy, dtype=float) - np.asarray(node_xy, dtype=float)
    distance = math.sqrt(dx * dx + dy * dy + dh * dh)
    elevation = math.degrees(math.asin(min(1.0, dh / distance)))
    return LinkGeometry(distance_m=distance, elevation_deg=elevation)


def link_distances(cfg, uav_xy):
    """3-D distances from UAV positions (P, 2) to every UE and IRS.

    Returns ``(d_ue, d_irs)`` with shapes (P, K) and (P, W).
    """
    uav_xy = np.atleast_2d(np.asarray(uav_xy, dtype=float))
    h = cfg.uav.altitude_m

    def _dist(nodes):
        if not nodes:
            return np.zeros((uav_xy.shape[0], 0))
        xy = np.array([node.xy_m for node in nodes], dtype=float)
        dh = np.array([h - node.height_m for node in nodes], dtype=float)
        if np.any(dh <= 0):
            raise GeometryError("UAV altitude must exceed every node height")
        horiz = uav_xy[:, None, :] - xy[None, :, :]
        return np.sqrt(np.sum(horiz**2, axis=-1) + dh[None, :] ** 2)

    return _dist(cfg.ues), _dist(cfg.irss)


def irs_ue_distance(irs, ue):
    dx = irs.xy_m[0] - ue.xy_m[0]
    dy = irs.xy_m[1] - ue.xy_m[1]
    dh = irs.height_m - ue.height_m
    return math.sqrt(dx * dx + dy * dy + dh * dh)


def los_probability(theta_deg, a, b):
    """Sigmoid LoS existence probability at elevation *theta_deg* degrees."""
    theta = np.asarray(theta_deg, dtype=float)
    p = 1.0 / (1.0 + a * np.exp(-b * (theta - a)))
    return float(p) if p.ndim == 0 else p


def sample_small_scale(kappa, length, rng) -> np.ndarray:
    """Unit-power Rician entries with K-factor *kappa* (``inf`` gives pure LoS)."""
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    psi = rng.uniform(0.0, 2.0 * np.pi, size=length)
    if math.isinf(kappa):
        return np.exp(1j * psi)
    scatter = (rng.standard_normal(length) + 1j * rng.standard_normal(length)) / math.sqrt(2.0)
    return math.sqrt(kappa / (kappa + 1.0)) * np.exp(1j * psi) + math.sqrt(
        1.0 / (kappa + 1.0)
    ) * scatter


def los_probabilities(cfg, ue_index, active_irs):
    ue = cfg.ues[ue_index]
    p_ue = los_probability(ue.elevation_deg, ue.los_a, ue.los_b)
    p_irs = [
        los_probability(cfg.irss[w].elevation_deg, cfg.irss[w].los_a, cfg.irss[w].los_b)
        for w in active_irs
    ]
    return p_ue, p_irs


def draw_channel(cfg, ue_index, active_irs, rng) -> ChannelDraw:
    """Sample LoS states and small-scale fades for one UE and IRS subset."""
    ch = cfg.channel
    p_ue, p_irs = los_probabilities(cfg, ue_index, active_irs)
    s_ue = int(rng.random() < p_ue)
    h_ue = complex(sample_small_scale(ch.kappa_ua_ue, 1, rng)[0])
    s_irs, h_ua_irs, h_irs_ue = [], [], []
    for w, p in zip(active_irs, p_irs):
        m = cfg.irss[w].n_elements
        s_irs.append(int(rng.random() < p))
        h_ua_irs.append(sample_small_scale(ch.kappa_ua_irs, m, rng))
        h_irs_ue.append(sample_small_scale(ch.kappa_irs_ue, m, rng))
    return ChannelDraw(
        h_ua_ue=h_ue,
        h_ua_irs=tuple(h_ua_irs),
        h_irs_ue=tuple(h_irs_ue),
        los=LosState(s_ue=s_ue, s_irs=tuple(s_irs)),
    )


def optimal_phase_shifts(draw: ChannelDraw, irs_index) -> np.ndarray:
    """Per-element phases that align every cascaded path with the direct link."""
    h_u = draw.h_ua_ue
    h_i = draw.h_ua_irs[irs_index]
    h_m = draw.h_irs_ue[irs_index]
    if h_u == 0 or np.any(h_i == 0) or np.any(h_m == 0):
        raise PhaseError(f"zero channel entry on IRS {irs_index}; phase undefined")
    phases = np.angle(h_u) - np.angle(h_i) + np.angle(h_m)
    return np.mod(phases, 2.0 * np.pi)


def overall_channel(draw, phases, ue_gain, irs_gains, nlos_attenuation=0.0) -> complex:
    """Direct plus reflected channel for explicit phases.

    ``ue_gain`` and ``irs_gains`` are the real pathloss amplitudes of the
    direct link and of each cascade. A blocked link is scaled by
    *nlos_attenuation*.
    """
    c_ue = 1.0 if draw.los.s_ue else nlos_attenuation
    total = c_ue * ue_gain * draw.h_ua_ue
    for i, (h_i, h_m) in enumerate(zip(draw.h_ua_irs, draw.h_irs_ue)):
        c = 1.0 if draw.los.s_irs[i] else nlos_attenuation
        cascade = np.sum(np.conj(h_m) * np.exp(1j * phases[i]) * h_i)
        total += c * irs_gains[i] * cascade
    return complex(total)


def cascade_sum(draw, irs_index):
    return float(np.sum(np.abs(draw.h_ua_irs[irs_index]) * np.abs(draw.h_irs_ue[irs_index])))


def combined_magnitude(los: LosState, mag_ue, cascade_sums, nlos_attenuation=0.0):
    """Magnitude of the coherently combined channel."""
    c_ue = 1.0 if los.s_ue else nlos_attenuation
    total = c_ue * mag_ue
    for s, c_w in zip(los.s_irs, cascade_sums):
        total += (1.0 if s else nlos_attenuation) * c_w
    return total


def _mc_block(args):
    """Sum and sum of squares of per-sample rates for one block."""
    seed, block, n, p_ue, p_irs, ue_gain, irs_gains, m_elems, kappas, nu, snr0, bandwidth = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, block]))
    kappa_ue, kappa_ua_irs, kappa_irs_ue = kappas

    s_ue = rng.random(n) < p_ue
    h_ue = np.abs(sample_small_scale(kappa_ue, n, rng))
    mag = np.where(s_ue, 1.0, nu) * ue_gain * h_ue
    for p, gain, m in zip(p_irs, irs_gains, m_elems):
        s = rng.random(n) < p
        h_i = np.abs(sample_small_scale(kappa_ua_irs, n * m, rng)).reshape(n, m)
        h_m = np.abs(sample_small_scale(kappa_irs_ue, n * m, rng)).reshape(n, m)
        mag = mag + np.where(s, 1.0, nu) * gain * np.sum(h_i * h_m, axis=1)
    rates = bandwidth * np.log1p(snr0 * mag**2) / math.log(2.0)
    return float(np.sum(rates)), float(np.sum(rates**2))


def monte_carlo_rate(
    cfg, uav_xy, ue_index, active_irs_set, n_samples, seed, jobs=1
) -> MonteCarloEstimate:
    """Empirical expected rate at *uav_xy* under coherent IRS phase alignment.

    Every draw applies the optimal phases, so the combined magnitude is the
    direct magnitude plus the cascade magnitude sums.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    active = tuple(active_irs_set)
    ch = cfg.channel
    ue = cfg.ues[ue_index]
    d_ue = link_geometry(ue.xy_m, ue.height_m, uav_xy, cfg.uav.altitude_m).distance_m
    ue_gain = math.sqrt(ch.beta0 * d_ue ** (-ch.alpha_ua_ue))
    irs_gains = []
    for w in active:
        irs = cfg.irss[w]
        d_i = link_geometry(irs.xy_m, irs.height_m, uav_xy, cfg.uav.altitude_m).distance_m
        d_wk = irs_ue_distance(irs, ue)
        irs_gains.append(
            math.sqrt(ch.beta0 * d_i ** (-ch.alpha_ua_irs))
            * math.sqrt(ch.beta0 * d_wk ** (-ch.alpha_irs_ue))
        )
    p_ue, p_irs = los_probabilities(cfg, ue_index, active)
    snr0 = cfg.uav.tx_power_w / (ch.bandwidth_hz * ch.noise_psd_w_per_hz)
    m_elems = [cfg.irss[w].n_elements for w in active]
    kappas = (ch.kappa_ua_ue, ch.kappa_ua_irs, ch.kappa_irs_ue)

    n_blocks = -(-n_samples // MC_BLOCK_SIZE)
    tasks = []
    for b in range(n_blocks):
        n = min(MC_BLOCK_SIZE, n_samples - b * MC_BLOCK_SIZE)
        tasks.append(
            (
                seed,
                b,
                n,
                p_ue,
                p_irs,
                ue_gain,
                irs_gains,
                m_elems,
                kappas,
                ch.nlos_attenuation,
                snr0,
                ch.bandwidth_hz,
            )
        )
    if jobs > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            partials = list(pool.map(_mc_block, tasks))
    else:
        partials = [_mc_block(t) for t in tasks]

    total = sum(p[0] for p in partials)
    total_sq = sum(p[1] for p in partials)
    mean = total / n_samples
    if n_samples > 1:
        var = max(0.0, (total_sq - n_samples * mean * mean) / (n_samples - 1))
        stderr = math.sqrt(var / n_samples)
    else:
        stderr = 0.0
    return MonteCarloEstimate(rate_bps=mean, stderr_bps=stderr, n_samples=n_samples)
