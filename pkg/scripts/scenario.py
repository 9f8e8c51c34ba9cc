"""
scenario.py

Loads, validates and defaults mission scenarios for the IRS-aided UAV
planner. A scenario document is JSON or TOML with the top-level keys
``uav``, ``irss``, ``ues``, ``channel``, ``power`` and ``seed``. Lengths are
in meters, powers in watts, data in bits and the noise density in dBm/Hz
(converted to W/Hz on load).

Every physical constant the other modules consume lives here.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ImportError:
    import tomli as tomllib

# Average elevation angles used to freeze the LoS probabilities.
DEFAULT_UE_ELEVATION_DEG = 60.0
DEFAULT_IRS_ELEVATION_DEG = 54.2

# Not part of the published parameter set; any value keeps comparisons
# between planners consistent.
DEFAULT_TX_POWER_W = 0.1


class ScenarioError(ValueError):
    """A scenario document or object violates the schema or an invariant."""

    def __init__(self, field_path, message):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


def dbm_to_watts(dbm):
    return 10.0 ** (dbm / 10.0) * 1e-3


def watts_to_dbm(watts):
    return 10.0 * math.log10(watts * 1e3)


@dataclass(frozen=True)
class UavSpec:
    altitude_m: float = 100.0
    start_xy_m: tuple[float, float] = (0.0, 0.0)
    finish_xy_m: tuple[float, float] = (100.0, 100.0)
    v_max_mps: float = 30.0
    seg_max_m: float = 1.0
    tx_power_w: float = DEFAULT_TX_POWER_W


@dataclass(frozen=True)
class IrsSpec:
    xy_m: tuple[float, float]
    height_m: float = 20.0
    n_elements: int = 500
    los_a: float = 15.0
    los_b: float = 0.18
    fixed_elevation_deg: float | None = None

    @property
    def elevation_deg(self):
        if self.fixed_elevation_deg is None:
            return DEFAULT_IRS_ELEVATION_DEG
        return self.fixed_elevation_deg


@dataclass(frozen=True)
class UeSpec:
    xy_m: tuple[float, float]
    height_m: float = 0.0
    data_bits: float = 0.0
    los_a: float = 30.0
    los_b: float = 0.15
    fixed_elevation_deg: float | None = None

    @property
    def elevation_deg(self):
        if self.fixed_elevation_deg is None:
            return DEFAULT_UE_ELEVATION_DEG
        return self.fixed_elevation_deg


@dataclass(frozen=True)
class ChannelParams:
    beta0: float = 0.01
    alpha_ua_ue: float = 2.5
    alpha_ua_irs: float = 2.2
    alpha_irs_ue: float = 3.0
    kappa_ua_ue: float = 10.0
    kappa_ua_irs: float = 30.0
    kappa_irs_ue: float = 5.0
    noise_psd_w_per_hz: float = dbm_to_watts(-174.0)
    bandwidth_hz: float = 1e6
    nlos_attenuation: float = 0.0
    data_margin_bits: float = 0.0


@dataclass(frozen=True)
class PowerParams:
    p0_w: float = 79.86
    pi_w: float = 88.63
    u_tip_mps: float = 120.0
    v0_mps: float = 4.03
    d0: float = 0.6
    rho: float = 1.225
    solidity: float = 0.05
    rotor_area_m2: float = 0.503


@dataclass(frozen=True)
class ScenarioConfig:
    uav: UavSpec = field(default_factory=UavSpec)
    irss: tuple[IrsSpec, ...] = ()
    ues: tuple[UeSpec, ...] = ()
    channel: ChannelParams = field(default_factory=ChannelParams)
    power: PowerParams = field(default_factory=PowerParams)
    seed: int = 0

    @property
    def n_irs(self):
        return len(self.irss)

    @property
    def n_ue(self):
        return len(self.ues)

    def with_data_bits(self, data_bits):
        """Return a copy with every UE's data constraint set to *data_bits*."""
        ues = tuple(dataclasses.replace(ue, data_bits=float(data_bits)) for ue in self.ues)
        return dataclasses.replace(self, ues=ues)

    def without_irss(self):
        return dataclasses.replace(self, irss=())

    def with_margin(self, margin_bits):
        channel = dataclasses.replace(self.channel, data_margin_bits=float(margin_bits))
        return dataclasses.replace(self, channel=channel)


# -- validation ---------------------------------------------------------------


def _require(cond, field_path, message):
    if not cond:
        raise ScenarioError(field_path, message)


def _check_positive(obj, prefix, names):
    for name in names:
        value = getattr(obj, name)
        _require(
            math.isfinite(value) and value > 0,
            f"{prefix}.{name}",
            f"must be positive, got {value!r}",
        )


def validate_scenario(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check every scenario invariant; return *cfg* unchanged on success."""
    uav = cfg.uav
    _check_positive(uav, "uav", ("altitude_m", "v_max_mps", "seg_max_m", "tx_power_w"))

    for w, irs in enumerate(cfg.irss):
        prefix = f"irss[{w}]"
        _require(irs.n_elements >= 1, f"{prefix}.n_elements", f"must be >= 1, got {irs.n_elements}")
        _require(irs.height_m >= 0, f"{prefix}.height_m", f"must be >= 0, got {irs.height_m}")
        _require(
            irs.height_m < uav.altitude_m,
            f"{prefix}.height_m",
            f"must be below the UAV altitude {uav.altitude_m}",
        )
        _check_positive(irs, prefix, ("los_a", "los_b"))
        _check_elevation(irs.elevation_deg, f"{prefix}.fixed_elevation_deg")

    _require(len(cfg.ues) >= 1, "ues", "at least one UE is required")
    for k, ue in enumerate(cfg.ues):
        prefix = f"ues[{k}]"
        _require(ue.data_bits >= 0, f"{prefix}.data_bits", f"must be >= 0, got {ue.data_bits}")
        _require(
            ue.height_m < uav.altitude_m,
            f"{prefix}.height_m",
            f"must be below the UAV altitude {uav.altitude_m}",
        )
        _check_positive(ue, prefix, ("los_a", "los_b"))
        _check_elevation(ue.elevation_deg, f"{prefix}.fixed_elevation_deg")

    ch = cfg.channel
    _check_positive(
        ch,
        "channel",
        (
            "beta0",
            "alpha_ua_ue",
            "alpha_ua_irs",
            "alpha_irs_ue",
            "kappa_ua_ue",
            "kappa_ua_irs",
            "kappa_irs_ue",
            "noise_psd_w_per_hz",
            "bandwidth_hz",
        ),
    )
    _require(
        0.0 <= ch.nlos_attenuation < 1.0,
        "channel.nlos_attenuation",
        f"must be in [0, 1), got {ch.nlos_attenuation}",
    )
    _require(
        ch.data_margin_bits >= 0,
        "channel.data_margin_bits",
        f"must be >= 0, got {ch.data_margin_bits}",
    )

    _check_positive(
        cfg.power,
        "power",
        ("p0_w", "pi_w", "u_tip_mps", "v0_mps", "d0", "rho", "solidity", "rotor_area_m2"),
    )
    _require(
        isinstance(cfg.seed, int) and cfg.seed >= 0,
        "seed",
        f"must be an unsigned integer, got {cfg.seed!r}",
    )
    return cfg


def _check_elevation(theta, field_path):
    _require(0.0 <= theta <= 90.0, field_path, f"must be in [0, 90], got {theta}")


# -- parsing ------------------------------------------------------------------

_TOP_KEYS = {"uav", "irss", "ues", "channel", "power", "seed"}


def _take(raw, prefix, allowed):
    if not isinstance(raw, dict):
        raise ScenarioError(prefix, f"expected an object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ScenarioError(f"{prefix}.{unknown[0]}", "unknown key")
    return raw


def _number(raw, key, prefix, default=None):
    if key not in raw:
        if default is None:
            raise ScenarioError(f"{prefix}.{key}", "missing required key")
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{prefix}.{key}", f"expected a number, got {value!r}")
    return float(value)


def _optional_number(raw, key, prefix):
    if raw.get(key) is None:
        return None
    return _number(raw, key, prefix)


def _xy(raw, key, prefix, default=None):
    if key not in raw:
        if default is None:
            raise ScenarioError(f"{prefix}.{key}", "missing required key")
        return default
    value = raw[key]
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ScenarioError(f"{prefix}.{key}", f"expected [x, y], got {value!r}")
    return (float(value[0]), float(value[1]))


def _field_defaults(cls):
    return {f.name: f.default for f in dataclasses.fields(cls)}


def _parse_uav(raw):
    d = _field_defaults(UavSpec)
    raw = _take(raw, "uav", d.keys())
    return UavSpec(
        altitude_m=_number(raw, "altitude_m", "uav", d["altitude_m"]),
        start_xy_m=_xy(raw, "start_xy_m", "uav", d["start_xy_m"]),
        finish_xy_m=_xy(raw, "finish_xy_m", "uav", d["finish_xy_m"]),
        v_max_mps=_number(raw, "v_max_mps", "uav", d["v_max_mps"]),
        seg_max_m=_number(raw, "seg_max_m", "uav", d["seg_max_m"]),
        tx_power_w=_number(raw, "tx_power_w", "uav", d["tx_power_w"]),
    )


def _parse_irs(raw, w):
    prefix = f"irss[{w}]"
    d = _field_defaults(IrsSpec)
    raw = _take(raw, prefix, d.keys())
    n_elements = raw.get("n_elements", d["n_elements"])
    if isinstance(n_elements, bool) or not isinstance(n_elements, int):
        raise ScenarioError(f"{prefix}.n_elements", f"expected an integer, got {n_elements!r}")
    return IrsSpec(
        xy_m=_xy(raw, "xy_m", prefix),
        height_m=_number(raw, "height_m", prefix, d["height_m"]),
        n_elements=n_elements,
        los_a=_number(raw, "los_a", prefix, d["los_a"]),
        los_b=_number(raw, "los_b", prefix, d["los_b"]),
        fixed_elevation_deg=_optional_number(raw, "fixed_elevation_deg", prefix),
    )


def _parse_ue(raw, k):
    prefix = f"ues[{k}]"
    d = _field_defaults(UeSpec)
    raw = _take(raw, prefix, d.keys())
    return UeSpec(
        xy_m=_xy(raw, "xy_m", prefix),
        height_m=_number(raw, "height_m", prefix, d["height_m"]),
        data_bits=_number(raw, "data_bits", prefix, d["data_bits"]),
        los_a=_number(raw, "los_a", prefix, d["los_a"]),
        los_b=_number(raw, "los_b", prefix, d["los_b"]),
        fixed_elevation_deg=_optional_number(raw, "fixed_elevation_deg", prefix),
    )


_CHANNEL_FILE_KEYS = (set(_field_defaults(ChannelParams)) - {"noise_psd_w_per_hz"}) | {
    "noise_psd_dbm_per_hz"
}


def _parse_channel(raw):
    d = _field_defaults(ChannelParams)
    raw = _take(raw, "channel", _CHANNEL_FILE_KEYS)
    values = {
        name: _number(raw, name, "channel", default)
        for name, default in d.items()
        if name != "noise_psd_w_per_hz"
    }
    if "noise_psd_dbm_per_hz" in raw:
        dbm = _number(raw, "noise_psd_dbm_per_hz", "channel")
        values["noise_psd_w_per_hz"] = dbm_to_watts(dbm)
    return ChannelParams(**values)


def _parse_power(raw):
    d = _field_defaults(PowerParams)
    raw = _take(raw, "power", d.keys())
    return PowerParams(**{name: _number(raw, name, "power", default) for name, default in d.items()})


def parse_scenario(doc) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from a decoded document."""
    doc = _take(doc, "scenario", _TOP_KEYS)
    irss = doc.get("irss", [])
    ues = doc.get("ues", [])
    if not isinstance(irss, list):
        raise ScenarioError("irss", "expected a list")
    if not isinstance(ues, list):
        raise ScenarioError("ues", "expected a list")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("seed", f"expected an integer, got {seed!r}")
    cfg = ScenarioConfig(
        uav=_parse_uav(doc.get("uav", {})),
        irss=tuple(_parse_irs(raw, w) for w, raw in enumerate(irss)),
        ues=tuple(_parse_ue(raw, k) for k, raw in enumerate(ues)),
        channel=_parse_channel(doc.get("channel", {})),
        power=_parse_power(doc.get("power", {})),
        seed=seed,
    )
    return validate_scenario(cfg)


def load_scenario(path) -> ScenarioConfig:
    """Read a JSON or TOML scenario file (chosen by suffix) and validate it."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(str(path), f"malformed TOML: {exc}") from exc
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(str(path), f"malformed JSON: {exc}") from exc
    return parse_scenario(doc)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`parse_scenario` (noise density back in dBm/Hz)."""
    channel = dataclasses.asdict(cfg.channel)
    channel["noise_psd_dbm_per_hz"] = watts_to_dbm(channel.pop("noise_psd_w_per_hz"))

    def _node(obj):
        d = dataclasses.asdict(obj)
        d["xy_m"] = list(d["xy_m"])
        return d

    uav = dataclasses.asdict(cfg.uav)
    uav["start_xy_m"] = list(uav["start_xy_m"])
    uav["finish_xy_m"] = list(uav["finish_xy_m"])
    return {
        "uav": uav,
        "irss": [_node(irs) for irs in cfg.irss],
        "ues": [_node(ue) for ue in cfg.ues],
        "channel": channel,
        "power": dataclasses.asdict(cfg.power),
        "seed": cfg.seed,
    }


def dump_scenario(cfg: ScenarioConfig, path):
    Path(path).write_text(json.dumps(scenario_to_dict(cfg), indent=2) + "\n")


def default_scenario() -> ScenarioConfig:
    """The published simulation parameterization on a two-IRS, two-UE layout.

    One IRS sits 5 m from each UE; both UEs ask for the same data volume.
    """
    cfg = ScenarioConfig(
        uav=UavSpec(),
        irss=(
            IrsSpec(xy_m=(45.0, 60.0)),
            IrsSpec(xy_m=(60.0, 45.0)),
        ),
        ues=(
            UeSpec(xy_m=(40.0, 60.0), data_bits=1e8),
            UeSpec(xy_m=(60.0, 40.0), data_bits=1e8),
        ),
        channel=ChannelParams(),
        power=PowerParams(),
        seed=0,
    )
    return validate_scenario(cfg)
