"""Scenario loading, validation and defaults."""

import pytest

from conftest import SCENARIOS_DIR
from scenario import (
    PowerParams,
    ScenarioError,
    dbm_to_watts,
    default_scenario,
    dump_scenario,
    load_scenario,
    parse_scenario,
    scenario_to_dict,
    watts_to_dbm,
)


def _doc():
    return {
        "uav": {"altitude_m": 100.0},
        "irss": [{"xy_m": [10.0, 0.0]}],
        "ues": [{"xy_m": [12.0, 0.0], "data_bits": 1e6}],
    }


def test_default_file_matches_builtin(default_cfg):
    """The checked-in default document equals default_scenario()."""
    assert default_cfg == default_scenario()


def test_default_heights_and_elements(default_cfg):
    assert default_cfg.uav.altitude_m == 100.0
    assert all(irs.height_m == 20.0 for irs in default_cfg.irss)
    assert all(ue.height_m == 0.0 for ue in default_cfg.ues)
    assert all(irs.n_elements == 500 for irs in default_cfg.irss)


def test_default_channel_and_mission():
    cfg = default_scenario()
    assert cfg.channel.bandwidth_hz == 1e6
    assert cfg.channel.beta0 == 0.01
    assert (cfg.channel.alpha_ua_irs, cfg.channel.alpha_ua_ue, cfg.channel.alpha_irs_ue) == (2.2, 2.5, 3.0)
    assert (cfg.channel.kappa_ua_irs, cfg.channel.kappa_ua_ue, cfg.channel.kappa_irs_ue) == (30.0, 10.0, 5.0)
    assert cfg.uav.seg_max_m == 1.0
    assert cfg.uav.v_max_mps == 30.0
    assert cfg.uav.start_xy_m == (0.0, 0.0)
    assert cfg.uav.finish_xy_m == (100.0, 100.0)
    assert cfg.uav.tx_power_w == 0.1
    assert cfg.ues[0].elevation_deg == 60.0
    assert cfg.irss[0].elevation_deg == 54.2
    assert cfg.power.p0_w == 79.86


def test_noise_density_converted_to_watts():
    cfg = default_scenario()
    assert cfg.channel.noise_psd_w_per_hz == pytest.approx(10 ** (-17.4) * 1e-3, rel=1e-12)
    assert watts_to_dbm(dbm_to_watts(-174.0)) == pytest.approx(-174.0)


def test_missing_power_block_gets_defaults():
    cfg = parse_scenario(_doc())
    assert cfg.power == PowerParams()
    assert (cfg.power.pi_w, cfg.power.u_tip_mps, cfg.power.v0_mps) == (88.63, 120.0, 4.03)
    assert (cfg.power.d0, cfg.power.rho, cfg.power.solidity, cfg.power.rotor_area_m2) == (
        0.6,
        1.225,
        0.05,
        0.503,
    )


def test_nlos_attenuation_out_of_range():
    doc = _doc()
    doc["channel"] = {"nlos_attenuation": 1.5}
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario(doc)
    assert excinfo.value.field_path == "channel.nlos_attenuation"


def test_unknown_key_rejected():
    doc = _doc()
    doc["ues"][0]["colour"] = "red"
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario(doc)
    assert excinfo.value.field_path == "ues[0].colour"


def test_unknown_top_level_key_rejected():
    doc = _doc()
    doc["wind"] = {}
    with pytest.raises(ScenarioError, match="unknown key"):
        parse_scenario(doc)


def test_ues_required():
    doc = _doc()
    doc["ues"] = []
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario(doc)
    assert excinfo.value.field_path == "ues"


def test_ue_above_uav_rejected():
    doc = _doc()
    doc["ues"][0]["height_m"] = 120.0
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario(doc)
    assert excinfo.value.field_path == "ues[0].height_m"


def test_negative_demand_rejected():
    doc = _doc()
    doc["ues"][0]["data_bits"] = -1
    with pytest.raises(ScenarioError, match="data_bits"):
        parse_scenario(doc)


def test_empty_irs_list_allowed():
    doc = _doc()
    doc["irss"] = []
    assert parse_scenario(doc).n_irs == 0


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json")
    with pytest.raises(ScenarioError, match="malformed JSON"):
        load_scenario(path)


def test_malformed_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[uav\naltitude_m = ")
    with pytest.raises(ScenarioError, match="malformed TOML"):
        load_scenario(path)


def test_toml_scenario(sisu_cfg):
    assert sisu_cfg.n_irs == 1
    assert sisu_cfg.n_ue == 1
    assert sisu_cfg.uav.seg_max_m == 10.0
    assert sisu_cfg.ues[0].data_bits == 2e7
    assert sisu_cfg.seed == 3


@pytest.mark.parametrize("name", ["default.json", "corridor.json", "sisu.toml"])
def test_dump_round_trip(tmp_path, name):
    """Dumping a checked-in scenario and loading it back gives the same config."""
    cfg = load_scenario(SCENARIOS_DIR / name)
    path = tmp_path / "dumped.json"
    dump_scenario(cfg, path)
    again = load_scenario(path)
    assert again.uav == cfg.uav
    assert again.irss == cfg.irss
    assert again.ues == cfg.ues
    assert again.power == cfg.power
    assert again.seed == cfg.seed
    assert again.channel.noise_psd_w_per_hz == pytest.approx(cfg.channel.noise_psd_w_per_hz, rel=1e-12)


def test_with_data_bits_and_margin(default_cfg):
    cfg = default_cfg.with_data_bits(5e7).with_margin(1e3)
    assert [ue.data_bits for ue in cfg.ues] == [5e7, 5e7]
    assert cfg.channel.data_margin_bits == 1e3
    assert default_cfg.ues[0].data_bits == 1e8
    assert default_cfg.without_irss().n_irs == 0


def test_dict_form_uses_dbm(default_cfg):
    doc = scenario_to_dict(default_cfg)
    assert doc["channel"]["noise_psd_dbm_per_hz"] == pytest.approx(-174.0)
    assert "noise_psd_w_per_hz" not in doc["channel"]
    assert parse_scenario(doc).ues == default_cfg.ues
