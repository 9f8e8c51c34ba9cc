"""Shared fixtures for the planner tests.

Scenario fixtures come from the checked-in documents under scenarios/ so
tests exercise the same loader the entry scripts use. The ``runner``
fixture runs entry scripts as subprocesses with an isolated
GITHUB_OUTPUT file, the way the composite action invokes them.
"""

import dataclasses
import os
import subprocess
import sys
from pathlib import Path

import pytest

# Location of the action root (for scripts and scenario files).
ACTION_ROOT = Path(__file__).resolve().parent.parent
SCRIPTS_DIR = ACTION_ROOT / "scripts"
SCENARIOS_DIR = ACTION_ROOT / "scenarios"

# Ensure the scripts directory is importable.
if str(SCRIPTS_DIR) not in sys.path:
    sys.path.insert(0, str(SCRIPTS_DIR))

from scenario import IrsSpec, ScenarioConfig, UavSpec, UeSpec, load_scenario  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs taking minutes")


class Runner:
    """Runs entry scripts for a single test and collects their outputs."""

    def __init__(self, work_dir: Path, output_file: Path):
        self.work_dir = work_dir
        self.output_file = output_file

    @property
    def out_dir(self) -> Path:
        return self.work_dir / "out"

    def run(
        self,
        script: str,
        *args: str,
        env_overrides: dict | None = None,
        check: bool = True,
    ) -> subprocess.CompletedProcess:
        """Run ``scripts/<script>`` with *args*; INPUT_* variables are cleared first."""
        env = {k: v for k, v in os.environ.items() if not k.startswith("INPUT_")}
        env["GITHUB_OUTPUT"] = str(self.output_file)
        if env_overrides:
            env.update(env_overrides)
        return subprocess.run(
            [sys.executable, str(SCRIPTS_DIR / script), *args],
            env=env,
            cwd=str(self.work_dir),
            capture_output=True,
            text=True,
            check=check,
        )

    def outputs(self) -> dict[str, str]:
        return self._parse_output()

    # -- output parsing -----------------------------------------------------

    def _parse_output(self) -> dict[str, str]:
        result = {}
        for line in self.output_file.read_text().splitlines():
            if "=" in line:
                key, _, value = line.partition("=")
                result[key] = value
        return result


@pytest.fixture()
def runner(tmp_path):
    """Yield a :class:`Runner` working in a fresh temporary directory."""
    work_dir = tmp_path / "work"
    work_dir.mkdir()
    output_file = tmp_path / "github_output"
    output_file.touch()
    yield Runner(work_dir, output_file)


@pytest.fixture()
def default_cfg():
    return load_scenario(SCENARIOS_DIR / "default.json")


@pytest.fixture()
def corridor_cfg():
    return load_scenario(SCENARIOS_DIR / "corridor.json")


@pytest.fixture()
def sisu_cfg():
    return load_scenario(SCENARIOS_DIR / "sisu.toml")


@pytest.fixture()
def small_cfg(default_cfg):
    """The default layout with 10 m segments and a lighter demand."""
    uav = dataclasses.replace(default_cfg.uav, seg_max_m=10.0)
    return dataclasses.replace(default_cfg, uav=uav).with_data_bits(2e7)


def make_cfg(irs_xy=(), ue_xy=((50.0, 0.0),), data_bits=0.0, **uav_kwargs):
    """Ad-hoc scenario with default channel and power parameters."""
    return ScenarioConfig(
        uav=UavSpec(**uav_kwargs),
        irss=tuple(IrsSpec(xy_m=tuple(xy)) for xy in irs_xy),
        ues=tuple(UeSpec(xy_m=tuple(xy), data_bits=data_bits) for xy in ue_xy),
    )
