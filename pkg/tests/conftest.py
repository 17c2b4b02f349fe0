from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from nesim.config import load_scenario
from nesim.controller import ControllerGains
from nesim.simulation import assemble


@pytest.fixture(scope="session")
def sec5_path() -> Path:
    return Path(str(resources.files("nesim").joinpath("data", "sec5.scenario")))


@pytest.fixture(scope="session")
def sec5_norm(sec5_path):
    _, norm = load_scenario(sec5_path)
    return norm


@pytest.fixture(scope="session")
def sec5(sec5_path):
    scenario, _ = load_scenario(sec5_path)
    return scenario


@pytest.fixture(scope="session")
def stable_gains(sec5):
    # gains known to stabilize the bundled scenario without escalation
    return ControllerGains.uniform(sec5.n, sec5.plant.r, 16.0)


@pytest.fixture(scope="session")
def sec5_loop(sec5, stable_gains):
    return assemble(sec5, gains=stable_gains, rng=np.random.default_rng(sec5.seed))
