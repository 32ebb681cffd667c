import sys

import numpy as np
import pytest

from comp_vr.config import SimConfig
from comp_vr.net_model import ApConfig, RadioParams, UserState, aps_from_config


@pytest.fixture(scope="session")
def cfg() -> SimConfig:
    return SimConfig()


@pytest.fixture(scope="session")
def params(cfg) -> RadioParams:
    return RadioParams.from_config(cfg)


@pytest.fixture(scope="session")
def origin_ap(cfg) -> ApConfig:
    return ApConfig(np.zeros(2), cfg.ap_height, cfg.downtilt, cfg.mainlobe_gain, cfg.sidelobe_gain, cfg.beamwidth,
                    cfg.n_elements, cfg.ap_max_power, cfg.ap_circuit_power, cfg.decode_capacity)


@pytest.fixture(scope="session")
def aps(cfg) -> list[ApConfig]:
    return aps_from_config(cfg)


def user_at(x: float, y: float, height: float = 1.8, direction=(1.0, 0.0), power: float = 0.0) -> UserState:
    return UserState(np.array([x, y]), height, np.asarray(direction, dtype=float), power)


def random_channel(rng: np.random.Generator, n: int, scale: float = 1e-5) -> np.ndarray:
    return (rng.standard_normal((n, 6)) + 1j * rng.standard_normal((n, 6))) * scale


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
