from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.world.gridworld import GridMap, load_map

ROOT = Path(__file__).resolve().parents[1]
MAPS_DIR = ROOT / "data" / "maps"

CORRIDOR_TEXT = "#######\n#S...G#\n#######\n"


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run slow statistical checks")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def corridor() -> GridMap:
    return load_map(CORRIDOR_TEXT)


@pytest.fixture
def tunnel_path() -> Path:
    return MAPS_DIR / "tunnel12.map"


@pytest.fixture
def tunnel(tunnel_path: Path) -> GridMap:
    return load_map(tunnel_path.read_text())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
