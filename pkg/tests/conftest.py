from pathlib import Path

import pytest

import reinsgame
from reinsgame import load_market

SCENARIO_DIR = Path(reinsgame.__file__).parent / "scenarios"


@pytest.fixture(scope="session")
def stackelberg_path() -> Path:
    return SCENARIO_DIR / "stackelberg.toml"


@pytest.fixture(scope="session")
def duopoly_path() -> Path:
    return SCENARIO_DIR / "duopoly.toml"


@pytest.fixture(scope="session")
def stackelberg_market(stackelberg_path):
    return load_market(stackelberg_path)


@pytest.fixture(scope="session")
def duopoly_market(duopoly_path):
    return load_market(duopoly_path)
