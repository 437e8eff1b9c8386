import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from telebalance.plant import PlantParams

CONFIG_DIR = Path(__file__).parent.parent / "src" / "telebalance" / "configs"


@pytest.fixture
def params() -> PlantParams:
    return PlantParams()


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR
