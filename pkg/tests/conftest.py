import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mapaware.geometry import IndoorMap, load_map, rectangle  # noqa: E402

DATA = Path(str(resources.files("mapaware") / "data"))


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def two_room():
    return load_map(DATA / "two_room_map.json")


@pytest.fixture
def office():
    return load_map(DATA / "office_map.json")


@pytest.fixture
def open_room():
    return IndoorMap(rectangle(0, 0, 10, 10))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
