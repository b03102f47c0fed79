from pathlib import Path

import pytest

from poisonlab import load_iris_csv

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def iris_path():
    return DATA_DIR / "iris.csv"


@pytest.fixture(scope="session")
def iris_ds(iris_path):
    return load_iris_csv(iris_path)
