import numpy as np
import pytest

from synthetic import generate_model, random_spd


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_spd(rng):
    def factory(d: int, cond: float = 100.0) -> np.ndarray:
        return random_spd(d, cond, rng)
    return factory


@pytest.fixture
def small_model(tmp_path):
    """Two relu layers of width 16 plus calibration, written to tmp_path/model."""
    return generate_model(tmp_path / "model", layers=2, dim=16, rows=256, rho=0.5, seed=7)
