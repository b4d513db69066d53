import numpy as np
import pytest
from scipy.linalg import eigh

from errors import ConfigError
from synthetic import correlated_inputs, generate_model, random_instance, random_spd
from tensor import Activation, read_manifest, read_tensor
from verify import deviation, run_verify


def test_random_spd_spectrum(rng):
    eig = eigh(random_spd(10, 1e3, rng), eigvals_only=True)
    assert eig[0] == pytest.approx(1.0, rel=1e-8)
    assert eig[-1] == pytest.approx(1e3, rel=1e-8)


def test_uncorrelated_inputs_have_small_covariance(rng):
    x = correlated_inputs(4096, 8, 0.0, rng).as_float64()
    cov = np.cov(x, rowvar=False)
    assert np.max(np.abs(cov - np.diag(np.diag(cov)))) <= 0.1


def test_correlation_is_planted(rng):
    x = correlated_inputs(8192, 6, 0.6, rng).as_float64()
    corr = np.corrcoef(x, rowvar=False)
    off = corr[~np.eye(6, dtype=bool)]
    assert np.all(np.abs(off - 0.6) < 0.05)


def test_correlation_bounds(rng):
    with pytest.raises(ConfigError):
        correlated_inputs(10, 4, 1.0, rng)
    with pytest.raises(ConfigError):
        correlated_inputs(10, 1, 0.5, rng)


def test_generated_manifest_composes(tmp_path):
    manifest_path, calib_path = generate_model(tmp_path, layers=3, dim=12, rows=40, seed=1)
    manifest = read_manifest(manifest_path)
    assert [layer.activation for layer in manifest.layers] == [
        Activation.RELU, Activation.RELU, Activation.IDENTITY,
    ]
    assert read_tensor(calib_path).shape == (40, 12)


def test_random_instance_is_seeded():
    a = random_instance(16, np.random.default_rng(4))
    b = random_instance(16, np.random.default_rng(4))
    assert np.array_equal(a.hessian, b.hessian)
    assert a.weights == b.weights and a.mask == b.mask
    assert 1.0 <= a.cond <= 1e3


def test_deviation_scaling():
    assert deviation(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert deviation(np.array([0.0, 3.0]), np.array([0.0, 1.0])) == 1.0


def test_verify_deviations_are_reproducible():
    first = run_verify(seed=11, per_dim=2, dims=(8, 32))
    second = run_verify(seed=11, per_dim=2, dims=(8, 32))
    assert first.deviations == second.deviations
    assert first.passed


def test_full_oracle_grid_agrees():
    outcome = run_verify(seed=0)
    assert len(outcome.deviations) >= 200
    assert outcome.passed
