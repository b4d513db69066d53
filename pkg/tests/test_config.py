import pytest

import config
from errors import ConfigError


def test_worker_count_respects_env_cap(monkeypatch):
    monkeypatch.setenv("QPRUNE_THREADS", "2")
    assert config.worker_count() == 2
    assert config.worker_count(8) == 2
    assert config.worker_count(1) == 1


def test_worker_count_defaults_to_cpus(monkeypatch):
    monkeypatch.delenv("QPRUNE_THREADS", raising=False)
    monkeypatch.setattr(config, "QPRUNE_THREADS", "")
    monkeypatch.setattr(config.os, "cpu_count", lambda: 6)
    assert config.worker_count() == 6
    assert config.worker_count(3) == 3


def test_malformed_thread_count(monkeypatch):
    monkeypatch.setenv("QPRUNE_THREADS", "many")
    with pytest.raises(ConfigError):
        config.worker_count()


@pytest.mark.parametrize("name, value", [
    ("QPRUNE_BATCH_COLS", "0"),
    ("QPRUNE_DAMPING", "-1"),
    ("QPRUNE_SKIP_THRESHOLD", "1.5"),
    ("QPRUNE_LOG_LEVEL", "LOUD"),
])
def test_validate_config_rejects(monkeypatch, name, value):
    monkeypatch.setattr(config, name, value)
    with pytest.raises(ConfigError):
        config.validate_config()


def test_defaults_validate():
    config.validate_config()
    assert config.default_batch_cols() >= 1
