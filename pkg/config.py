import os
import logging

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

QPRUNE_THREADS = os.environ.get("QPRUNE_THREADS", "")
QPRUNE_LOG_LEVEL = os.environ.get("QPRUNE_LOG_LEVEL", "INFO").upper()
QPRUNE_BATCH_COLS = os.environ.get("QPRUNE_BATCH_COLS", "512")
QPRUNE_DAMPING = os.environ.get("QPRUNE_DAMPING", "0.01")
QPRUNE_SKIP_THRESHOLD = os.environ.get("QPRUNE_SKIP_THRESHOLD", "0.5")

# Solver defaults; a bare invocation uses these.
DEFAULT_TOL = 0.01
DEFAULT_MAX_ITERS = 100_000
DEFAULT_POWER_ITERS = 50
DEFAULT_BASELINE_LRS = (1e-2, 1e-3, 1e-4, 1e-5)


def _as_int(name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


def _as_float(name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}")


def validate_config() -> None:
    """Raise ConfigError if any QPRUNE_* environment variable is malformed."""
    if QPRUNE_THREADS and _as_int("QPRUNE_THREADS", QPRUNE_THREADS) < 1:
        raise ConfigError(f"QPRUNE_THREADS must be >= 1, got {QPRUNE_THREADS}")
    if QPRUNE_LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError(f"QPRUNE_LOG_LEVEL is not a logging level: {QPRUNE_LOG_LEVEL}")
    if default_batch_cols() < 1:
        raise ConfigError(f"QPRUNE_BATCH_COLS must be >= 1, got {QPRUNE_BATCH_COLS}")
    if default_damping() < 0:
        raise ConfigError(f"QPRUNE_DAMPING must be >= 0, got {QPRUNE_DAMPING}")
    tau = default_skip_threshold()
    if not 0 < tau <= 1:
        raise ConfigError(f"QPRUNE_SKIP_THRESHOLD must be in (0, 1], got {tau}")


def default_batch_cols() -> int:
    return _as_int("QPRUNE_BATCH_COLS", QPRUNE_BATCH_COLS)


def default_damping() -> float:
    return _as_float("QPRUNE_DAMPING", QPRUNE_DAMPING)


def default_skip_threshold() -> float:
    return _as_float("QPRUNE_SKIP_THRESHOLD", QPRUNE_SKIP_THRESHOLD)


def worker_count(requested: int | None = None) -> int:
    """Effective worker count: the request capped by QPRUNE_THREADS, at least 1."""
    raw = os.environ.get("QPRUNE_THREADS", QPRUNE_THREADS)
    cap = _as_int("QPRUNE_THREADS", raw) if raw else (os.cpu_count() or 1)
    if requested is None:
        return max(1, cap)
    return max(1, min(requested, cap))
