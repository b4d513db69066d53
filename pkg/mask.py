import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from errors import ConfigError, ShapeError, ValidationError
from tensor import DenseMatrix, read_tensor, write_tensor

logger = logging.getLogger(__name__)


class ScoreKind(str, Enum):
    MAGNITUDE = "magnitude"
    INPUT_SCALED = "input_scaled"


@dataclass(frozen=True)
class ScoreRule:
    kind: ScoreKind = ScoreKind.MAGNITUDE
    feature_norms: np.ndarray | None = None

    def __post_init__(self):
        if self.feature_norms is not None and np.any(np.asarray(self.feature_norms) < 0):
            raise ConfigError("feature_norms must be non-negative")


@dataclass(frozen=True, eq=False)
class PruneMask:
    """Binary mask congruent to a weight matrix: 0 = pruned, 1 = kept."""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {bits.ndim}-D")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def pruned_indices(self, col: int) -> np.ndarray:
        return np.flatnonzero(~self.bits[:, col])

    def zeros_per_column(self) -> np.ndarray:
        return (~self.bits).sum(axis=0)

    def sparsity(self) -> float:
        return float(self.zeros_per_column().sum() / self.bits.size) if self.bits.size else 0.0

    def to_dense(self) -> DenseMatrix:
        return DenseMatrix(self.bits.astype(np.float32))

    def apply(self, w: np.ndarray) -> np.ndarray:
        if w.shape != self.shape:
            raise ShapeError(f"mask {self.shape} does not match weights {w.shape}")
        return np.where(self.bits, w, 0.0).astype(w.dtype, copy=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PruneMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


def score(w: DenseMatrix, rule: ScoreRule) -> DenseMatrix:
    magnitude = np.abs(w.as_float64())
    if rule.kind is ScoreKind.MAGNITUDE:
        return DenseMatrix(magnitude)
    if rule.feature_norms is None:
        raise ConfigError("input_scaled scores need feature_norms from calibration")
    norms = np.asarray(rule.feature_norms, dtype=np.float64)
    if norms.shape != (w.rows,):
        raise ConfigError(f"feature_norms has length {norms.size}, weights have {w.rows} input rows")
    return DenseMatrix(magnitude * norms[:, None])


def select_unstructured(scores: DenseMatrix, sparsity: float) -> PruneMask:
    """Per column, prune the floor(sparsity * rows) lowest scores; ties prune the lower row first."""
    if not 0 <= sparsity < 1:
        raise ConfigError(f"sparsity must be in [0, 1), got {sparsity}")
    k = int(np.floor(sparsity * scores.rows))
    bits = np.ones(scores.shape, dtype=bool)
    if k:
        order = np.argsort(scores.data, axis=0, kind="stable")
        np.put_along_axis(bits, order[:k], False, axis=0)
    return PruneMask(bits)


def select_nm(scores: DenseMatrix, n: int, m: int) -> PruneMask:
    """Keep the n largest scores in every aligned group of m rows of each column."""
    if not 0 < n < m:
        raise ConfigError(f"N:M pattern needs 0 < N < M, got {n}:{m}")
    if scores.rows % m:
        raise ShapeError(f"{scores.rows} rows are not divisible into groups of {m}")
    groups = scores.data.reshape(scores.rows // m, m, scores.cols)
    order = np.argsort(groups, axis=1, kind="stable")
    bits = np.ones(groups.shape, dtype=bool)
    np.put_along_axis(bits, order[:, : m - n, :], False, axis=1)
    return PruneMask(bits.reshape(scores.shape))


def parse_pattern(pattern: str) -> tuple[int, int] | None:
    """'unstructured' -> None, 'N:M' -> (N, M)."""
    if pattern == "unstructured":
        return None
    try:
        n, m = (int(part) for part in pattern.split(":"))
    except ValueError:
        raise ConfigError(f"pattern must be 'unstructured' or 'N:M', got {pattern!r}")
    if not 0 < n < m:
        raise ConfigError(f"N:M pattern needs 0 < N < M, got {pattern}")
    return n, m


def load_mask(path, shape: tuple[int, int] | None = None) -> PruneMask:
    raw = read_tensor(path)
    values = raw.data
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValidationError(f"{path}: mask entries must be 0 or 1")
    if shape is not None and raw.shape != tuple(shape):
        raise ShapeError(f"{path}: mask is {raw.shape}, weights are {tuple(shape)}")
    return PruneMask(values == 1.0)


def save_mask(path, mask: PruneMask) -> None:
    write_tensor(path, mask.to_dense())


class Selector(str, Enum):
    MAGNITUDE = "magnitude"
    WANDA = "wanda"
    FILE = "file"


@dataclass(frozen=True)
class SelectorConfig:
    selector: Selector = Selector.MAGNITUDE
    sparsity: float = 0.5
    pattern: str = "unstructured"
    mask_file: Path | None = None

    def __post_init__(self):
        if self.selector is Selector.FILE:
            if self.mask_file is None:
                raise ConfigError("selector 'file' requires a mask file")
        elif self.mask_file is not None:
            raise ConfigError("a mask file is only used with selector 'file'")
        if not 0 <= self.sparsity < 1:
            raise ConfigError(f"sparsity must be in [0, 1), got {self.sparsity}")
        parse_pattern(self.pattern)

    def mask_path(self, layer_name: str) -> Path:
        if self.mask_file.is_dir():
            return self.mask_file / f"{layer_name}.qptn"
        return self.mask_file


def build_mask(
    cfg: SelectorConfig,
    w: DenseMatrix,
    layer_name: str,
    feature_norms: np.ndarray | None = None,
) -> PruneMask:
    """Produce the mask for one layer according to the selector settings."""
    if cfg.selector is Selector.FILE:
        mask = load_mask(cfg.mask_path(layer_name), shape=w.shape)
        logger.info("  Loaded mask for %s from %s", layer_name, cfg.mask_path(layer_name))
        return mask

    if cfg.selector is Selector.WANDA:
        rule = ScoreRule(ScoreKind.INPUT_SCALED, feature_norms)
    else:
        rule = ScoreRule(ScoreKind.MAGNITUDE)
    scores = score(w, rule)

    nm = parse_pattern(cfg.pattern)
    if nm is None:
        return select_unstructured(scores, cfg.sparsity)
    return select_nm(scores, *nm)
