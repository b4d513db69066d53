import logging

import numpy as np

from errors import ConfigError, EmptyCalibrationError, ShapeError
from tensor import DenseMatrix

logger = logging.getLogger(__name__)


class HessianAccumulator:
    """
    Running sum of per-sequence Gram matrices, H ~= sum_i y_i^T y_i.

    Each sequence slice y_i (tokens x dim) is folded in on its own, so the
    stacked activation matrix is never materialised. The buffer is float64 and
    kept exactly symmetric: every Gram is mirrored from its upper triangle.
    Single writer; parallel calibration uses one accumulator per worker and
    merge().
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ShapeError(f"Hessian dimension must be positive, got {dim}")
        self.dim = dim
        self.sum = np.zeros((dim, dim), dtype=np.float64)
        self.sequences_seen = 0
        self.rows_seen = 0

    def accumulate(self, y: DenseMatrix | np.ndarray) -> "HessianAccumulator":
        data = y.data if isinstance(y, DenseMatrix) else np.asarray(y)
        if data.ndim != 2 or data.shape[1] != self.dim:
            raise ShapeError(f"sequence has shape {data.shape}, expected (*, {self.dim})")
        y64 = data.astype(np.float64)
        gram = y64.T @ y64
        upper = np.triu(gram)
        self.sum += upper + np.triu(gram, 1).T
        self.sequences_seen += 1
        self.rows_seen += data.shape[0]
        return self

    def accumulate_chunks(self, x: DenseMatrix, seq_len: int | None = None) -> "HessianAccumulator":
        """Fold in x as consecutive sequences of seq_len rows (whole matrix when None)."""
        if seq_len is None or seq_len >= x.rows:
            return self.accumulate(x)
        if seq_len < 1:
            raise ConfigError(f"seq_len must be >= 1, got {seq_len}")
        for start in range(0, x.rows, seq_len):
            self.accumulate(x.data[start:start + seq_len])
        return self

    def merge(self, other: "HessianAccumulator") -> "HessianAccumulator":
        if other.dim != self.dim:
            raise ShapeError(f"cannot merge accumulators of dim {self.dim} and {other.dim}")
        merged = HessianAccumulator(self.dim)
        merged.sum = self.sum + other.sum
        merged.sequences_seen = self.sequences_seen + other.sequences_seen
        merged.rows_seen = self.rows_seen + other.rows_seen
        return merged

    def feature_norms(self) -> np.ndarray:
        """||X[:, i]||_2 for every input feature, read off the diagonal."""
        return np.sqrt(np.clip(np.diag(self.sum), 0.0, None))

    def finalize(self, damping: float) -> np.ndarray:
        """
        Return H + lambda * I with lambda = damping * mean(diag(H)).

        Damping keeps H_II invertible when calibration is under-determined
        (fewer tokens than input features).
        """
        if self.sequences_seen == 0:
            raise EmptyCalibrationError("no calibration sequences were accumulated")
        if damping < 0 or not np.isfinite(damping):
            raise ConfigError(f"damping must be a finite non-negative number, got {damping}")
        h = self.sum.copy()
        lam = damping * float(np.mean(np.diag(h)))
        if lam > 0:
            h[np.diag_indices_from(h)] += lam
        logger.debug(
            "Finalized %dx%d Hessian from %d sequences (%d rows), damping lambda=%.4g",
            self.dim, self.dim, self.sequences_seen, self.rows_seen, lam,
        )
        return h
