"""
Column-wise reconstruction QPs sharing one Hessian.

For output column j with pruned row set S_j the problem is

    minimize  dw^T H dw   subject to  dw_i = -w_i  for i in S_j

Equality constraints are encoded as tight variable bounds (lower == upper ==
-w_i); free variables carry the +/-FREE_BOUND sentinel, which the solver's
clamp leaves untouched. reduce() eliminates the fixed variables into the
unconstrained form  z^T Q z + c^T z + const  over the kept rows I_j.
"""

import logging
from dataclasses import dataclass

import numpy as np

from errors import ShapeError
from mask import PruneMask
from tensor import DenseMatrix

logger = logging.getLogger(__name__)

FREE_BOUND = np.finfo(np.float64).max


@dataclass(frozen=True)
class ColumnProblem:
    index: int
    w: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pruned_idx: np.ndarray

    def zeroing_point(self) -> np.ndarray:
        return zeroing_point(self.w, self.pruned_idx)


@dataclass(frozen=True)
class ColumnQpBatch:
    hessian: np.ndarray
    columns: tuple[ColumnProblem, ...]

    @property
    def dim(self) -> int:
        return self.hessian.shape[0]

    def __len__(self) -> int:
        return len(self.columns)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W, lower, upper), each dim x len(batch), one column per problem."""
        w = np.stack([p.w for p in self.columns], axis=1)
        lower = np.stack([p.lower for p in self.columns], axis=1)
        upper = np.stack([p.upper for p in self.columns], axis=1)
        return w, lower, upper


@dataclass(frozen=True)
class ReducedQp:
    q: np.ndarray
    c: np.ndarray
    const_term: float
    kept_idx: np.ndarray
    pruned_idx: np.ndarray

    def value(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(z @ (self.q @ z) + self.c @ z + self.const_term)


def column_bounds(w_col: np.ndarray, pruned_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lower = np.full(w_col.size, -FREE_BOUND)
    upper = np.full(w_col.size, FREE_BOUND)
    lower[pruned_idx] = -w_col[pruned_idx]
    upper[pruned_idx] = -w_col[pruned_idx]
    return lower, upper


def zeroing_point(w_col: np.ndarray, pruned_idx: np.ndarray) -> np.ndarray:
    """The update that only zeroes the pruned weights: dw_S = -w_S, dw_I = 0."""
    delta = np.zeros(w_col.size, dtype=np.float64)
    delta[pruned_idx] = -np.asarray(w_col, dtype=np.float64)[pruned_idx]
    return delta


def build_batch(h: np.ndarray, w: DenseMatrix, mask: PruneMask, col_range: range | None = None) -> ColumnQpBatch:
    d = h.shape[0]
    if h.shape != (d, d):
        raise ShapeError(f"Hessian must be square, got {h.shape}")
    if w.rows != d:
        raise ShapeError(f"weights have {w.rows} input rows, Hessian is {d}x{d}")
    if mask.shape != w.shape:
        raise ShapeError(f"mask {mask.shape} does not match weights {w.shape}")
    if col_range is None:
        col_range = range(w.cols)
    if col_range.start < 0 or col_range.stop > w.cols:
        raise ShapeError(f"column range {col_range} outside [0, {w.cols})")

    w64 = w.as_float64()
    columns = []
    for j in col_range:
        w_col = w64[:, j].copy()
        pruned = mask.pruned_indices(j)
        lower, upper = column_bounds(w_col, pruned)
        columns.append(ColumnProblem(index=j, w=w_col, lower=lower, upper=upper, pruned_idx=pruned))
    return ColumnQpBatch(hessian=h, columns=tuple(columns))


def reduce(h: np.ndarray, w_col: np.ndarray, pruned_idx) -> ReducedQp:
    """Eliminate the fixed variables; kept rows stay in their original order."""
    d = h.shape[0]
    w_col = np.asarray(w_col, dtype=np.float64)
    if w_col.shape != (d,):
        raise ShapeError(f"column has shape {w_col.shape}, Hessian is {d}x{d}")
    pruned = np.unique(np.asarray(pruned_idx, dtype=np.intp))
    if pruned.size and (pruned[0] < 0 or pruned[-1] >= d):
        raise ShapeError(f"pruned indices must lie in [0, {d})")
    kept = np.setdiff1d(np.arange(d), pruned, assume_unique=True)

    w_s = w_col[pruned]
    q = h[np.ix_(kept, kept)]
    c = -2.0 * (h[np.ix_(kept, pruned)] @ w_s)
    const_term = float(w_s @ (h[np.ix_(pruned, pruned)] @ w_s))
    return ReducedQp(q=q, c=c, const_term=const_term, kept_idx=kept, pruned_idx=pruned)


def objective(h: np.ndarray, delta: np.ndarray) -> float:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (h.shape[0],):
        raise ShapeError(f"update has shape {delta.shape}, Hessian is {h.shape}")
    return float(delta @ (h @ delta))


def batch_objective(h: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Column-wise dw^T H dw for a dim x B block of updates."""
    return np.einsum("ij,ij->j", deltas, h @ deltas)
