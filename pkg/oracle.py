"""Closed-form column solutions through the unconstrained reduction."""

import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from errors import SingularMatrixError
from qp_build import ColumnQpBatch, objective, reduce
from solver import SolveResult, SolveStatus

logger = logging.getLogger(__name__)

# fraction of mean(diag(Q)) added once when the plain factorization fails
RETRY_DAMPING = 0.1


def _factor(q: np.ndarray):
    try:
        return cho_factor(q, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        pass
    lam = RETRY_DAMPING * float(np.mean(np.diag(q)))
    logger.warning("Cholesky failed on %dx%d block, retrying with damping %.3g", q.shape[0], q.shape[0], lam)
    try:
        return cho_factor(q + lam * np.eye(q.shape[0]), lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularMatrixError(f"kept-row block is singular even after damping: {e}") from e


def solve_direct(reduced) -> np.ndarray:
    """Minimizer of z^T Q z + c^T z: solves Q z = -c / 2 by Cholesky."""
    if reduced.c.size == 0:
        return np.zeros(0)
    factor = _factor(reduced.q)
    return cho_solve(factor, -0.5 * reduced.c)


def expand(delta_i: np.ndarray, w_col: np.ndarray, pruned_idx) -> np.ndarray:
    """Scatter the kept-row update back into a full column, fixing dw_S = -w_S."""
    w_col = np.asarray(w_col, dtype=np.float64)
    pruned = np.asarray(pruned_idx, dtype=np.intp)
    kept = np.setdiff1d(np.arange(w_col.size), pruned)
    delta = np.empty(w_col.size, dtype=np.float64)
    delta[pruned] = -w_col[pruned]
    delta[kept] = delta_i
    return delta


def solve_column(h: np.ndarray, w_col: np.ndarray, pruned_idx) -> np.ndarray:
    return expand(solve_direct(reduce(h, w_col, pruned_idx)), w_col, pruned_idx)


def solve_batch_direct(batch: ColumnQpBatch) -> list[SolveResult]:
    """Direct counterpart of solver.solve_batch, same result shape."""
    h = batch.hessian
    results = []
    for problem in batch.columns:
        zero = problem.zeroing_point()
        zero_obj = objective(h, zero)
        status = SolveStatus.CONVERGED
        try:
            delta = solve_column(h, problem.w, problem.pruned_idx)
        except SingularMatrixError as e:
            logger.warning("Column %d: %s; keeping the zeroing point", problem.index, e)
            delta, status = zero, SolveStatus.DEGENERATE
        obj = objective(h, delta)
        if obj > zero_obj:
            delta, obj = zero, zero_obj

        grad = 2.0 * (h @ delta)
        grad[problem.pruned_idx] = 0.0
        results.append(SolveResult(
            column=problem.index,
            delta=delta,
            iterations=0,
            kkt_residual=float(np.max(np.abs(grad), initial=0.0)),
            status=status,
            objective=obj,
            zeroing_objective=zero_obj,
        ))
    return results
