"""
Batched solver for the box-constrained column QPs.

With the pruned-variable equalities written as tight bounds the problems carry
no general linear constraints, so the restarted accelerated primal-dual scheme
reduces to restarted accelerated projected gradient: the projection is a clamp
to the bounds, and the only expensive operation per iteration is one product
of the shared Hessian with the block of iterates.

Convergence measure: the infinity norm of the projected gradient,
    r(x) = || x - clip(x - 2 H x, lower, upper) ||_inf,
accepted once r <= abs_tol + rel_tol * r(zeroing point).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from config import DEFAULT_BASELINE_LRS, DEFAULT_MAX_ITERS, DEFAULT_POWER_ITERS, DEFAULT_TOL
from errors import ConfigError
from qp_build import ColumnQpBatch, ReducedQp, batch_objective

logger = logging.getLogger(__name__)

LIPSCHITZ_FLOOR = 1e-12
STEP_SAFETY = 1.05
ADAPTIVE_RESTART_CAP = 1000
_TIE_EPS = 8 * np.finfo(np.float64).eps


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class RestartPolicy:
    kind: str = "adaptive"
    period: int = ADAPTIVE_RESTART_CAP

    def __post_init__(self):
        if self.kind not in ("adaptive", "fixed"):
            raise ConfigError(f"restart policy must be 'adaptive' or 'fixed:K', got {self.kind!r}")
        if self.period < 1:
            raise ConfigError(f"restart period must be >= 1, got {self.period}")

    @classmethod
    def parse(cls, text: str) -> "RestartPolicy":
        if text == "adaptive":
            return cls()
        kind, _, period = text.partition(":")
        if kind != "fixed" or not period.isdigit():
            raise ConfigError(f"restart policy must be 'adaptive' or 'fixed:K', got {text!r}")
        return cls("fixed", int(period))

    def __str__(self) -> str:
        return "adaptive" if self.kind == "adaptive" else f"fixed:{self.period}"


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = DEFAULT_TOL
    abs_tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    restart_policy: RestartPolicy = field(default_factory=RestartPolicy)
    power_iters: int = DEFAULT_POWER_ITERS
    seed: int = 0

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigError(f"tolerances must be > 0, got rel={self.rel_tol} abs={self.abs_tol}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.power_iters < 1:
            raise ConfigError(f"power_iters must be >= 1, got {self.power_iters}")

    @classmethod
    def with_tol(cls, tol: float, **kwargs) -> "SolverConfig":
        return cls(rel_tol=tol, abs_tol=tol, **kwargs)


@dataclass(frozen=True)
class SolveResult:
    column: int
    delta: np.ndarray
    iterations: int
    kkt_residual: float
    status: SolveStatus
    objective: float
    zeroing_objective: float
    restarts: int = 0
    restart_objectives: tuple[float, ...] = ()


def estimate_lipschitz(h: np.ndarray, iters: int = DEFAULT_POWER_ITERS, seed: int = 0) -> float:
    """Power-iteration estimate of lambda_max(2H), the gradient's Lipschitz constant."""
    if iters < 1:
        raise ConfigError(f"power iterations must be >= 1, got {iters}")
    if not np.any(h):
        return LIPSCHITZ_FLOOR
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(h.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        hv = h @ v
        norm = np.linalg.norm(hv)
        if norm == 0.0:
            break
        v = hv / norm
    rayleigh = float(v @ (h @ v))
    return max(2.0 * rayleigh, LIPSCHITZ_FLOOR)


def _projected_residual(x: np.ndarray, grad: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return np.max(np.abs(x - np.clip(x - grad, lower, upper)), axis=0, initial=0.0)


def column_residual(h: np.ndarray, delta: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """Projected-gradient residual of a single column update."""
    delta = np.asarray(delta, dtype=np.float64)
    grad = 2.0 * (h @ delta)
    return float(np.max(np.abs(delta - np.clip(delta - grad, lower, upper)), initial=0.0))


def solve_batch(batch: ColumnQpBatch, cfg: SolverConfig, lipschitz: float | None = None) -> list[SolveResult]:
    """
    Solve every column problem of the batch; results come back in column order.

    Starts from the zeroing point and tracks the best iterate per column, so a
    returned update never has a higher objective than zeroing alone. Columns
    whose iterates turn non-finite stop with status degenerate.
    """
    if len(batch) == 0:
        return []
    h = batch.hessian
    w, lower, upper = batch.stacked()
    n_cols = w.shape[1]
    if lipschitz is None:
        lipschitz = estimate_lipschitz(h, cfg.power_iters, cfg.seed)
    step = 1.0 / (STEP_SAFETY * lipschitz)
    policy = cfg.restart_policy

    x0 = np.clip(np.zeros_like(w), lower, upper)
    hx0 = h @ x0
    f0 = np.einsum("ij,ij->j", x0, hx0)
    r0 = _projected_residual(x0, 2.0 * hx0, lower, upper)
    threshold = cfg.abs_tol + cfg.rel_tol * r0

    x, hx = x0.copy(), hx0.copy()
    y, hy = x0.copy(), hx0.copy()
    t = np.ones(n_cols)
    f_prev = f0.copy()
    best_x, best_f, best_res = x0.copy(), f0.copy(), r0.copy()

    iterations = np.zeros(n_cols, dtype=np.int64)
    cycle = np.zeros(n_cols, dtype=np.int64)
    restarts = np.zeros(n_cols, dtype=np.int64)
    restart_objectives: list[list[float]] = [[] for _ in range(n_cols)]
    degenerate = np.zeros(n_cols, dtype=bool)
    # a nonzero start residual always gets at least one step
    active = r0 > 0.0

    for it in range(1, cfg.max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        lo, hi = lower[:, idx], upper[:, idx]
        x_old, hx_old = x[:, idx], hx[:, idx]

        with np.errstate(all="ignore"):
            x_new = np.clip(y[:, idx] - (2.0 * step) * hy[:, idx], lo, hi)
            hx_new = h @ x_new
            f_new = np.einsum("ij,ij->j", x_new, hx_new)
            res = _projected_residual(x_new, 2.0 * hx_new, lo, hi)
        iterations[idx] = it

        finite = np.isfinite(f_new) & np.isfinite(res) & np.isfinite(hx_new).all(axis=0)
        if not finite.all():
            bad = idx[~finite]
            degenerate[bad] = True
            active[bad] = False
            logger.warning("Non-finite iterate in %d column(s) at iteration %d", bad.size, it)

        # near the optimum the objective stalls at rounding level; accept a
        # tie there if it lowers the residual
        tie = f_new <= best_f[idx] + _TIE_EPS * np.abs(best_f[idx])
        improved = finite & ((f_new < best_f[idx]) | (tie & (res < best_res[idx])))
        if improved.any():
            cols = idx[improved]
            best_x[:, cols] = x_new[:, improved]
            best_f[cols] = np.minimum(best_f[cols], f_new[improved])
            best_res[cols] = res[improved]

        done = finite & (best_res[idx] <= threshold[idx])
        active[idx[done]] = False

        cycle[idx] += 1
        if policy.kind == "adaptive":
            restart = (f_new > f_prev[idx]) | (cycle[idx] >= policy.period)
        else:
            restart = cycle[idx] >= policy.period

        t_old = t[idx]
        t_new = (1.0 + np.sqrt(1.0 + 4.0 * t_old * t_old)) / 2.0
        beta = (t_old - 1.0) / t_new
        beta[restart] = 0.0
        t_new[restart] = 1.0
        with np.errstate(all="ignore"):
            y[:, idx] = x_new + beta * (x_new - x_old)
            hy[:, idx] = hx_new + beta * (hx_new - hx_old)
        x[:, idx], hx[:, idx] = x_new, hx_new
        f_prev[idx], t[idx] = f_new, t_new

        for k in idx[restart]:
            cycle[k] = 0
            restarts[k] += 1
            restart_objectives[k].append(float(best_f[k]))

    deltas = np.clip(best_x, lower, upper)
    objs = batch_objective(h, deltas)
    zero_objs = batch_objective(h, x0)

    results = []
    for k, problem in enumerate(batch.columns):
        zero = x0[:, k]
        delta = deltas[:, k].copy()
        obj, zero_obj = float(objs[k]), float(zero_objs[k])
        residual = float(best_res[k])
        if obj > zero_obj:
            delta, obj, residual = zero.copy(), zero_obj, float(r0[k])

        if degenerate[k]:
            status = SolveStatus.DEGENERATE
        elif residual <= threshold[k]:
            status = SolveStatus.CONVERGED
        else:
            status = SolveStatus.MAX_ITERS

        results.append(SolveResult(
            column=problem.index,
            delta=delta,
            iterations=int(iterations[k]),
            kkt_residual=residual,
            status=status,
            objective=obj,
            zeroing_objective=zero_obj,
            restarts=int(restarts[k]),
            restart_objectives=tuple(restart_objectives[k]),
        ))

    n_conv = sum(r.status is SolveStatus.CONVERGED for r in results)
    logger.debug(
        "Solved %d columns (step=%.3g): %d converged, max iterations %d",
        n_cols, step, n_conv, int(iterations.max(initial=0)),
    )
    return results


def _run_baseline(q: np.ndarray, c: np.ndarray, lr: float, steps: int, method: str, momentum: float) -> np.ndarray | None:
    z = np.zeros(c.size)
    buf = np.zeros(c.size)
    second = np.zeros(c.size)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    with np.errstate(all="ignore"):
        for step in range(steps):
            lr_t = lr * (1.0 - step / steps)
            grad = 2.0 * (q @ z) + c
            if method == "adam":
                buf = beta1 * buf + (1.0 - beta1) * grad
                second = beta2 * second + (1.0 - beta2) * grad * grad
                m_hat = buf / (1.0 - beta1 ** (step + 1))
                v_hat = second / (1.0 - beta2 ** (step + 1))
                z = z - lr_t * m_hat / (np.sqrt(v_hat) + eps)
            else:
                buf = momentum * buf + grad
                z = z - lr_t * buf
            if not np.isfinite(z).all():
                return None
    return z


def solve_baseline_momentum(
    reduced: ReducedQp,
    lr_grid=DEFAULT_BASELINE_LRS,
    steps: int = 1000,
    method: str = "momentum",
    momentum: float = 0.9,
) -> np.ndarray:
    """
    Best-of-grid first-order baseline on the unconstrained objective z^T Q z + c^T z.

    Each learning rate decays linearly to zero over `steps`. There is no
    convergence guarantee: ill-conditioned Q leaves slow directions unsolved
    and large rates diverge. When every run diverges the zeroing point (z = 0)
    is returned.
    """
    if method not in ("momentum", "adam"):
        raise ConfigError(f"baseline method must be 'momentum' or 'adam', got {method!r}")
    if steps < 1:
        raise ConfigError(f"baseline steps must be >= 1, got {steps}")
    n = reduced.c.size
    if n == 0:
        return np.zeros(0)

    best_z, best_f = None, math.inf
    for lr in lr_grid:
        z = _run_baseline(reduced.q, reduced.c, lr, steps, method, momentum)
        if z is None:
            logger.debug("Baseline %s diverged at lr=%g", method, lr)
            continue
        f = float(z @ (reduced.q @ z) + reduced.c @ z)
        if not math.isfinite(f):
            continue
        if f < best_f:
            best_z, best_f = z, f

    if best_z is None:
        logger.warning("Baseline %s diverged for every learning rate, keeping the zeroing point", method)
        return np.zeros(n)
    return best_z
