import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mask import save_mask
from oracle import solve_batch_direct
from qp_build import build_batch
from solver import SolverConfig, solve_batch
from synthetic import QpInstance, random_instance
from tensor import DenseMatrix, write_tensor

logger = logging.getLogger(__name__)

DEFAULT_DIMS = (8, 32, 128)
DEFAULT_PER_DIM = 67
DEFAULT_AGREEMENT_TOL = 1e-3
DEFAULT_SOLVER_TOL = 1e-8


@dataclass
class VerifyOutcome:
    deviations: list[float]
    worst_index: int
    worst_instance: QpInstance
    tol: float

    @property
    def max_deviation(self) -> float:
        return self.deviations[self.worst_index]

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def deviation(delta: np.ndarray, reference: np.ndarray) -> float:
    """||delta - reference||_inf scaled by 1 + ||reference||_inf."""
    return float(np.max(np.abs(delta - reference)) / (1.0 + np.max(np.abs(reference))))


def instance_deviation(instance: QpInstance, cfg: SolverConfig) -> float:
    batch = build_batch(instance.hessian, instance.weights, instance.mask)
    iterative = solve_batch(batch, cfg)
    direct = solve_batch_direct(batch)
    return max(deviation(it.delta, ref.delta) for it, ref in zip(iterative, direct))


def run_verify(
    seed: int = 0,
    tol: float = DEFAULT_AGREEMENT_TOL,
    solver_tol: float = DEFAULT_SOLVER_TOL,
    dims: tuple[int, ...] = DEFAULT_DIMS,
    per_dim: int = DEFAULT_PER_DIM,
    max_iters: int = 100_000,
) -> VerifyOutcome:
    """Compare the iterative solver with the Cholesky oracle over a seeded grid of instances."""
    rng = np.random.default_rng(seed)
    cfg = SolverConfig.with_tol(solver_tol, max_iters=max_iters, seed=seed)
    deviations: list[float] = []
    worst_index, worst = 0, None
    for d in dims:
        for _ in range(per_dim):
            instance = random_instance(d, rng)
            dev = instance_deviation(instance, cfg)
            deviations.append(dev)
            if worst is None or dev > deviations[worst_index]:
                worst_index, worst = len(deviations) - 1, instance
        logger.info("  d=%d: %d instances, max deviation so far %.3e", d, per_dim, deviations[worst_index])
    return VerifyOutcome(deviations=deviations, worst_index=worst_index, worst_instance=worst, tol=tol)


def dump_instance(out_dir, outcome: VerifyOutcome) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    instance = outcome.worst_instance
    write_tensor(out_dir / "hessian.qptn", DenseMatrix(instance.hessian))
    write_tensor(out_dir / "weights.qptn", instance.weights)
    save_mask(out_dir / "mask.qptn", instance.mask)
    info = {
        "index": outcome.worst_index,
        "deviation": outcome.max_deviation,
        "tol": outcome.tol,
        "dim": instance.hessian.shape[0],
        "cond": instance.cond,
    }
    (out_dir / "instance.json").write_text(json.dumps(info, indent=2) + "\n")
    logger.info("Worst instance written to %s", out_dir)
