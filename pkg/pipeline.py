import json
import logging
import os
import re
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from tqdm import tqdm

from config import default_batch_cols, default_damping, default_skip_threshold, worker_count
from errors import ConfigError, ShapeError, ValidationError
from hessian import HessianAccumulator
from mask import PruneMask, SelectorConfig, build_mask
from oracle import expand, solve_batch_direct
from qp_build import ColumnQpBatch, build_batch, objective, reduce
from report import REPORT_FILE, build_report, save_report
from solver import (
    SolveResult, SolveStatus, SolverConfig, column_residual,
    estimate_lipschitz, solve_baseline_momentum, solve_batch,
)
from tensor import (
    DenseMatrix, LayerSpec, ModelManifest, matmul64, read_manifest, read_tensor,
    write_manifest, write_tensor,
)

logger = logging.getLogger(__name__)


class UpdateMode(str, Enum):
    QP = "qp"
    NONE = "none"
    BASELINE = "baseline-momentum"


class SolverKind(str, Enum):
    ITERATIVE = "iterative"
    DIRECT = "direct"


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    calib: Path
    out_dir: Path
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    update: UpdateMode = UpdateMode.QP
    solver_kind: SolverKind = SolverKind.ITERATIVE
    damping: float = field(default_factory=default_damping)
    batch_cols: int = field(default_factory=default_batch_cols)
    skip_threshold: float = field(default_factory=default_skip_threshold)
    seq_len: int | None = None
    direct_max_dim: int | None = None
    baseline_steps: int = 1000
    dump_hessian: bool = False
    threads: int | None = None
    show_progress: bool = False

    def __post_init__(self):
        if not 0 < self.skip_threshold <= 1:
            raise ConfigError(f"skip threshold must be in (0, 1], got {self.skip_threshold}")
        if self.damping < 0:
            raise ConfigError(f"damping must be >= 0, got {self.damping}")
        if self.batch_cols < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_cols}")
        if self.seq_len is not None and self.seq_len < 1:
            raise ConfigError(f"sequence length must be >= 1, got {self.seq_len}")

    def echo(self) -> dict:
        """Settings that shape the output; run-local knobs (out dir, threads) are left out."""
        return {
            "manifest": str(self.manifest),
            "calib": str(self.calib),
            "selector": self.selector.selector.value,
            "sparsity": self.selector.sparsity,
            "pattern": self.selector.pattern,
            "mask_file": str(self.selector.mask_file) if self.selector.mask_file else None,
            "update": self.update.value,
            "solver": self.solver_kind.value,
            "rel_tol": self.solver.rel_tol,
            "abs_tol": self.solver.abs_tol,
            "max_iters": self.solver.max_iters,
            "restart": str(self.solver.restart_policy),
            "seed": self.solver.seed,
            "damping": self.damping,
            "batch_cols": self.batch_cols,
            "skip_threshold": self.skip_threshold,
            "seq_len": self.seq_len,
            "direct_max_dim": self.direct_max_dim,
        }


@dataclass
class LayerReport:
    name: str
    initial_error: float
    final_error: float
    skipped: bool
    skip_reason: str | None
    converged_fraction: float
    iterations_p50: int
    iterations_p95: int
    sparsity_achieved: float
    parameters: int = 0
    degenerate_columns: int = 0
    pruned: bool = True

    @property
    def ratio_note(self) -> str | None:
        return "degenerate" if self.pruned and self.initial_error == 0.0 else None

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["ratio"] = relative_error_ratio(self)
        doc["ratio_note"] = self.ratio_note
        return doc


def layer_error(y_dense, y_pruned) -> float:
    """Mean squared difference over all entries, accumulated in float64."""
    a = y_dense.data if isinstance(y_dense, DenseMatrix) else np.asarray(y_dense)
    b = y_pruned.data if isinstance(y_pruned, DenseMatrix) else np.asarray(y_pruned)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare outputs of shape {a.shape} and {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def relative_error_ratio(report: LayerReport) -> float:
    """final / initial layer error; a 0/0 layer counts as 1.0 and is flagged degenerate."""
    if report.initial_error == 0.0:
        return 1.0
    return report.final_error / report.initial_error


def _file_stem(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _output_stems(layers: tuple[LayerSpec, ...]) -> list[str]:
    """
    File stems for each layer's outputs (<stem>.qptn and hessian_<stem>.qptn).

    Layer names that sanitise to the same file name, compared case-insensitively,
    are prefixed with their position in the manifest.
    """
    stems = [_file_stem(layer.name) for layer in layers]
    folded = [s.lower() for s in stems]
    dumps = {f"hessian_{s}" for s in folded}
    out = []
    for i, (stem, key) in enumerate(zip(stems, folded)):
        clash = folded.count(key) > 1 or key in dumps
        out.append(f"{i:03d}_{stem}" if clash else stem)

    names = [f"{s}.qptn".lower() for s in out] + [f"hessian_{s}.qptn".lower() for s in out]
    if len(set(names)) != len(names):
        raise ValidationError("layer names map to colliding output file names")
    return out


def _previous_artifacts(out_dir: Path) -> list[Path]:
    """Files a previous run left in out_dir: its manifest, weights, report and Hessian dumps."""
    found = {out_dir / "manifest.json", out_dir / REPORT_FILE, *out_dir.glob("hessian_*.qptn")}
    try:
        doc = json.loads((out_dir / "manifest.json").read_text())
        found.update(out_dir / layer["weight_file"] for layer in doc["layers"])
    except (OSError, ValueError, KeyError, TypeError):
        pass
    root = out_dir.resolve()
    return sorted(p for p in found if p.is_file() and p.resolve().parent == root)


@contextmanager
def _staging_dir(out_dir: Path):
    """
    Collect artifacts next to out_dir and move them in only if the block succeeds.

    A previous run's artifacts in out_dir are removed first; other files are left alone.
    """
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-staging-", dir=out_dir.parent))
    try:
        yield stage
        out_dir.mkdir(exist_ok=True)
        for stale in _previous_artifacts(out_dir):
            logger.debug("Removing stale output %s", stale)
            stale.unlink()
        for item in sorted(stage.iterdir()):
            os.replace(item, out_dir / item.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _solve_baseline_batch(batch: ColumnQpBatch, cfg: RunConfig) -> list[SolveResult]:
    h = batch.hessian
    results = []
    for problem in batch.columns:
        reduced = reduce(h, problem.w, problem.pruned_idx)
        z = solve_baseline_momentum(reduced, steps=cfg.baseline_steps)
        delta = expand(z, problem.w, problem.pruned_idx)
        zero = problem.zeroing_point()
        r0 = column_residual(h, zero, problem.lower, problem.upper)
        res = column_residual(h, delta, problem.lower, problem.upper)
        threshold = cfg.solver.abs_tol + cfg.solver.rel_tol * r0
        results.append(SolveResult(
            column=problem.index,
            delta=delta,
            iterations=cfg.baseline_steps,
            kkt_residual=res,
            status=SolveStatus.CONVERGED if res <= threshold else SolveStatus.MAX_ITERS,
            objective=objective(h, delta),
            zeroing_objective=objective(h, zero),
        ))
    return results


def _solve_updates(cfg: RunConfig, h: np.ndarray, w: DenseMatrix, mask: PruneMask) -> list[SolveResult]:
    """Solve every column of the layer in fixed batches; results in column order."""
    d, n_cols = w.shape
    batches = [range(s, min(s + cfg.batch_cols, n_cols)) for s in range(0, n_cols, cfg.batch_cols)]
    direct = cfg.solver_kind is SolverKind.DIRECT or (
        cfg.direct_max_dim is not None and d <= cfg.direct_max_dim
    )
    lipschitz = None
    if cfg.update is UpdateMode.QP and not direct:
        lipschitz = estimate_lipschitz(h, cfg.solver.power_iters, cfg.solver.seed)

    def run(cols: range) -> list[SolveResult]:
        batch = build_batch(h, w, mask, cols)
        if cfg.update is UpdateMode.BASELINE:
            return _solve_baseline_batch(batch, cfg)
        if direct:
            return solve_batch_direct(batch)
        return solve_batch(batch, cfg.solver, lipschitz)

    with ThreadPoolExecutor(max_workers=worker_count(cfg.threads)) as pool:
        per_batch = list(pool.map(run, batches))
    return [result for chunk in per_batch for result in chunk]


def _prune_layer(
    cfg: RunConfig, layer: LayerSpec, w: DenseMatrix, x: DenseMatrix,
) -> tuple[DenseMatrix, LayerReport, np.ndarray]:
    acc = HessianAccumulator(layer.rows).accumulate_chunks(x, cfg.seq_len)
    h = acc.finalize(cfg.damping)
    mask = build_mask(cfg.selector, w, layer.name, acc.feature_norms())

    w64 = w.as_float64()
    zeroed = DenseMatrix(mask.apply(w64))
    if cfg.update is UpdateMode.NONE:
        updated, results = zeroed, []
    else:
        results = _solve_updates(cfg, h, w, mask)
        delta = np.stack([r.delta for r in results], axis=1)
        updated = DenseMatrix(mask.apply(w64 + delta))

    x64 = x.as_float64()
    y_dense = x64 @ w64
    initial_error = layer_error(y_dense, x64 @ zeroed.as_float64())
    final_error = layer_error(y_dense, x64 @ updated.as_float64())

    if results:
        statuses = [r.status for r in results]
        converged_fraction = statuses.count(SolveStatus.CONVERGED) / len(statuses)
        degenerate = statuses.count(SolveStatus.DEGENERATE)
        p50, p95 = np.percentile([r.iterations for r in results], [50, 95], method="nearest")
    else:
        converged_fraction, degenerate, p50, p95 = 1.0, 0, 0, 0

    skip_reason = None
    if cfg.update is UpdateMode.QP and converged_fraction < cfg.skip_threshold:
        skip_reason = (
            f"only {converged_fraction:.1%} of column QPs converged "
            f"(threshold {cfg.skip_threshold:.0%})"
        )
    elif final_error > initial_error:
        skip_reason = f"update raised layer error from {initial_error:.6g} to {final_error:.6g}"

    stored = updated
    if skip_reason:
        logger.warning("  Skipping update of %s: %s", layer.name, skip_reason)
        stored, final_error = zeroed, initial_error

    report = LayerReport(
        name=layer.name,
        initial_error=initial_error,
        final_error=final_error,
        skipped=skip_reason is not None,
        skip_reason=skip_reason,
        converged_fraction=converged_fraction,
        iterations_p50=int(p50),
        iterations_p95=int(p95),
        sparsity_achieved=mask.sparsity(),
        parameters=w.rows * w.cols,
        degenerate_columns=degenerate,
    )
    return stored, report, h


def _dense_report(layer: LayerSpec) -> LayerReport:
    return LayerReport(
        name=layer.name, initial_error=0.0, final_error=0.0, skipped=False, skip_reason=None,
        converged_fraction=1.0, iterations_p50=0, iterations_p95=0, sparsity_achieved=0.0,
        parameters=layer.rows * layer.cols, pruned=False,
    )


def _log_summary(reports: list[LayerReport]) -> None:
    pruned = [r for r in reports if r.pruned]
    skipped = [r for r in pruned if r.skipped]
    logger.info("%s", "=" * 70)
    logger.info("PRUNING SUMMARY")
    logger.info("Layers: %d  |  Pruned: %d  |  Skipped: %d", len(reports), len(pruned), len(skipped))
    for r in skipped:
        logger.warning("  %s skipped: %s", r.name, r.skip_reason)
    logger.info("%s", "=" * 70)


def prune_model(cfg: RunConfig) -> tuple[ModelManifest, list[LayerReport]]:
    """
    Prune every manifest layer in order and write the pruned model to cfg.out_dir.

    Per layer: accumulate H from the current (already pruned upstream)
    activations, build the mask, solve the column QPs, apply the skip rule,
    store M * (W + dW) and forward the activations through the stored weights.
    Outputs appear in out_dir only if every layer succeeds.
    """
    manifest = read_manifest(cfg.manifest)
    calib = read_tensor(cfg.calib)
    first = manifest.layers[0]
    if calib.cols != first.rows:
        raise ConfigError(
            f"calibration has {calib.cols} features, first layer {first.name} expects {first.rows}"
        )
    logger.info(
        "Pruning %d layers with %d calibration rows (update=%s, selector=%s, sparsity=%s, pattern=%s)",
        len(manifest.layers), calib.rows, cfg.update.value, cfg.selector.selector.value,
        cfg.selector.sparsity, cfg.selector.pattern,
    )

    stems = _output_stems(manifest.layers)
    x = calib
    reports: list[LayerReport] = []
    out_layers: list[LayerSpec] = []
    with _staging_dir(cfg.out_dir) as stage:
        total = len(manifest.layers)
        for i, layer in enumerate(tqdm(manifest.layers, desc="Pruning layers", disable=not cfg.show_progress), 1):
            logger.info("%s", "─" * 70)
            logger.info("LAYER %d/%d: %s (%dx%d)", i, total, layer.name, layer.rows, layer.cols)
            w = manifest.load_weights(layer)
            stem = stems[i - 1]

            if layer.prune:
                stored, report, h = _prune_layer(cfg, layer, w, x)
                if cfg.dump_hessian:
                    write_tensor(stage / f"hessian_{stem}.qptn", DenseMatrix(h))
                logger.info(
                    "  %s: error %.6g -> %.6g (ratio %.4f) | converged %.1f%% | iters p50=%d p95=%d%s",
                    layer.name, report.initial_error, report.final_error, relative_error_ratio(report),
                    100 * report.converged_fraction, report.iterations_p50, report.iterations_p95,
                    " | SKIPPED" if report.skipped else "",
                )
                if report.ratio_note:
                    logger.warning("  %s: zero initial error, ratio reported as 1.0 (degenerate)", layer.name)
            else:
                stored, report = w, _dense_report(layer)
                logger.info("  %s: marked dense, passing through", layer.name)

            weight_file = f"{stem}.qptn"
            write_tensor(stage / weight_file, stored)
            out_layers.append(LayerSpec(
                name=layer.name, rows=layer.rows, cols=layer.cols, weight_file=weight_file,
                activation=layer.activation, prune=layer.prune,
            ))
            reports.append(report)
            x = DenseMatrix(layer.activation.apply(matmul64(x.data, stored.data)))

        pruned_manifest = ModelManifest(layers=tuple(out_layers), base_dir=Path(cfg.out_dir))
        write_manifest(stage / "manifest.json", pruned_manifest)
        save_report(build_report([r.to_json() for r in reports], cfg.echo()), stage / REPORT_FILE)

    _log_summary(reports)
    return pruned_manifest, reports
