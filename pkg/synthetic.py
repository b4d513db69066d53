"""
Seeded synthetic models, calibration data and column-QP instances.

Everything here draws from a numpy Generator built from one integer seed, so
equal arguments produce byte-identical files.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import ConfigError
from mask import PruneMask, ScoreRule, ScoreKind, score, select_unstructured
from tensor import Activation, DenseMatrix, LayerSpec, ModelManifest, write_manifest, write_tensor

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
CALIB_FILE = "calib.qptn"


def random_spd(d: int, cond: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric positive definite d x d matrix with eigenvalues spread over [1, cond]."""
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    if cond < 1:
        raise ConfigError(f"condition number must be >= 1, got {cond}")
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q *= np.sign(np.diag(r))
    eig = np.geomspace(1.0, cond, d)
    h = (q * eig) @ q.T
    return (h + h.T) / 2.0


def correlated_inputs(rows: int, dim: int, rho: float, rng: np.random.Generator) -> DenseMatrix:
    """rows x dim samples whose features have unit variance and pairwise correlation rho."""
    if dim < 2:
        raise ConfigError(f"dim must be >= 2, got {dim}")
    if rows < 1:
        raise ConfigError(f"rows must be >= 1, got {rows}")
    if not 0 <= rho < 1:
        raise ConfigError(f"rho must be in [0, 1), got {rho}")
    sigma = (1.0 - rho) * np.eye(dim) + rho * np.ones((dim, dim))
    a = np.linalg.cholesky(sigma)
    z = rng.standard_normal((rows, dim))
    return DenseMatrix(z @ a.T)


def random_weights(rows: int, cols: int, rng: np.random.Generator) -> DenseMatrix:
    return DenseMatrix(rng.standard_normal((rows, cols)) / np.sqrt(rows))


def generate_model(
    out_dir,
    layers: int = 4,
    dim: int = 128,
    rows: int = 4096,
    rho: float = 0.6,
    seed: int = 0,
    activation: Activation = Activation.RELU,
) -> tuple[Path, Path]:
    """
    Write a square MLP of `layers` dim x dim layers plus a calibration matrix.

    Hidden layers use `activation`; the last layer is identity. Returns the
    manifest and calibration paths.
    """
    if layers < 1:
        raise ConfigError(f"layers must be >= 1, got {layers}")
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    specs = []
    for i in range(layers):
        name = f"layer{i}"
        act = activation if i < layers - 1 else Activation.IDENTITY
        write_tensor(out_dir / f"{name}.qptn", random_weights(dim, dim, rng))
        specs.append(LayerSpec(name=name, rows=dim, cols=dim, weight_file=f"{name}.qptn", activation=act))

    manifest = ModelManifest(layers=tuple(specs), base_dir=out_dir)
    manifest.validate()
    manifest_path = out_dir / MANIFEST_FILE
    write_manifest(manifest_path, manifest)

    calib_path = out_dir / CALIB_FILE
    write_tensor(calib_path, correlated_inputs(rows, dim, rho, rng))
    logger.info(
        "Generated %d-layer synthetic model (dim=%d, rows=%d, rho=%.2f, seed=%d) in %s",
        layers, dim, rows, rho, seed, out_dir,
    )
    return manifest_path, calib_path


@dataclass(frozen=True)
class QpInstance:
    hessian: np.ndarray
    weights: DenseMatrix
    mask: PruneMask
    cond: float


def random_instance(
    d: int,
    rng: np.random.Generator,
    cols: int = 4,
    sparsity: float = 0.5,
    cond: float | None = None,
    max_cond: float = 1e3,
) -> QpInstance:
    """SPD Hessian, O(1) weights and a per-column magnitude mask; cond drawn log-uniform when None."""
    if cond is None:
        cond = float(10 ** rng.uniform(0.0, np.log10(max_cond)))
    h = random_spd(d, cond, rng)
    w = DenseMatrix(rng.standard_normal((d, cols)))
    mask = select_unstructured(score(w, ScoreRule(ScoreKind.MAGNITUDE)), sparsity)
    return QpInstance(hessian=h, weights=w, mask=mask, cond=cond)
