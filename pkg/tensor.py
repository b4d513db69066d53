"""
Dense matrices, the QPTN tensor file format and the model manifest.

Orientation convention used everywhere in this package: a weight matrix W is
d_in x d_out (rows are input features, columns are output units), so every
column of W is one independent reconstruction problem. Activations X are
n_tokens x d_in and a layer computes X @ W.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from errors import ShapeError, TensorFormatError, TensorIOError, ValidationError

logger = logging.getLogger(__name__)

MAGIC = b"QPTN"
VERSION = 1
# magic | version u32 | ndim u32 | dim0 u64 | dim1 u64, all little-endian
_HEADER = struct.Struct("<4sIIQQ")
_PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Immutable row-major float32 matrix. Safe to share read-only across workers."""
    data: np.ndarray

    def __post_init__(self):
        with np.errstate(over="ignore", invalid="ignore"):
            arr = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"DenseMatrix must be 2-D, got {arr.ndim}-D")
        if not np.isfinite(arr).all():
            raise ValidationError("DenseMatrix entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def read_tensor(path) -> DenseMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Tensor file not found: {path}")
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise TensorIOError(f"Cannot read tensor file {path}: {e}") from e

    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TensorIOError(f"{path}: truncated header ({len(raw)} bytes)")

    _, version, ndim, rows, cols = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if ndim != 2:
        raise TensorFormatError(f"{path}: only 2-D tensors are supported, got ndim={ndim}")
    if rows == 0 or cols == 0:
        raise TensorFormatError(f"{path}: empty dimensions ({rows}, {cols})")

    expected = rows * cols * _PAYLOAD_DTYPE.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise TensorIOError(f"{path}: truncated payload, {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise TensorFormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")

    values = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(rows, cols)
    if not np.isfinite(values).all():
        raise ValidationError(f"{path}: tensor contains non-finite values")
    return DenseMatrix(values)


def encode_tensor(m: DenseMatrix) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, 2, m.rows, m.cols)
    return header + m.data.astype(_PAYLOAD_DTYPE, copy=False).tobytes(order="C")


def write_tensor(path, m: DenseMatrix) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_tensor(m))
    except OSError as e:
        raise TensorIOError(f"Cannot write tensor file {path}: {e}") from e
    logger.debug("Wrote %dx%d tensor to %s", m.rows, m.cols, path)


def matmul64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two matrices with float64 accumulation."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    return DenseMatrix(matmul64(a.data, b.data))


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        return x


@dataclass(frozen=True)
class LayerSpec:
    name: str
    rows: int  # d_in
    cols: int  # d_out
    weight_file: str
    activation: Activation = Activation.IDENTITY
    prune: bool = True

    def to_json(self) -> dict:
        entry = {
            "name": self.name,
            "rows": self.rows,
            "cols": self.cols,
            "weight_file": self.weight_file,
            "activation": self.activation.value,
        }
        if not self.prune:
            entry["prune"] = False
        return entry


@dataclass(frozen=True)
class ModelManifest:
    layers: tuple[LayerSpec, ...]
    base_dir: Path = field(default=Path("."), compare=False)

    def validate(self) -> None:
        if not self.layers:
            raise ValidationError("manifest has no layers")
        names = [layer.name for layer in self.layers]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValidationError(f"duplicate layer names: {', '.join(dupes)}")
        for layer in self.layers:
            if layer.rows < 1 or layer.cols < 1:
                raise ValidationError(f"layer {layer.name}: dims must be positive, got {layer.rows}x{layer.cols}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.cols != nxt.rows:
                raise ShapeError(
                    f"layers {prev.name} -> {nxt.name} do not compose: {prev.cols} outputs vs {nxt.rows} inputs"
                )

    def weight_path(self, layer: LayerSpec) -> Path:
        return self.base_dir / layer.weight_file

    def load_weights(self, layer: LayerSpec) -> DenseMatrix:
        w = read_tensor(self.weight_path(layer))
        if w.shape != (layer.rows, layer.cols):
            raise ShapeError(f"layer {layer.name}: weight file is {w.shape}, manifest says {(layer.rows, layer.cols)}")
        return w


def _parse_layer(entry: dict) -> LayerSpec:
    try:
        return LayerSpec(
            name=str(entry["name"]),
            rows=int(entry["rows"]),
            cols=int(entry["cols"]),
            weight_file=str(entry["weight_file"]),
            activation=Activation(entry.get("activation", "identity")),
            prune=bool(entry.get("prune", True)),
        )
    except KeyError as e:
        raise ValidationError(f"manifest layer is missing field {e}") from e
    except ValueError as e:
        raise ValidationError(f"manifest layer {entry.get('name', '?')}: {e}") from e


def read_manifest(path) -> ModelManifest:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"Manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: manifest is not valid JSON: {e}") from e

    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list):
        raise ValidationError(f"{path}: manifest must be an object with a 'layers' list")
    manifest = ModelManifest(
        layers=tuple(_parse_layer(entry) for entry in doc["layers"]),
        base_dir=path.parent,
    )
    manifest.validate()
    return manifest


def write_manifest(path, manifest: ModelManifest) -> None:
    doc = {"layers": [layer.to_json() for layer in manifest.layers]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
