"""Activation-matrix file format, layer flattening, normalization, synthetic data.

The on-disk matrix format ("DSCE1") is little-endian and self-describing:

    magic   5 bytes   b"DSCE1"
    u32     n_instances
    u32     dim                  activation values per instance
    u16     span count           how many network layers the columns came from
    spans   per span: u32 layer_id, u32 offset, u32 length
    payload n_instances * dim float32, row-major

Spans must tile [0, dim) in order. Labels are not part of the binary; they
live in a sidecar JSON manifest {"labels": [...], "class_names": [...]} so
they stay human-inspectable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from ._binio import (
    BadMagicError,
    FormatError,
    NonFiniteError,
    Reader,
    TruncatedError,
    f32_bytes,
    u16,
    u32,
)

__all__ = [
    "ActivationMatrix",
    "BadMagicError",
    "ClassSpec",
    "FormatError",
    "LabeledSet",
    "LayerSpan",
    "MissingLayerError",
    "NonFiniteError",
    "Normalizer",
    "TruncatedError",
    "apply_normalizer",
    "class_means",
    "decode_matrix",
    "encode_matrix",
    "fit_normalizer",
    "flatten_select",
    "load_labeled",
    "load_matrix",
    "matrix_from_vectors",
    "route_nearest_mean",
    "save_labeled",
    "save_matrix",
    "synth_generate",
]

MAGIC = b"DSCE1"


class MissingLayerError(ValueError):
    """A selected layer id is absent from the supplied raw layers."""


class LayerSpan(NamedTuple):
    layer_id: int
    offset: int
    length: int


def _check_spans(spans: Sequence[LayerSpan], dim: int, source: str) -> None:
    expected_offset = 0
    for span in spans:
        if span.length < 1:
            raise FormatError(f"{source}: span for layer {span.layer_id} has zero length")
        if span.offset != expected_offset:
            raise FormatError(
                f"{source}: span for layer {span.layer_id} starts at {span.offset}, "
                f"expected {expected_offset} (spans must be ordered and disjoint)"
            )
        expected_offset += span.length
    if expected_offset != dim:
        raise FormatError(
            f"{source}: span lengths sum to {expected_offset}, dim is {dim}"
        )


@dataclass(frozen=True)
class ActivationMatrix:
    """Row-major instance x feature matrix of flattened activations."""

    data: np.ndarray  # (n_instances, dim) float32
    layer_index: tuple[LayerSpan, ...]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise FormatError(f"matrix data must be 2-D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise NonFiniteError("matrix contains NaN or infinite values")
        spans = tuple(LayerSpan(*s) for s in self.layer_index)
        _check_spans(spans, data.shape[1], "matrix")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "layer_index", spans)

    @property
    def n_instances(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabeledSet:
    """An activation matrix plus per-instance class labels."""

    matrix: ActivationMatrix
    labels: tuple[int, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        names = tuple(str(n) for n in self.class_names)
        if len(labels) != self.matrix.n_instances:
            raise ValueError(
                f"{len(labels)} labels for {self.matrix.n_instances} instances"
            )
        if labels and (min(labels) < 0 or max(labels) >= len(names)):
            raise ValueError("label outside [0, n_classes)")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def encode_matrix(matrix: ActivationMatrix) -> bytes:
    parts = [MAGIC, u32(matrix.n_instances), u32(matrix.dim), u16(len(matrix.layer_index))]
    for span in matrix.layer_index:
        parts.extend((u32(span.layer_id), u32(span.offset), u32(span.length)))
    parts.append(f32_bytes(matrix.data))
    return b"".join(parts)


def decode_matrix(blob: bytes, source: str = "<bytes>") -> ActivationMatrix:
    r = Reader(blob, source)
    r.magic(MAGIC)
    n_instances = r.u32()
    dim = r.u32()
    n_spans = r.u16()
    spans = tuple(LayerSpan(r.u32(), r.u32(), r.u32()) for _ in range(n_spans))
    _check_spans(spans, dim, source)
    payload = r.f32_array(n_instances * dim).reshape(n_instances, dim)
    r.finish()
    if not np.isfinite(payload).all():
        raise NonFiniteError(f"{source}: payload contains NaN or infinite values")
    return ActivationMatrix(payload, spans)


def save_matrix(matrix: ActivationMatrix, path) -> None:
    Path(path).write_bytes(encode_matrix(matrix))


def load_matrix(path) -> ActivationMatrix:
    path = Path(path)
    return decode_matrix(path.read_bytes(), str(path))


def save_labeled(ls: LabeledSet, matrix_path, manifest_path) -> None:
    save_matrix(ls.matrix, matrix_path)
    manifest = {"labels": list(ls.labels), "class_names": list(ls.class_names)}
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")


def load_labeled(matrix_path, manifest_path) -> LabeledSet:
    matrix = load_matrix(matrix_path)
    manifest = json.loads(Path(manifest_path).read_text())
    return LabeledSet(matrix, tuple(manifest["labels"]), tuple(manifest["class_names"]))


def flatten_select(
    raw_layers: Mapping[int, np.ndarray], selected: Sequence[int]
) -> tuple[np.ndarray, tuple[LayerSpan, ...]]:
    """Concatenate the selected layers' tensors into one flat float32 vector.

    Layers are concatenated in the given `selected` order; within a layer,
    elements keep the tensor's native (C-order) serialization. Returns the
    vector together with the layer spans describing each column range.
    """
    parts: list[np.ndarray] = []
    spans: list[LayerSpan] = []
    offset = 0
    for layer_id in selected:
        if layer_id not in raw_layers:
            raise MissingLayerError(f"layer {layer_id} not present in raw activations")
        flat = np.ascontiguousarray(raw_layers[layer_id], dtype=np.float32).ravel()
        spans.append(LayerSpan(int(layer_id), offset, flat.size))
        offset += flat.size
        parts.append(flat)
    if not parts:
        return np.zeros(0, dtype=np.float32), ()
    return np.concatenate(parts), tuple(spans)


def matrix_from_vectors(
    vectors: Iterable[np.ndarray], layer_index: Sequence[LayerSpan]
) -> ActivationMatrix:
    rows = [np.asarray(v, dtype=np.float32) for v in vectors]
    return ActivationMatrix(np.vstack(rows), tuple(layer_index))


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension min-max scaler fit on training data, clamped on unseen data."""

    mins: np.ndarray  # float64
    maxs: np.ndarray  # float64

    def __post_init__(self):
        mins = np.ascontiguousarray(self.mins, dtype=np.float64)
        maxs = np.ascontiguousarray(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ValueError("min/max must be 1-D arrays of equal length")
        if np.any(mins > maxs):
            raise ValueError("normalizer has min > max in some dimension")
        mins.flags.writeable = False
        maxs.flags.writeable = False
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def dim(self) -> int:
        return self.mins.shape[0]


def fit_normalizer(data) -> Normalizer:
    """Fit per-dimension min/max on a training matrix (2-D array or ActivationMatrix)."""
    arr = data.data if isinstance(data, ActivationMatrix) else np.asarray(data)
    arr = arr.astype(np.float64, copy=False)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("normalizer needs a non-empty 2-D training matrix")
    return Normalizer(arr.min(axis=0), arr.max(axis=0))


def apply_normalizer(nrm: Normalizer, vector: np.ndarray) -> np.ndarray:
    """Map values into [0, 1]: training range scales linearly, unseen values clamp.

    Dimensions that were constant in training map to 0.5.
    """
    v = np.asarray(vector, dtype=np.float64)
    if v.shape[-1] != nrm.dim:
        raise ValueError(f"vector has dim {v.shape[-1]}, normalizer has {nrm.dim}")
    scale = nrm.maxs - nrm.mins
    flat = scale == 0
    safe = np.where(flat, 1.0, scale)
    out = np.clip((v - nrm.mins) / safe, 0.0, 1.0)
    return np.where(flat, 0.5, out)


@dataclass(frozen=True)
class ClassSpec:
    """One synthetic class: isotropic Gaussian around `mean` with `stddev`."""

    name: str
    mean: np.ndarray
    stddev: float
    count: int


def synth_generate(spec: Sequence[ClassSpec], seed: int) -> LabeledSet:
    """Draw a labeled Gaussian mixture, deterministic per seed.

    Classes are emitted in spec order with labels 0..len(spec)-1; all class
    means must share one dimension and stddevs must be positive.
    """
    if not spec:
        raise ValueError("synthetic spec has no classes")
    means = [np.asarray(c.mean, dtype=np.float64) for c in spec]
    dim = means[0].shape[0]
    for c, m in zip(spec, means):
        if m.ndim != 1 or m.shape[0] != dim:
            raise ValueError(f"class {c.name!r}: mean dimension differs from {dim}")
        if not c.stddev > 0:
            raise ValueError(f"class {c.name!r}: stddev must be positive")
        if c.count < 0:
            raise ValueError(f"class {c.name!r}: negative count")
    rng = np.random.default_rng(seed)
    rows: list[np.ndarray] = []
    labels: list[int] = []
    for j, (c, m) in enumerate(zip(spec, means)):
        samples = m + c.stddev * rng.standard_normal((c.count, dim))
        rows.append(samples.astype(np.float32))
        labels.extend([j] * c.count)
    data = np.vstack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    matrix = ActivationMatrix(data, (LayerSpan(0, 0, dim),))
    return LabeledSet(matrix, tuple(labels), tuple(c.name for c in spec))


def class_means(ls: LabeledSet) -> np.ndarray:
    """Per-class mean vectors of a labeled set, shape (n_classes, dim)."""
    labels = np.asarray(ls.labels)
    means = np.zeros((ls.n_classes, ls.matrix.dim), dtype=np.float64)
    for j in range(ls.n_classes):
        members = ls.matrix.data[labels == j]
        if members.shape[0] == 0:
            raise ValueError(f"class {ls.class_names[j]!r} has no instances")
        means[j] = members.mean(axis=0, dtype=np.float64)
    return means


def route_nearest_mean(means: np.ndarray, matrix: ActivationMatrix) -> np.ndarray:
    """Stand-in for the upstream network's prediction: nearest class mean.

    Ties go to the lowest class id.
    """
    x = matrix.data.astype(np.float64)
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)
