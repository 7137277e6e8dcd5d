"""Offline training and online scoring runs, plus state (de)serialization.

Offline: train the autoencoder on all flattened training activations, reduce
and min-max normalize them, then feed each class's normalized codes into its
own clusterer (window = class training count + 1, per the streaming setup).

Online: each instance arrives with the upstream network's predicted class j;
it is reduced, normalized and probed (without commit) against clusterer j.
The emitted decision carries diagnostics and the measured wall-clock latency
of reduce + normalize + probe. Instances never influence each other.

State directory layout::

    state.json        {"class_names": [...], "config": {...}}
    autoencoder.dsae
    normalizer.json   {"min": [...], "max": [...]}
    clusterer_<j>.dsmc

All files are deterministic functions of (training set, config, seed).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .autoencoder import (
    TrainedAutoencoder,
    ae_reduce_batch,
    ae_train,
    load_autoencoder,
    save_autoencoder,
)
from .dataio import ActivationMatrix, LabeledSet, Normalizer, apply_normalizer, fit_normalizer
from .mcod import MODES, Clusterer, clusterer_create, load_clusterer, save_clusterer

__all__ = [
    "Decision",
    "PipelineConfig",
    "StateBundle",
    "StreamError",
    "decisions_to_jsonl",
    "jsonl_to_decisions",
    "load_state",
    "offline_run",
    "online_run",
    "save_state",
    "stream_from_matrix",
]

CONFIG_KEYS = (
    "layers",
    "code_dim",
    "epochs",
    "batch_size",
    "learning_rate",
    "k",
    "R",
    "mode",
    "seed",
)


@dataclass(frozen=True)
class PipelineConfig:
    layers: tuple[int, ...] = ()
    code_dim: int = 100
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    k: int = 80
    R: float = 0.04
    mode: str = "mc-strict"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(l) for l in self.layers))
        if self.mode not in MODES:
            raise ValueError(f"unknown decision mode {self.mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - set(CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layers"] = list(self.layers)
        return d

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class StateBundle:
    autoencoder: TrainedAutoencoder
    normalizer: Normalizer
    clusterers: dict[int, Clusterer]
    class_names: tuple[str, ...]
    config: PipelineConfig


@dataclass(frozen=True)
class Decision:
    id: int
    pred_class: int
    verdict: str  # "ND" | "CE"
    nearest_center_dist: float | None
    neighbor_count: int
    latency_us: int


@dataclass(frozen=True)
class StreamError:
    id: int
    error: str


def _reduce_rows(ae: TrainedAutoencoder, data: np.ndarray) -> np.ndarray:
    # row-at-a-time so offline codes are bit-identical to the online path
    # (batched GEMM may round differently than the per-instance product)
    return np.vstack([ae_reduce_batch(ae, row[None, :]) for row in data])


def train_reducer(
    train: LabeledSet, config: PipelineConfig
) -> tuple[TrainedAutoencoder, Normalizer, np.ndarray]:
    """Autoencoder + normalizer fit on the training set; returns normalized codes."""
    ae, _ = ae_train(
        train.matrix,
        config.code_dim,
        config.epochs,
        config.batch_size,
        config.learning_rate,
        config.seed,
    )
    codes = _reduce_rows(ae, train.matrix.data.astype(np.float64))
    normalizer = fit_normalizer(codes)
    return ae, normalizer, apply_normalizer(normalizer, codes)


def build_clusterers(
    normalized_codes: np.ndarray,
    labels: Sequence[int],
    class_names: Sequence[str],
    k: int,
    R: float,
) -> dict[int, Clusterer]:
    """One clusterer per class, filled in dataset order; window = count + 1."""
    labels_arr = np.asarray(labels)
    clusterers: dict[int, Clusterer] = {}
    for j, name in enumerate(class_names):
        count = int((labels_arr == j).sum())
        if count == 0:
            raise ValueError(f"class {name!r} has no training instances")
        clusterers[j] = clusterer_create(k, R, count + 1)
    for row, j in zip(normalized_codes, labels_arr):
        clusterers[int(j)].add(row)
    return clusterers


def offline_run(train: LabeledSet, config: PipelineConfig) -> StateBundle:
    """Run the full offline phase and return the trained state."""
    ae, normalizer, normalized = train_reducer(train, config)
    clusterers = build_clusterers(normalized, train.labels, train.class_names, config.k, config.R)
    return StateBundle(ae, normalizer, clusterers, train.class_names, config)


def stream_from_matrix(
    matrix, preds: Sequence[int], ids: Sequence[int] | None = None
) -> Iterator[tuple[int, np.ndarray, int]]:
    """Adapt a matrix plus per-row predictions into (id, vector, pred) triples."""
    data = matrix.data if isinstance(matrix, ActivationMatrix) else np.asarray(matrix)
    if len(preds) != data.shape[0]:
        raise ValueError(f"{len(preds)} predictions for {data.shape[0]} rows")
    if ids is None:
        ids = range(data.shape[0])
    for i, row, pred in zip(ids, data, preds):
        yield int(i), row, int(pred)


def online_run(
    state: StateBundle,
    stream: Iterable[tuple[int, np.ndarray, int]],
    timer: Callable[[], int] = time.perf_counter_ns,
) -> list[Decision | StreamError]:
    """Score a stream of (id, flattened activations, predicted class) triples.

    Emits one Decision per instance in order; per-instance failures become
    StreamError records and the stream continues. `timer` must return
    nanoseconds; it exists so tests can inject a deterministic clock.
    """
    ae = state.autoencoder
    results: list[Decision | StreamError] = []
    for i, f, j in stream:
        t0 = timer()
        if j not in state.clusterers:
            results.append(StreamError(i, f"unknown predicted class {j}"))
            continue
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (ae.input_dim,):
            results.append(
                StreamError(i, f"dimension mismatch: got {f.shape}, expected ({ae.input_dim},)")
            )
            continue
        code = ae_reduce_batch(ae, f[None, :])[0]
        z = apply_normalizer(state.normalizer, code)
        probe = state.clusterers[j].probe(z, state.config.mode)
        latency_us = (timer() - t0) // 1000
        results.append(
            Decision(
                id=i,
                pred_class=j,
                verdict=probe.verdict,
                nearest_center_dist=probe.nearest_center_distance,
                neighbor_count=probe.neighbor_count_R,
                latency_us=int(latency_us),
            )
        )
    return results


def decisions_to_jsonl(results: Iterable[Decision | StreamError]) -> str:
    lines = []
    for r in results:
        if isinstance(r, Decision):
            record = {
                "id": r.id,
                "pred_class": r.pred_class,
                "verdict": r.verdict,
                "nearest_center_dist": r.nearest_center_dist,
                "neighbor_count": r.neighbor_count,
                "latency_us": r.latency_us,
            }
        else:
            record = {"id": r.id, "error": r.error}
        lines.append(json.dumps(record))
    return "\n".join(lines) + ("\n" if lines else "")


def jsonl_to_decisions(text: str) -> list[Decision | StreamError]:
    results: list[Decision | StreamError] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "error" in rec:
            results.append(StreamError(rec["id"], rec["error"]))
        else:
            results.append(
                Decision(
                    id=rec["id"],
                    pred_class=rec["pred_class"],
                    verdict=rec["verdict"],
                    nearest_center_dist=rec["nearest_center_dist"],
                    neighbor_count=rec["neighbor_count"],
                    latency_us=rec["latency_us"],
                )
            )
    return results


def save_state(state: StateBundle, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "class_names": list(state.class_names),
        "config": state.config.to_dict(),
    }
    (directory / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    save_autoencoder(state.autoencoder, directory / "autoencoder.dsae")
    nrm = {"min": state.normalizer.mins.tolist(), "max": state.normalizer.maxs.tolist()}
    (directory / "normalizer.json").write_text(json.dumps(nrm, indent=2) + "\n")
    for j, clusterer in sorted(state.clusterers.items()):
        save_clusterer(clusterer, directory / f"clusterer_{j}.dsmc")


def load_state(directory) -> StateBundle:
    directory = Path(directory)
    meta_path = directory / "state.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text())
    config = PipelineConfig.from_dict(meta["config"])
    class_names = tuple(meta["class_names"])
    ae = load_autoencoder(directory / "autoencoder.dsae")
    nrm_doc = json.loads((directory / "normalizer.json").read_text())
    normalizer = Normalizer(
        np.asarray(nrm_doc["min"], dtype=np.float64),
        np.asarray(nrm_doc["max"], dtype=np.float64),
    )
    clusterers = {
        j: load_clusterer(directory / f"clusterer_{j}.dsmc")
        for j in range(len(class_names))
    }
    return StateBundle(ae, normalizer, clusterers, class_names, config)
