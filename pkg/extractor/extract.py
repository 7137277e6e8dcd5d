#!/usr/bin/env python3
"""Produce activation datasets from a 2-class VGG16 for the detection pipeline.

Given two trained ("non-discrepancy") classes and one held-out class that
plays the novel concept, this script runs images through the network, grabs
the configured layers, flattens them per instance, and writes:

    train.dsce1 / train.labels.json     correctly-classified training rows
    stream.dsce1                        unseen ND + CE rows
    stream.preds.json                   the network's prediction per row
    stream.truth.json                   per-row is-CE flag
    train.logits.dsce1 / stream.logits.dsce1
                                        pre-softmax class scores (dim ==
                                        number of classes) for the open-set
                                        recalibration baseline
    extraction.meta.json                what was kept, from where

The DSCE1 writer here is an independent implementation of the format; the
detection package's loader validates everything on the way back in.

Images come from `--images synthetic` (deterministic random pixels, no
downloads; useful for plumbing runs with a randomly initialised model),
`--images cifar10` (downloads via keras.datasets on first use), or an .npz
with x_train/y_train/x_test/y_test in CIFAR-10 label encoding. A pre-trained
model file is accepted via `--model`; otherwise a fresh VGG16 head is built
and can optionally be fine-tuned in place with `--fine-tune-epochs`.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)

DEFAULT_LAYERS = (9, 12, 13, 15, 16, 17, 20, 21)

MAGIC = b"DSCE1"


@dataclass(frozen=True)
class ExtractionSpec:
    nd_classes: tuple[str, str]
    ce_class: str
    layers: tuple[int, ...]
    train_per_class: int
    unseen_total: int  # split evenly between ND and CE instances
    seed: int

    def __post_init__(self):
        for name in (*self.nd_classes, self.ce_class):
            if name not in CIFAR10_CLASSES:
                raise ValueError(f"unknown class name {name!r} (CIFAR-10 names expected)")
        if len(set(self.nd_classes)) != 2:
            raise ValueError("need two distinct trained classes")
        if self.ce_class in self.nd_classes:
            raise ValueError(f"concept-evolution class {self.ce_class!r} cannot be a trained class")
        if not self.layers:
            raise ValueError("no layers selected")
        if self.train_per_class < 1 or self.unseen_total < 2:
            raise ValueError("counts too small")


# -- DSCE1 writing (independent of the detection package) -----------------

def write_dsce1(path, rows: np.ndarray, spans: list[tuple[int, int, int]]) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    header = [MAGIC, struct.pack("<IIH", rows.shape[0], rows.shape[1], len(spans))]
    for layer_id, offset, length in spans:
        header.append(struct.pack("<III", layer_id, offset, length))
    Path(path).write_bytes(b"".join(header) + rows.tobytes())


# -- model plumbing --------------------------------------------------------

def build_model(model_path: str | None):
    import keras

    if model_path:
        return keras.models.load_model(model_path)
    from keras.applications import VGG16

    return VGG16(weights=None, include_top=True, input_shape=(32, 32, 3), classes=2)


def check_layers(model, layers) -> None:
    missing = [i for i in layers if i < 0 or i >= len(model.layers)]
    if missing:
        raise ValueError(f"model has {len(model.layers)} layers; missing indices {missing}")


def activation_extractor(model, layers):
    import keras

    outputs = [model.layers[i].output for i in layers]
    return keras.Model(model.inputs, outputs)


def flatten_outputs(outputs, layers) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Per-instance C-order flatten of each layer, concatenated in layer order."""
    if len(layers) == 1:
        outputs = [outputs]
    flats = [np.asarray(o).reshape(np.asarray(o).shape[0], -1) for o in outputs]
    spans = []
    offset = 0
    for layer_id, f in zip(layers, flats):
        spans.append((int(layer_id), offset, f.shape[1]))
        offset += f.shape[1]
    return np.concatenate(flats, axis=1).astype(np.float32), spans


def class_logits(model, images, batch_size=64) -> np.ndarray:
    """Pre-softmax scores of the final Dense layer (dim == number of classes).

    Takes raw pixel images and applies the same scaling as every other
    forward pass here.
    """
    import keras

    penultimate = keras.Model(model.inputs, model.layers[-2].output)
    feats = penultimate.predict(images / 255.0, batch_size=batch_size, verbose=0)
    w, b = model.layers[-1].get_weights()
    return feats @ w + b


# -- image sources ----------------------------------------------------------

def synthetic_images(spec: ExtractionSpec, rng: np.random.Generator):
    """Deterministic random pixels per class; enough to exercise the plumbing."""
    pools = {}
    for name in (*spec.nd_classes, spec.ce_class):
        train_n = spec.train_per_class * 2  # headroom for the correctness filter
        test_n = spec.unseen_total * 2
        pools[name] = {
            "train": rng.integers(0, 256, size=(train_n, 32, 32, 3)).astype(np.float32),
            "test": rng.integers(0, 256, size=(test_n, 32, 32, 3)).astype(np.float32),
        }
    return pools


def cifar10_images(spec: ExtractionSpec):
    from keras.datasets import cifar10

    (x_train, y_train), (x_test, y_test) = cifar10.load_data()
    return _pools_from_arrays(spec, x_train, y_train.ravel(), x_test, y_test.ravel())


def npz_images(spec: ExtractionSpec, path: str):
    data = np.load(path)
    return _pools_from_arrays(
        spec, data["x_train"], data["y_train"].ravel(), data["x_test"], data["y_test"].ravel()
    )


def _pools_from_arrays(spec, x_train, y_train, x_test, y_test):
    pools = {}
    for name in (*spec.nd_classes, spec.ce_class):
        idx = CIFAR10_CLASSES.index(name)
        pools[name] = {
            "train": x_train[y_train == idx].astype(np.float32),
            "test": x_test[y_test == idx].astype(np.float32),
        }
    return pools


# -- extraction -------------------------------------------------------------

def extract(spec: ExtractionSpec, model, pools, out_dir, batch_size=64) -> dict:
    """Run the extraction and write all output files; returns the metadata."""
    check_layers(model, spec.layers)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    extractor = activation_extractor(model, spec.layers)

    def predict_labels(images):
        probs = model.predict(images / 255.0, batch_size=batch_size, verbose=0)
        return probs.argmax(axis=1)

    def activations(images):
        outputs = extractor.predict(images / 255.0, batch_size=batch_size, verbose=0)
        return flatten_outputs(outputs, spec.layers)

    meta = {
        "nd_classes": list(spec.nd_classes),
        "ce_class": spec.ce_class,
        "layers": list(spec.layers),
        "seed": spec.seed,
        "kept_train_indices": {},
        "unseen_indices": {},
    }

    # training rows: correctly classified instances only
    train_rows = []
    train_labels = []
    spans = None
    for j, name in enumerate(spec.nd_classes):
        images = pools[name]["train"]
        preds = predict_labels(images)
        correct = np.flatnonzero(preds == j)
        if correct.size < spec.train_per_class:
            raise ValueError(
                f"class {name!r}: only {correct.size} correctly-classified training "
                f"instances available, need {spec.train_per_class}"
            )
        kept = correct[: spec.train_per_class]
        meta["kept_train_indices"][name] = kept.tolist()
        rows, spans = activations(images[kept])
        train_rows.append(rows)
        train_labels.extend([j] * len(kept))
    train_matrix = np.vstack(train_rows)
    write_dsce1(out / "train.dsce1", train_matrix, spans)
    (out / "train.labels.json").write_text(
        json.dumps({"labels": train_labels, "class_names": list(spec.nd_classes)}, indent=2) + "\n"
    )

    # unseen stream: correctly-classified ND instances + the novel class
    nd_quota = spec.unseen_total // 2
    ce_quota = spec.unseen_total - nd_quota
    nd_images = []
    for j, name in enumerate(spec.nd_classes):
        images = pools[name]["test"]
        preds = predict_labels(images)
        correct = np.flatnonzero(preds == j)
        meta["unseen_indices"][name] = correct.tolist()
        nd_images.append(images[correct])
    nd_pool = np.vstack(nd_images)
    if len(nd_pool) < nd_quota:
        raise ValueError(f"only {len(nd_pool)} correctly-classified unseen ND instances, need {nd_quota}")
    ce_pool = pools[spec.ce_class]["test"]
    if len(ce_pool) < ce_quota:
        raise ValueError(f"only {len(ce_pool)} unseen CE instances, need {ce_quota}")

    nd_pick = rng.choice(len(nd_pool), size=nd_quota, replace=False)
    ce_pick = rng.choice(len(ce_pool), size=ce_quota, replace=False)
    stream_images = np.vstack([nd_pool[nd_pick], ce_pool[ce_pick]])
    is_ce = [False] * nd_quota + [True] * ce_quota

    stream_rows, _ = activations(stream_images)
    write_dsce1(out / "stream.dsce1", stream_rows, spans)
    stream_preds = predict_labels(stream_images)
    (out / "stream.preds.json").write_text(json.dumps(stream_preds.tolist()) + "\n")
    (out / "stream.truth.json").write_text(json.dumps(is_ce) + "\n")

    # pre-softmax class scores for the open-set baseline
    train_images_kept = np.vstack(
        [pools[name]["train"][meta["kept_train_indices"][name]] for name in spec.nd_classes]
    )
    train_logits = class_logits(model, train_images_kept)
    stream_logits = class_logits(model, stream_images)
    logit_spans = [(len(model.layers) - 1, 0, train_logits.shape[1])]
    write_dsce1(out / "train.logits.dsce1", train_logits, logit_spans)
    write_dsce1(out / "stream.logits.dsce1", stream_logits, logit_spans)

    meta["train_rows"] = int(train_matrix.shape[0])
    meta["stream_rows"] = int(stream_rows.shape[0])
    meta["dim"] = int(train_matrix.shape[1])
    (out / "extraction.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def fine_tune(model, pools, nd_classes, epochs, seed, batch_size=64) -> None:
    """Optional in-place fine-tune of the 2-class head on the training pools."""
    import keras

    keras.utils.set_random_seed(seed)
    images = np.vstack([pools[name]["train"] for name in nd_classes])
    labels = np.concatenate(
        [np.full(len(pools[name]["train"]), j) for j, name in enumerate(nd_classes)]
    )
    model.compile(optimizer=keras.optimizers.Adam(1e-4),
                  loss="sparse_categorical_crossentropy", metrics=["accuracy"])
    model.fit(images / 255.0, labels, epochs=epochs, batch_size=batch_size,
              shuffle=True, verbose=2)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--nd", nargs=2, required=True, metavar=("CLASS_A", "CLASS_B"),
                        help="two trained class names")
    parser.add_argument("--ce", required=True, help="held-out concept-evolution class")
    parser.add_argument("--layers", nargs="+", type=int, default=list(DEFAULT_LAYERS))
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--model", help="pre-trained .keras/.h5 model (default: fresh VGG16)")
    parser.add_argument("--images", default="synthetic",
                        help="synthetic | cifar10 | path to .npz")
    parser.add_argument("--train-per-class", type=int, default=100)
    parser.add_argument("--unseen", type=int, default=100,
                        help="total unseen instances (half ND, half CE)")
    parser.add_argument("--fine-tune-epochs", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        spec = ExtractionSpec(
            nd_classes=tuple(args.nd),
            ce_class=args.ce,
            layers=tuple(args.layers),
            train_per_class=args.train_per_class,
            unseen_total=args.unseen,
            seed=args.seed,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    rng = np.random.default_rng(spec.seed)
    if args.images == "synthetic":
        pools = synthetic_images(spec, rng)
    elif args.images == "cifar10":
        pools = cifar10_images(spec)
    else:
        pools = npz_images(spec, args.images)

    model = build_model(args.model)
    try:
        check_layers(model, spec.layers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.fine_tune_epochs > 0:
        fine_tune(model, pools, spec.nd_classes, args.fine_tune_epochs, spec.seed)

    try:
        meta = extract(spec, model, pools, args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"extracted {meta['train_rows']} train + {meta['stream_rows']} stream rows, "
          f"dim {meta['dim']} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
