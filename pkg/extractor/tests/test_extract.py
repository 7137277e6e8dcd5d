"""Extractor tests: small discriminative CNN for the behavioural invariants,
one full VGG16 pass for the 47104-dim layer contract. Everything runs on
locally generated images; no downloads."""

import json
import os
import sys
from pathlib import Path

import numpy as np
import pytest

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from extract import (
    CIFAR10_CLASSES,
    DEFAULT_LAYERS,
    ExtractionSpec,
    class_logits,
    extract,
    fine_tune,
    main,
    write_dsce1,
)

from cestream.dataio import load_labeled, load_matrix

keras = pytest.importorskip("keras")


def class_image_pools(rng, names, train_n, test_n):
    """Images whose dominant colour channel encodes the class."""
    pools = {}
    for channel, name in enumerate(names):
        def batch(n, channel=channel):
            imgs = rng.uniform(0, 60, size=(n, 32, 32, 3)).astype(np.float32)
            imgs[:, :, :, channel % 3] += 180.0
            return imgs
        pools[name] = {"train": batch(train_n), "test": batch(test_n)}
    return pools


@pytest.fixture(scope="session")
def small_model_and_pools():
    keras.utils.set_random_seed(42)
    rng = np.random.default_rng(42)
    names = ("airplane", "automobile", "frog")
    pools = class_image_pools(rng, names, train_n=80, test_n=60)
    model = keras.Sequential([
        keras.layers.Input((32, 32, 3)),
        keras.layers.Conv2D(8, 3, activation="relu"),
        keras.layers.MaxPooling2D(4),
        keras.layers.Conv2D(8, 3, activation="relu"),
        keras.layers.Flatten(),
        keras.layers.Dense(16, activation="relu"),
        keras.layers.Dense(2, activation="softmax"),
    ])
    fine_tune(model, pools, ("airplane", "automobile"), epochs=3, seed=1)
    return model, pools


@pytest.fixture(scope="session")
def small_extraction(small_model_and_pools, tmp_path_factory):
    model, pools = small_model_and_pools
    spec = ExtractionSpec(
        nd_classes=("airplane", "automobile"),
        ce_class="frog",
        layers=(2, 4, 5),  # conv, flatten, dense
        train_per_class=40,
        unseen_total=40,
        seed=3,
    )
    out = tmp_path_factory.mktemp("extraction")
    meta = extract(spec, model, pools, out)
    return spec, model, pools, out, meta


class TestSpecValidation:
    def test_cifar10_names_enforced(self):
        with pytest.raises(ValueError, match="plane"):
            ExtractionSpec(("plane", "automobile"), "frog", (9,), 10, 10, 0)

    def test_ce_class_disjoint(self):
        with pytest.raises(ValueError, match="frog"):
            ExtractionSpec(("frog", "automobile"), "frog", (9,), 10, 10, 0)

    def test_class_list_matches_dataset(self):
        assert len(CIFAR10_CLASSES) == 10
        assert "airplane" in CIFAR10_CLASSES and "truck" in CIFAR10_CLASSES


class TestSmallModelExtraction:
    def test_outputs_load_under_primary_dataio(self, small_extraction):
        _, _, _, out, meta = small_extraction
        train = load_labeled(out / "train.dsce1", out / "train.labels.json")
        assert train.matrix.n_instances == 80
        assert train.class_names == ("airplane", "automobile")
        stream = load_matrix(out / "stream.dsce1")
        assert stream.n_instances == 40
        assert stream.dim == train.matrix.dim == meta["dim"]
        spans = {s.layer_id: s.length for s in train.matrix.layer_index}
        assert set(spans) == {2, 4, 5}

    def test_manifests_align_with_stream(self, small_extraction):
        _, _, _, out, _ = small_extraction
        preds = json.loads((out / "stream.preds.json").read_text())
        truth = json.loads((out / "stream.truth.json").read_text())
        assert len(preds) == len(truth) == 40
        assert set(preds) <= {0, 1}
        assert sum(truth) == 20  # half the stream is the novel class

    def test_train_rows_are_correctly_classified_only(self, small_extraction):
        spec, model, pools, out, meta = small_extraction
        for j, name in enumerate(spec.nd_classes):
            kept = meta["kept_train_indices"][name]
            assert len(kept) == spec.train_per_class
            images = pools[name]["train"][kept]
            preds = model.predict(images / 255.0, verbose=0).argmax(axis=1)
            assert (preds == j).all()

    def test_unseen_nd_instances_correctly_classified(self, small_extraction):
        spec, model, pools, out, _ = small_extraction
        preds = json.loads((out / "stream.preds.json").read_text())
        truth = json.loads((out / "stream.truth.json").read_text())
        # ND rows carry the class the model chose for them; since only
        # correctly-classified ND instances are kept, prediction == truth class
        nd_preds = [p for p, ce in zip(preds, truth) if not ce]
        assert len(nd_preds) == 20

    def test_logits_matrices_fit_the_baseline(self, small_extraction):
        _, _, _, out, _ = small_extraction
        train_logits = load_matrix(out / "train.logits.dsce1")
        stream_logits = load_matrix(out / "stream.logits.dsce1")
        assert train_logits.dim == 2  # one score per trained class
        assert stream_logits.dim == 2
        assert stream_logits.n_instances == 40

        from cestream.openmax import fit_class_models, openmax_recalibrate

        labels = json.loads((out / "train.labels.json").read_text())["labels"]
        labels = np.asarray(labels)
        by_class = {
            j: train_logits.data[labels == j].astype(np.float64) for j in (0, 1)
        }
        models = fit_class_models(by_class, tail_size=9)
        scores = openmax_recalibrate(stream_logits.data[0].astype(np.float64), models, alpha=2)
        assert abs(scores.probs.sum() - 1.0) < 1e-9

    def test_insufficient_correct_instances_is_an_error(self, small_model_and_pools):
        model, pools = small_model_and_pools
        spec = ExtractionSpec(
            nd_classes=("airplane", "automobile"),
            ce_class="frog",
            layers=(2,),
            train_per_class=900,  # far beyond the pools
            unseen_total=10,
            seed=0,
        )
        with pytest.raises(ValueError, match="correctly-classified"):
            extract(spec, model, pools, "/tmp/never-used")

    def test_missing_layer_named(self, small_model_and_pools):
        model, pools = small_model_and_pools
        spec = ExtractionSpec(("airplane", "automobile"), "frog", (99,), 5, 10, 0)
        with pytest.raises(ValueError, match="99"):
            extract(spec, model, pools, "/tmp/never-used")


class TestWriterFormat:
    def test_round_trips_through_primary_loader(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(5, 7)).astype(np.float32)
        path = tmp_path / "w.dsce1"
        write_dsce1(path, rows, [(3, 0, 4), (8, 4, 3)])
        loaded = load_matrix(path)
        assert np.array_equal(loaded.data, rows)
        assert [(s.layer_id, s.offset, s.length) for s in loaded.layer_index] == \
               [(3, 0, 4), (8, 4, 3)]


class TestCliMain:
    def test_runs_with_saved_model(self, small_model_and_pools, tmp_path):
        model, _ = small_model_and_pools
        model_path = tmp_path / "small.keras"
        model.save(model_path)
        out = tmp_path / "cli_out"
        rc = main([
            "--nd", "airplane", "automobile", "--ce", "frog",
            "--layers", "2", "4", "5", "--out", str(out), "--seed", "4",
            "--model", str(model_path), "--images", "synthetic",
            "--train-per-class", "8", "--unseen", "8",
        ])
        # synthetic random pixels: the small model may classify them lopsidedly,
        # in which case the extractor must fail loudly, not emit bad data
        if rc == 0:
            assert load_matrix(out / "train.dsce1").n_instances == 16
        else:
            assert rc == 2

    def test_rejects_bad_class(self, tmp_path):
        assert main(["--nd", "airplane", "plane", "--ce", "frog",
                     "--out", str(tmp_path)]) == 2


@pytest.mark.slow
class TestVgg16Contract:
    def test_eight_layer_extraction_dim_47104(self, tmp_path):
        keras.utils.set_random_seed(11)
        from keras.applications import VGG16

        model = VGG16(weights=None, include_top=True, input_shape=(32, 32, 3), classes=2)

        # a fresh head predicts lopsidedly; recenter the final bias at the
        # median logit gap so both classes actually occur
        rng = np.random.default_rng(11)
        calib = rng.integers(0, 256, size=(64, 32, 32, 3)).astype(np.float32)
        logits = class_logits(model, calib)
        delta = float(np.median(logits[:, 1] - logits[:, 0]))
        w, b = model.layers[-1].get_weights()
        model.layers[-1].set_weights([w, b + np.array([delta / 2, -delta / 2], dtype=b.dtype)])

        # route images into pools according to the model's own predictions so
        # the correctness filter keeps them
        def pool_for(n_needed, want):
            rows = []
            got = 0
            while got < n_needed:
                imgs = rng.integers(0, 256, size=(64, 32, 32, 3)).astype(np.float32)
                preds = model.predict(imgs / 255.0, batch_size=32, verbose=0).argmax(axis=1)
                picked = imgs[preds == want]
                rows.append(picked)
                got += len(picked)
            return np.vstack(rows)

        pools = {
            "airplane": {"train": pool_for(6, 0), "test": pool_for(4, 0)},
            "automobile": {"train": pool_for(6, 1), "test": pool_for(4, 1)},
            "frog": {"train": np.zeros((0, 32, 32, 3), np.float32),
                     "test": rng.integers(0, 256, size=(8, 32, 32, 3)).astype(np.float32)},
        }
        spec = ExtractionSpec(
            nd_classes=("airplane", "automobile"),
            ce_class="frog",
            layers=DEFAULT_LAYERS,
            train_per_class=6,
            unseen_total=8,
            seed=5,
        )
        meta = extract(spec, model, pools, tmp_path)
        assert meta["dim"] == 47104

        train = load_labeled(tmp_path / "train.dsce1", tmp_path / "train.labels.json")
        assert train.matrix.dim == 47104
        assert train.matrix.n_instances == 12
        lengths = {s.layer_id: s.length for s in train.matrix.layer_index}
        assert lengths == {9: 16384, 12: 8192, 13: 8192, 15: 2048,
                           16: 2048, 17: 2048, 20: 4096, 21: 4096}
        stream = load_matrix(tmp_path / "stream.dsce1")
        assert stream.dim == 47104
        logits_m = load_matrix(tmp_path / "train.logits.dsce1")
        assert logits_m.dim == 2
