"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; tolerances are pinned in the assertions.
"""

import itertools
import json
import time
from collections import deque

import numpy as np
import pytest

from cestream.autoencoder import ae_grad, ae_init, batch_loss
from cestream.dataio import ClassSpec, class_means, route_nearest_mean, synth_generate
from cestream.evaluation import (
    Confusion,
    confusion,
    prf,
    sweep,
    wilcoxon_signed_rank,
)
from cestream.mcod import CE, ND, Clusterer, clusterer_create, encode_clusterer
from cestream.openmax import (
    ClassModel,
    DegenerateTailError,
    openmax_recalibrate,
    weibull_fit_tail,
)
from cestream.pipeline import (
    Decision,
    PipelineConfig,
    decisions_to_jsonl,
    offline_run,
    online_run,
    save_state,
    stream_from_matrix,
)

from test_evaluation import F_MEASURE_PAIRS, wilcoxon_oracle


def report(name):
    print(f"\nACCEPTANCE PASS: {name}")


class IndependentWindow:
    """Count-based window maintained outside the clusterer: last W arrivals."""

    def __init__(self, W):
        self.points = deque(maxlen=W)

    def add(self, p):
        self.points.append(p)

    def verdict(self, q, k, R):
        if not self.points:
            return CE, 0
        d = np.linalg.norm(np.vstack(self.points) - q, axis=1)
        count = int((d <= R).sum())
        return (ND if count >= k else CE), count


def test_mcod_oracle_equivalence():
    """probe(mcod-standard) equals brute-force neighbor counting, 100% of probes."""
    started = time.monotonic()
    rng = np.random.default_rng(2024)
    streams = 200
    total_probes = 0
    for s in range(streams):
        dim = int(rng.integers(1, 17))
        k = int(rng.integers(2, 21))
        n = int(rng.integers(50, 1001))
        w = n + 10 if rng.random() < 0.7 else int(rng.integers(20, n + 1))
        lattice = rng.random() < 0.2
        if lattice:
            R = float(rng.integers(1, 4))  # integer radius forces exact boundary ties
            draw = lambda size: rng.integers(0, 4, size=size).astype(np.float64)
        else:
            R = float(rng.uniform(0.05, 0.8)) * np.sqrt(dim)
            draw = lambda size: rng.uniform(0, 2, size=size)
        m = clusterer_create(k, R, w)
        oracle = IndependentWindow(w)
        for _ in range(n):
            p = draw(dim)
            m.add(p)
            oracle.add(p)
        for _ in range(60):
            q = draw(dim)
            expected_verdict, expected_count = oracle.verdict(q, k, R)
            res = m.probe(q, "mcod-standard")
            assert res.verdict == expected_verdict
            assert res.neighbor_count_R == expected_count
            total_probes += 1
    elapsed = time.monotonic() - started
    assert total_probes >= 10_000
    assert elapsed < 60.0
    report(f"MCOD oracle equivalence ({streams} streams, {total_probes} probes, {elapsed:.1f}s)")


def assert_clusterer_invariants(m: Clusterer):
    arrivals = list(m.disp_arrivals)
    for mc in m.micro_clusters:
        assert len(mc) >= m.k + 1
        d = np.linalg.norm(mc.point_stack() - mc.center, axis=1)
        assert (d <= m.R / 2 + 1e-12).all()
        arrivals.extend(mc.arrivals)
    assert len(arrivals) == len(set(arrivals))
    assert len(arrivals) <= m.W
    assert len(arrivals) == m.stored_count


def test_clusterer_invariant_fuzz():
    """Structural invariants hold after every one of 10,000 insert/evict events."""
    rng = np.random.default_rng(99)
    m = clusterer_create(k=6, R=0.6, W=150)
    centers = rng.uniform(0, 3, size=(12, 3))
    events = 0
    while events < 10_000:
        if m.stored_count > 0 and rng.random() < 0.08:
            m.evict_oldest()
        else:
            c = centers[rng.integers(0, len(centers))]
            p = c + rng.normal(scale=0.15, size=3)
            m.add(p)
        events += 1
        assert_clusterer_invariants(m)
    report(f"clusterer invariants over {events} fuzz events")


def _benchmark_dataset():
    rng = np.random.default_rng(123)
    dim = 64
    m0 = rng.uniform(0.0, 1.0, dim)
    m1 = rng.uniform(0.0, 1.0, dim)
    mce = rng.uniform(0.0, 1.0, dim) + 2.0  # displaced novel class
    train = synth_generate(
        [ClassSpec("a", m0, 0.02, 1000), ClassSpec("b", m1, 0.02, 1000)], seed=1
    )
    online = synth_generate(
        [
            ClassSpec("a", m0, 0.02, 125),
            ClassSpec("b", m1, 0.02, 125),
            ClassSpec("novel", mce, 0.02, 250),
        ],
        seed=2,
    )
    truth = {i: (lab == 2) for i, lab in enumerate(online.labels)}
    preds = route_nearest_mean(class_means(train), online.matrix).tolist()
    return train, online, preds, truth


def test_end_to_end_synthetic_benchmark():
    """2 trained Gaussian classes + 1 displaced novel class: a sweep cell reaches F >= 0.90."""
    started = time.monotonic()
    train, online, preds, truth = _benchmark_dataset()
    config = PipelineConfig(code_dim=8, epochs=30, batch_size=64, learning_rate=1e-3, seed=3)
    cells = sweep([10, 20, 50], [0.05, 0.1, 0.2, 0.3, 0.4], config,
                  train, online.matrix, preds, truth)
    best = max(c.metrics.f_measure for c in cells if c.error is None)
    elapsed = time.monotonic() - started
    assert best >= 0.90
    assert elapsed < 120.0
    report(f"end-to-end synthetic benchmark (best F={best:.3f}, {elapsed:.1f}s)")


def test_metric_formulas():
    """Frozen F on the P=0.700/R=0.178 anchor row; harmonic-mean checks on 1000 random confusions."""
    row = prf(Confusion(tp=623, fp=267, tn=0, fn=2877))
    assert row.precision == pytest.approx(0.700, abs=1e-12)
    assert row.recall == pytest.approx(0.178, abs=1e-12)
    assert abs(row.f_measure - 0.284) <= 0.0005

    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(1000):
        c = Confusion(*(int(v) for v in rng.integers(0, 200, size=4)))
        m = prf(c)
        p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
        r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
        expected_f = 2 * p * r / (p + r) if p + r else 0.0
        assert m.f_measure == pytest.approx(expected_f, abs=1e-12)
        checked += 1
    # explicit fixed-point instances: P == R == x implies F == x
    for tp, other in ((10, 30), (5, 5), (120, 40)):
        m = prf(Confusion(tp=tp, fp=other, tn=0, fn=other))
        assert m.precision == m.recall == pytest.approx(m.f_measure)
    report(f"metric formulas (anchor row F={row.f_measure:.4f}, {checked} random confusions)")


def test_wilcoxon_exact():
    """Eight comparison pairs give p = 0.015625; random cases match full enumeration."""
    from decimal import ROUND_HALF_UP, Decimal

    p = wilcoxon_signed_rank(F_MEASURE_PAIRS)
    assert p == 0.015625
    rounded = Decimal(p).quantize(Decimal("0.00001"), rounding=ROUND_HALF_UP)
    assert str(rounded) == "0.01563"  # the conventionally rounded form

    rng = np.random.default_rng(11)
    cases = 0
    while cases < 100:
        n = int(rng.integers(2, 11))
        a = rng.normal(size=n).round(2)
        b = rng.normal(size=n).round(2)
        pairs = list(zip(a.tolist(), b.tolist()))
        if all(x == y for x, y in pairs):
            continue
        assert wilcoxon_signed_rank(pairs) == pytest.approx(wilcoxon_oracle(pairs), abs=1e-12)
        cases += 1
    report(f"wilcoxon exact test (p={p}, {cases} enumeration cross-checks)")


def test_autoencoder_gradient_check():
    """Analytic gradients match central finite differences to 1e-4 relative error."""
    rng = np.random.default_rng(13)
    eps = 1e-5
    worst = 0.0
    for trial in range(20):
        input_dim = int(rng.integers(3, 9))
        code_dim = int(rng.integers(1, input_dim))
        batch = rng.normal(size=(int(rng.integers(1, 7)), input_dim))
        ae = ae_init(input_dim, code_dim, seed=trial)
        analytic = ae_grad(ae, batch)
        params = [p.astype(np.float64).copy() for p in (ae.w1, ae.b1, ae.w2, ae.b2)]
        for pi, p in enumerate(params):
            numeric = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + eps
                up = batch_loss(*params, batch)
                p[idx] = orig - eps
                down = batch_loss(*params, batch)
                p[idx] = orig
                numeric[idx] = (up - down) / (2 * eps)
            denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic[pi])), 1e-6)
            rel = (np.abs(analytic[pi] - numeric) / denom).max()
            worst = max(worst, float(rel))
    assert worst <= 1e-4
    report(f"autoencoder gradient check (20 configs, worst rel err {worst:.2e})")


def test_weibull_mle_recovery():
    """Known Weibull(2, 1.5) parameters recovered within 5%; degenerate tails rejected."""
    rng = np.random.default_rng(17)
    samples = 1.5 * rng.weibull(2.0, 5000)
    kappa, lam, tau = weibull_fit_tail(samples, tail_size=5000)
    assert abs(kappa - 2.0) / 2.0 <= 0.05
    assert abs(lam - 1.5) / 1.5 <= 0.05
    with pytest.raises(DegenerateTailError):
        weibull_fit_tail([0.7] * 25, tail_size=10)
    report(f"weibull MLE recovery (kappa={kappa:.3f}, lambda={lam:.3f})")


def test_openmax_score_properties():
    """Scores sum to 1 +- 1e-9 on 1000 random inputs; inlier limit keeps the raw argmax."""
    rng = np.random.default_rng(19)
    n_classes = 5
    models = {
        j: ClassModel(j, rng.normal(size=n_classes), float(rng.uniform(0.5, 3.0)),
                      float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.0, 0.5)), 9)
        for j in range(n_classes)
    }
    inlier_models = {
        j: ClassModel(j, m.mav, m.kappa, m.lam, 1e12, 9) for j, m in models.items()
    }
    worst_sum_err = 0.0
    for _ in range(1000):
        v = rng.normal(size=n_classes) * float(rng.uniform(0.1, 10.0))
        alpha = int(rng.integers(1, n_classes + 1))
        scores = openmax_recalibrate(v, models, alpha)
        worst_sum_err = max(worst_sum_err, abs(float(scores.probs.sum()) - 1.0))
        assert abs(scores.probs.sum() - 1.0) <= 1e-9
        inlier = openmax_recalibrate(v, inlier_models, alpha)
        assert int(np.argmax(inlier.class_probs)) == int(np.argmax(v))
    report(f"openmax score properties (worst sum error {worst_sum_err:.1e})")


def test_probe_throughput():
    """>= 500 probe decisions/sec at dim 100 against 5000 stored points, single thread."""
    rng = np.random.default_rng(23)
    dim = 100
    m = clusterer_create(k=10, R=0.8, W=5001)
    # half the window in tight micro-clusters, half dispersed
    blob_centers = rng.uniform(0, 4, size=(125, dim))
    for c in blob_centers:
        for p in c + rng.normal(scale=0.01, size=(20, dim)):
            m.add(p)
    for p in rng.uniform(0, 4, size=(2500, dim)):
        m.add(p)
    assert m.stored_count == 5000
    assert m.micro_clusters and m.disp_points
    queries = np.vstack([
        rng.uniform(0, 4, size=(1000, dim)),
        blob_centers[rng.integers(0, len(blob_centers), 1000)]
        + rng.normal(scale=0.05, size=(1000, dim)),
    ])
    started = time.monotonic()
    for q in queries:
        m.probe(q, "mcod-standard")
    elapsed = time.monotonic() - started
    rate = len(queries) / elapsed
    assert rate >= 500
    report(f"probe throughput ({rate:,.0f} probes/sec, {len(m.micro_clusters)} MCs)")


def test_determinism_bytes():
    """Identical config+seed: byte-identical state directory and decisions.jsonl."""
    rng = np.random.default_rng(29)
    dim = 32
    m0, m1 = rng.uniform(0, 1, dim), rng.uniform(0, 1, dim)
    train = synth_generate(
        [ClassSpec("a", m0, 0.03, 150), ClassSpec("b", m1, 0.03, 150)], seed=5
    )
    rows = rng.uniform(0, 1.5, size=(60, dim)).astype(np.float32)
    preds = rng.integers(0, 2, size=60).tolist()
    config = PipelineConfig(code_dim=6, epochs=10, batch_size=32,
                            learning_rate=1e-3, k=8, R=0.2, seed=31)

    import tempfile
    from pathlib import Path

    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("one", "two"):
            state = offline_run(train, config)
            save_state(state, Path(tmp) / run)
            ticker = itertools.count(step=1000)
            decisions = online_run(state, stream_from_matrix(rows, preds),
                                   timer=lambda: next(ticker))
            outputs.append(decisions_to_jsonl(decisions))
        names = sorted(p.name for p in (Path(tmp) / "one").iterdir())
        assert names == sorted(p.name for p in (Path(tmp) / "two").iterdir())
        for name in names:
            a = (Path(tmp) / "one" / name).read_bytes()
            b = (Path(tmp) / "two" / name).read_bytes()
            assert a == b, f"state file {name} differs between runs"
    assert outputs[0] == outputs[1]
    assert json.loads(outputs[0].splitlines()[0])["verdict"] in (ND, CE)
    report(f"determinism ({len(names)} state files + decisions byte-identical)")
