#!/usr/bin/env python3
# Sweep the clustering radius and neighbour count over a fixed dataset,
# print the CSV, and compare two detector variants with the exact
# Wilcoxon signed-rank test.

import numpy as np

from cestream.dataio import ClassSpec, class_means, route_nearest_mean, synth_generate
from cestream.evaluation import sweep, sweep_to_csv, wilcoxon_signed_rank
from cestream.pipeline import PipelineConfig

rng = np.random.default_rng(5)
dim = 32

mean_a = rng.uniform(0, 1, dim)
mean_b = rng.uniform(0, 1, dim)
mean_novel = rng.uniform(0, 1, dim) + 2.0

train = synth_generate(
    [ClassSpec("a", mean_a, 0.02, 400), ClassSpec("b", mean_b, 0.02, 400)], seed=20
)
online = synth_generate(
    [
        ClassSpec("a", mean_a, 0.02, 80),
        ClassSpec("b", mean_b, 0.02, 80),
        ClassSpec("novel", mean_novel, 0.02, 160),
    ],
    seed=21,
)
truth = {i: (lab == 2) for i, lab in enumerate(online.labels)}
preds = route_nearest_mean(class_means(train), online.matrix).tolist()

config = PipelineConfig(code_dim=8, epochs=20, batch_size=64, learning_rate=1e-3, seed=22)
cells = sweep([10, 20, 80], [0.05, 0.1, 0.2, 0.4], config,
              train, online.matrix, preds, truth)
print(sweep_to_csv(cells))

best = max((c for c in cells if c.error is None), key=lambda c: c.metrics.f_measure)
print(f"best cell: k={best.k} R={best.R} F={best.metrics.f_measure:.3f}")

# paired comparison: strict-band decisions vs neighbour-count decisions,
# one F-measure pair per radius
strict_f = [c.metrics.f_measure for c in cells if c.k == 20]
standard = sweep([20], [0.05, 0.1, 0.2, 0.4], config.replace(mode="mcod-standard"),
                 train, online.matrix, preds, truth)
standard_f = [c.metrics.f_measure for c in standard]
pairs = list(zip(strict_f, standard_f))
print("mc-strict vs mcod-standard F pairs:", [(round(a, 3), round(b, 3)) for a, b in pairs])
try:
    p = wilcoxon_signed_rank(pairs)
    print(f"two-sided exact p = {p:.5f}")
except ValueError as exc:
    print("wilcoxon:", exc)
