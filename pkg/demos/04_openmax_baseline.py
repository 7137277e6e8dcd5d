#!/usr/bin/env python3
# The open-set recalibration baseline: per-class mean activation vectors,
# Weibull tails over training distances, and unknown-mass scoring.

import numpy as np

from cestream.openmax import fit_class_models, openmax_decide, openmax_recalibrate

rng = np.random.default_rng(3)

# class-activation vectors (dim == number of classes), as a penultimate
# logit layer would produce: the true class fires high
n_per_class = 200
acts = {
    0: np.column_stack([rng.normal(3.0, 0.5, n_per_class), rng.normal(0.5, 0.5, n_per_class)]),
    1: np.column_stack([rng.normal(0.5, 0.5, n_per_class), rng.normal(3.0, 0.5, n_per_class)]),
}

models = fit_class_models(acts, tail_size=9)
for j, model in models.items():
    print(f"class {j}: mav={np.round(model.mav, 2)}, "
          f"weibull(shape={model.kappa:.2f}, scale={model.lam:.2f}, shift={model.tau:.2f})")

print("\nscoring with alpha=2:")
for label, v in [("typical class 0", [3.1, 0.4]),
                 ("typical class 1", [0.4, 3.2]),
                 ("nothing fires",   [0.1, 0.2]),
                 ("both fire hard",  [9.0, 9.0])]:
    scores = openmax_recalibrate(np.array(v), models, alpha=2)
    decided = openmax_decide(scores)
    name = "unknown" if decided is None else f"class {decided}"
    print(f"  {label:<16} {v}: unknown_prob={scores.unknown_prob:.3f} -> {name}")
