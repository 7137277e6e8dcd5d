#!/usr/bin/env python3
# Train the undercomplete autoencoder on data with known low-rank structure
# and watch the reconstruction loss collapse; then reduce new vectors.

import numpy as np

from cestream.autoencoder import ae_reduce, ae_train

rng = np.random.default_rng(1)

# 16-dimensional observations that really live on a 2-dimensional sheet
basis = rng.normal(size=(2, 16))
coefficients = rng.uniform(0, 1, size=(512, 2))
data = coefficients @ basis + rng.normal(scale=0.01, size=(512, 16))

ae, report = ae_train(data, code_dim=2, epochs=150, batch_size=32,
                      learning_rate=3e-3, seed=7)

print("epoch   mean reconstruction loss")
for epoch in (0, 4, 14, 49, 99, 149):
    print(f"{epoch + 1:>5}   {report.epoch_losses[epoch]:.6f}")
print(f"final   {report.final_loss:.6f}")
print(f"loss fell to {report.final_loss / report.epoch_losses[0]:.1%} of epoch 1")

# The encoder alone is the reduction used by the detection pipeline.
fresh = rng.uniform(0, 1, size=2) @ basis
code = ae_reduce(ae, fresh)
print("reduced", len(fresh), "dims ->", len(code), "dims:", np.round(code, 3))
