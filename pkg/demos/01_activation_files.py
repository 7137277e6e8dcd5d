#!/usr/bin/env python3
# Walk through the activation-matrix file format: flattening per-layer
# tensors, span metadata, and the bit-exact save/load round trip.

import tempfile
from pathlib import Path

import numpy as np

from cestream.dataio import (
    ActivationMatrix,
    flatten_select,
    load_matrix,
    matrix_from_vectors,
    save_matrix,
)

rng = np.random.default_rng(0)

# Pretend a convolutional network produced these per-layer tensors for one
# input image. Layer ids are whatever the extractor reports.
raw_layers = {
    9: rng.normal(size=(8, 8, 256)).astype(np.float32),
    12: rng.normal(size=(4, 4, 512)).astype(np.float32),
    20: rng.normal(size=4096).astype(np.float32),
}

vector, spans = flatten_select(raw_layers, selected=[9, 12, 20])
print("flattened vector length:", vector.size)
for span in spans:
    print(f"  layer {span.layer_id:>2}: columns [{span.offset}, {span.offset + span.length})")

# Stack a few instances into a matrix and round-trip it through disk.
vectors = []
for _ in range(4):
    layers = {lid: rng.normal(size=t.shape).astype(np.float32) for lid, t in raw_layers.items()}
    v, _ = flatten_select(layers, selected=[9, 12, 20])
    vectors.append(v)
matrix = matrix_from_vectors(vectors, spans)
print("matrix:", matrix.n_instances, "instances x", matrix.dim, "values")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.dsce1"
    save_matrix(matrix, path)
    blob = path.read_bytes()
    loaded = load_matrix(path)
    save_matrix(loaded, path)
    print("file size:", len(blob), "bytes; round-trip bit-exact:", path.read_bytes() == blob)
    assert isinstance(loaded, ActivationMatrix)

# The full 8-layer extraction of a 32x32 image through VGG16 flattens to
# 16384 + 2*8192 + 3*2048 + 2*4096 = 47104 values per instance.
vgg_shapes = {
    9: (8, 8, 256), 12: (4, 4, 512), 13: (4, 4, 512), 15: (2, 2, 512),
    16: (2, 2, 512), 17: (2, 2, 512), 20: (4096,), 21: (4096,),
}
zeros = {lid: np.zeros(s, dtype=np.float32) for lid, s in vgg_shapes.items()}
full, _ = flatten_select(zeros, selected=[9, 12, 13, 15, 16, 17, 20, 21])
print("8-layer VGG16 flattened width:", full.size)
