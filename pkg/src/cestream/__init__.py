"""Streaming novel-class detection over neural-network activation vectors.

The library has four layers:

* `dataio` — the DSCE1 activation-matrix format, layer flattening, min-max
  normalization and synthetic data generation.
* `autoencoder` — a from-scratch undercomplete autoencoder (relu encoder,
  linear decoder, MSE loss) used to reduce flattened activations.
* `mcod` — micro-cluster based streaming outlier detection with
  probe-without-commit queries that yield per-instance ND/CE verdicts.
* `openmax` — the EVT recalibration baseline (per-class mean activation
  vectors plus Weibull tail fits).

`pipeline` wires these into offline training / online scoring runs and owns
state (de)serialization; `evaluation` holds the metrics, parameter sweep and
the exact Wilcoxon signed-rank test. `cli` exposes everything as the
`cestream` command.
"""

from . import autoencoder, dataio, evaluation, mcod, openmax, pipeline

__all__ = ["autoencoder", "dataio", "evaluation", "mcod", "openmax", "pipeline"]

__version__ = "0.1.0"
