#!/usr/bin/env python3
# Feed a 2-D point stream into the micro-cluster structure and query it.
# Shows cluster formation, the two probe modes, and window eviction.

import numpy as np

from cestream.mcod import clusterer_create

rng = np.random.default_rng(2)

m = clusterer_create(k=4, R=1.0, W=500)

# two stable populations plus background noise
for _ in range(40):
    m.add(np.array([2.0, 2.0]) + rng.normal(scale=0.1, size=2))
    m.add(np.array([6.0, 2.0]) + rng.normal(scale=0.1, size=2))
for _ in range(10):
    m.add(rng.uniform(0, 8, size=2))

print(f"stored {m.stored_count} points -> {len(m.micro_clusters)} micro-clusters, "
      f"{len(m.disp_points)} dispersed")
for i, mc in enumerate(m.micro_clusters):
    print(f"  MC {i}: center {np.round(mc.center, 2)}, {len(mc)} members")

print("\nprobe verdicts (never committed to the stream):")
for label, q in [("population A", [2.0, 2.1]),
                 ("between",      [4.0, 2.0]),
                 ("far away",     [7.5, 7.5])]:
    strict = m.probe(np.array(q), "mc-strict")
    standard = m.probe(np.array(q), "mcod-standard")
    print(f"  {label:<12} {q}: mc-strict={strict.verdict} "
          f"(nearest center {strict.nearest_center_distance:.2f}), "
          f"mcod-standard={standard.verdict} "
          f"({standard.neighbor_count_R} neighbours within R)")

# a count-based window keeps only the most recent W arrivals
small = clusterer_create(k=3, R=0.5, W=20)
for _ in range(100):
    small.add(rng.uniform(0, 1, size=2))
print(f"\nwindowed clusterer stored {small.stored_count} of 100 arrivals (W=20)")
