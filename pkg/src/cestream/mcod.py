"""Micro-cluster streaming outlier detection over a count-based window.

A micro-cluster (MC) is a group of at least k+1 stored points, all within
R/2 (Euclidean) of an immutable center point. Points that belong to no MC
sit in the dispersed set. Insertion is deterministic in arrival order:

1. if some MC center lies within R/2 of the new point, it joins the nearest
   such MC (distance ties break toward the earliest-created MC);
2. otherwise, if at least k dispersed points lie within R/2, the point is
   promoted to center of a new MC absorbing exactly those dispersed points;
3. otherwise it joins the dispersed set.

When an insertion would push the stored count past the window size W, the
oldest arrival is evicted first. Evicting a member below the k+1 threshold
dissolves its MC, returning survivors to the dispersed set; a surviving MC
keeps its original center coordinates even if the founding point expired.

Queries are probe-without-commit: they never mutate the clusterer, so
previously unseen instances cannot influence later verdicts. Two decision
modes are provided:

* ``mc-strict``   — ND iff the point is within R/2 of some MC center;
* ``mcod-standard`` — ND iff at least k stored points lie within R.

Serialized form ("DSMC1"): parameters, micro-clusters in creation order
(center, members with arrival indices), then the dispersed set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import Reader, f64_bytes, u32, u64, f64 as pack_f64

__all__ = [
    "CE",
    "MODES",
    "ND",
    "Clusterer",
    "MicroCluster",
    "ProbeResult",
    "clusterer_create",
    "decode_clusterer",
    "encode_clusterer",
    "load_clusterer",
    "save_clusterer",
]

MAGIC = b"DSMC1"

ND = "ND"
CE = "CE"

MODE_MC_STRICT = "mc-strict"
MODE_MCOD_STANDARD = "mcod-standard"
MODES = (MODE_MC_STRICT, MODE_MCOD_STANDARD)


@dataclass(frozen=True)
class ProbeResult:
    verdict: str
    nearest_center_distance: float | None
    neighbor_count_R: int
    mode: str


class MicroCluster:
    """Center point plus members; every member is within R/2 of the center."""

    __slots__ = ("center", "arrivals", "points", "_stack", "_sqnorms")

    def __init__(self, center: np.ndarray, arrivals: list[int], points: list[np.ndarray]):
        center = np.asarray(center, dtype=np.float64).copy()
        center.flags.writeable = False
        self.center = center
        self.arrivals = arrivals
        self.points = points
        self._stack: np.ndarray | None = None
        self._sqnorms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.arrivals)

    def point_stack(self) -> np.ndarray:
        if self._stack is None:
            self._stack = np.vstack(self.points) if self.points else np.zeros((0, self.center.size))
        return self._stack

    def point_sqnorms(self) -> np.ndarray:
        if self._sqnorms is None:
            stack = self.point_stack()
            self._sqnorms = (stack * stack).sum(axis=1)
        return self._sqnorms

    def add(self, arrival: int, point: np.ndarray) -> None:
        self.arrivals.append(arrival)
        self.points.append(point)
        self._stack = None
        self._sqnorms = None

    def remove_index(self, idx: int) -> None:
        del self.arrivals[idx]
        del self.points[idx]
        self._stack = None
        self._sqnorms = None


class Clusterer:
    """One streaming clusterer; parameters are fixed at creation.

    k is the minimum neighbour count for micro-cluster formation, R the
    radius parameter, W the count-based window of stored points. A single
    logical writer mutates the clusterer; probes are read-only.
    """

    __slots__ = (
        "k",
        "R",
        "W",
        "dim",
        "micro_clusters",
        "disp_arrivals",
        "disp_points",
        "arrival_counter",
        "_centers",
        "_disp_stack",
        "_disp_sqnorms",
    )

    def __init__(self, k: int, R: float, W: int):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not R > 0:
            raise ValueError(f"R must be positive, got {R}")
        if W < 1:
            raise ValueError(f"W must be >= 1, got {W}")
        self.k = int(k)
        self.R = float(R)
        self.W = int(W)
        self.dim: int | None = None
        self.micro_clusters: list[MicroCluster] = []  # creation order
        self.disp_arrivals: list[int] = []
        self.disp_points: list[np.ndarray] = []
        self.arrival_counter = 0
        self._centers: np.ndarray | None = None
        self._disp_stack: np.ndarray | None = None
        self._disp_sqnorms: np.ndarray | None = None

    # -- bookkeeping ---------------------------------------------------

    @property
    def stored_count(self) -> int:
        return sum(len(mc) for mc in self.micro_clusters) + len(self.disp_arrivals)

    def _check_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 1:
            raise ValueError(f"point must be 1-D, got shape {p.shape}")
        if self.dim is not None and p.shape[0] != self.dim:
            raise ValueError(f"point has dim {p.shape[0]}, clusterer uses {self.dim}")
        return p

    def _center_stack(self) -> np.ndarray:
        if self._centers is None:
            if self.micro_clusters:
                self._centers = np.vstack([mc.center for mc in self.micro_clusters])
            else:
                self._centers = np.zeros((0, self.dim or 0))
        return self._centers

    def _dispersed_stack(self) -> np.ndarray:
        if self._disp_stack is None:
            if self.disp_points:
                self._disp_stack = np.vstack(self.disp_points)
            else:
                self._disp_stack = np.zeros((0, self.dim or 0))
        return self._disp_stack

    def _dispersed_sqnorms(self) -> np.ndarray:
        if self._disp_sqnorms is None:
            stack = self._dispersed_stack()
            self._disp_sqnorms = (stack * stack).sum(axis=1)
        return self._disp_sqnorms

    # -- mutation ------------------------------------------------------

    def add(self, p) -> "Clusterer":
        """Insert one point, evicting the oldest arrival first if the window is full."""
        p = self._check_point(p)
        if self.dim is None:
            self.dim = p.shape[0]
        while self.stored_count >= self.W:
            self.evict_oldest()
        arrival = self.arrival_counter
        self.arrival_counter += 1

        if self.micro_clusters:
            d = np.linalg.norm(self._center_stack() - p, axis=1)
            eligible = d <= self.R / 2
            if eligible.any():
                # argmin over eligible distances; first index wins ties,
                # and list order is creation order
                masked = np.where(eligible, d, np.inf)
                self.micro_clusters[int(masked.argmin())].add(arrival, p)
                return self

        if self.disp_points:
            dd = np.linalg.norm(self._dispersed_stack() - p, axis=1)
            close = np.flatnonzero(dd <= self.R / 2)
            if close.size >= self.k:
                arrivals = [arrival] + [self.disp_arrivals[i] for i in close]
                points = [p] + [self.disp_points[i] for i in close]
                for i in reversed(close.tolist()):
                    del self.disp_arrivals[i]
                    del self.disp_points[i]
                self._disp_stack = None
                self._disp_sqnorms = None
                self.micro_clusters.append(MicroCluster(p, arrivals, points))
                self._centers = None
                return self

        self.disp_arrivals.append(arrival)
        self.disp_points.append(p)
        self._disp_stack = None
        self._disp_sqnorms = None
        return self

    def evict_oldest(self) -> "Clusterer":
        """Drop the stored point with the smallest arrival index."""
        if self.stored_count == 0:
            raise ValueError("cannot evict from an empty clusterer")
        oldest_mc = None
        oldest_idx = -1
        oldest_arrival = None
        for mc in self.micro_clusters:
            i = int(np.argmin(mc.arrivals))
            if oldest_arrival is None or mc.arrivals[i] < oldest_arrival:
                oldest_arrival = mc.arrivals[i]
                oldest_mc, oldest_idx = mc, i
        in_dispersed = False
        if self.disp_arrivals:
            i = int(np.argmin(self.disp_arrivals))
            if oldest_arrival is None or self.disp_arrivals[i] < oldest_arrival:
                oldest_arrival = self.disp_arrivals[i]
                oldest_idx = i
                in_dispersed = True

        if in_dispersed:
            del self.disp_arrivals[oldest_idx]
            del self.disp_points[oldest_idx]
            self._disp_stack = None
            self._disp_sqnorms = None
        else:
            assert oldest_mc is not None
            oldest_mc.remove_index(oldest_idx)
            if len(oldest_mc) < self.k + 1:
                self.disp_arrivals.extend(oldest_mc.arrivals)
                self.disp_points.extend(oldest_mc.points)
                self.micro_clusters.remove(oldest_mc)
                self._centers = None
                self._disp_stack = None
                self._disp_sqnorms = None
        return self

    # -- queries (never mutate) ----------------------------------------

    def probe(self, p, mode: str = MODE_MC_STRICT) -> ProbeResult:
        """Evaluate a point without committing it.

        Diagnostics (nearest center distance, neighbour count within R) are
        populated in both modes.
        """
        if mode not in MODES:
            raise ValueError(f"unknown probe mode {mode!r}")
        p = np.asarray(p, dtype=np.float64)
        if self.dim is not None and p.shape != (self.dim,):
            raise ValueError(f"point has shape {p.shape}, clusterer uses dim {self.dim}")

        # neighbor counts use the expansion |x - p|^2 = |x|^2 - 2 x.p + |p|^2
        # with cached |x|^2 so the hot path is a single matrix-vector product
        p_sq = float(p @ p)
        r_sq = self.R * self.R

        nearest = None
        neighbor_count = 0
        if self.micro_clusters:
            center_d = np.linalg.norm(self._center_stack() - p, axis=1)
            nearest = float(center_d.min())
            for mc, cd in zip(self.micro_clusters, center_d):
                # members are within R/2 of the center, so none can be
                # within R of p when the center is farther than 3R/2
                if cd <= 1.5 * self.R:
                    d_sq = mc.point_sqnorms() - 2.0 * (mc.point_stack() @ p) + p_sq
                    neighbor_count += int((d_sq <= r_sq).sum())
        if self.disp_points:
            d_sq = self._dispersed_sqnorms() - 2.0 * (self._dispersed_stack() @ p) + p_sq
            neighbor_count += int((d_sq <= r_sq).sum())

        if mode == MODE_MC_STRICT:
            is_nd = nearest is not None and nearest <= self.R / 2
        else:
            is_nd = neighbor_count >= self.k
        return ProbeResult(ND if is_nd else CE, nearest, neighbor_count, mode)


def clusterer_create(k: int, R: float, W: int) -> Clusterer:
    """Construct an empty clusterer; parameters are immutable thereafter."""
    return Clusterer(k, R, W)


def encode_clusterer(m: Clusterer) -> bytes:
    dim = m.dim or 0
    parts = [
        MAGIC,
        u32(m.k),
        pack_f64(m.R),
        u64(m.W),
        u32(dim),
        u64(m.arrival_counter),
        u32(len(m.micro_clusters)),
    ]
    for mc in m.micro_clusters:
        parts.append(f64_bytes(mc.center))
        parts.append(u32(len(mc)))
        for arrival, point in zip(mc.arrivals, mc.points):
            parts.append(u64(arrival))
            parts.append(f64_bytes(point))
    parts.append(u64(len(m.disp_arrivals)))
    for arrival, point in zip(m.disp_arrivals, m.disp_points):
        parts.append(u64(arrival))
        parts.append(f64_bytes(point))
    return b"".join(parts)


def decode_clusterer(blob: bytes, source: str = "<bytes>") -> Clusterer:
    r = Reader(blob, source)
    r.magic(MAGIC)
    k = r.u32()
    R = r.f64()
    W = r.u64()
    dim = r.u32()
    arrival_counter = r.u64()
    m = Clusterer(k, R, W)
    m.dim = dim if dim > 0 else None
    m.arrival_counter = arrival_counter
    for _ in range(r.u32()):
        center = r.f64_array(dim)
        count = r.u32()
        arrivals: list[int] = []
        points: list[np.ndarray] = []
        for _ in range(count):
            arrivals.append(r.u64())
            points.append(r.f64_array(dim))
        m.micro_clusters.append(MicroCluster(center, arrivals, points))
    for _ in range(r.u64()):
        m.disp_arrivals.append(r.u64())
        m.disp_points.append(r.f64_array(dim))
    r.finish()
    return m


def save_clusterer(m: Clusterer, path) -> None:
    Path(path).write_bytes(encode_clusterer(m))


def load_clusterer(path) -> Clusterer:
    path = Path(path)
    return decode_clusterer(path.read_bytes(), str(path))
