"""Metrics, parameter sweeps, latency statistics, exact Wilcoxon signed-rank.

Positive class is concept evolution: TP counts novel-class instances flagged
CE, FP counts known-class instances flagged CE, and so on. Zero-denominator
precision/recall/F default to 0 rather than NaN so empty rows stay sortable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataio import LabeledSet
from .mcod import CE, ND
from .pipeline import (
    Decision,
    PipelineConfig,
    StateBundle,
    StreamError,
    build_clusterers,
    online_run,
    stream_from_matrix,
    train_reducer,
)

__all__ = [
    "Confusion",
    "MetricRow",
    "SweepCell",
    "confusion",
    "latency_stats",
    "prf",
    "sweep",
    "sweep_to_csv",
    "wilcoxon_signed_rank",
]


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricRow:
    precision: float
    recall: float
    f_measure: float
    k: int | None = None
    R: float | None = None
    tag: str | None = None


def confusion(decisions: Iterable[Decision], truth: Mapping[int, bool]) -> Confusion:
    """Count TP/FP/TN/FN of CE verdicts against per-instance is_CE ground truth."""
    tp = fp = tn = fn = 0
    for d in decisions:
        if isinstance(d, StreamError):
            raise ValueError(f"instance {d.id}: cannot score an error record ({d.error})")
        if d.id not in truth:
            raise ValueError(f"instance {d.id} missing from ground truth")
        is_ce = bool(truth[d.id])
        flagged = d.verdict == CE
        if is_ce and flagged:
            tp += 1
        elif not is_ce and flagged:
            fp += 1
        elif not is_ce and not flagged:
            tn += 1
        else:
            fn += 1
    return Confusion(tp, fp, tn, fn)


def prf(c: Confusion, k: int | None = None, R: float | None = None, tag: str | None = None) -> MetricRow:
    """Precision TP/(TP+FP), recall TP/(TP+FN), F = 2PR/(P+R); 0 on empty denominators."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricRow(precision, recall, f, k=k, R=R, tag=tag)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ascending ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1  # ranks are 1-based
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def wilcoxon_signed_rank(pairs: Sequence[tuple[float, float]]) -> float:
    """Exact two-sided p-value of the Wilcoxon signed-rank test.

    Zero differences are dropped; |differences| are ranked ascending with
    average ranks on ties; the statistic is W = min(W+, W-). The p-value is
    exact, from the full enumeration of all 2^n sign assignments, so n is
    capped at 20 after dropping zeros.
    """
    diffs = np.asarray([a - b for a, b in pairs], dtype=np.float64)
    diffs = diffs[diffs != 0]
    n = diffs.size
    if n == 0:
        raise ValueError("all differences are zero; test undefined")
    if n > 20:
        raise ValueError(f"exact enumeration supports at most 20 non-zero pairs, got {n}")

    ranks = _average_ranks(np.abs(diffs))
    w_plus = ranks[diffs > 0].sum()
    w_minus = ranks[diffs < 0].sum()
    w_obs = min(w_plus, w_minus)
    total = ranks.sum()

    # subset sums of ranks over all sign assignments; ranks are multiples
    # of 0.5 so the sums are exact in float64
    assignments = np.arange(2**n, dtype=np.uint32)
    bits = (assignments[:, None] >> np.arange(n)) & 1
    t = bits.astype(np.float64) @ ranks
    count = int((t <= w_obs).sum() + (t >= total - w_obs).sum())
    return min(1.0, count / 2**n)


def latency_stats(decisions: Iterable[Decision]) -> dict[str, float]:
    """Mean/min/max per-instance latency in milliseconds, 3 significant figures."""
    lat = [d.latency_us for d in decisions if isinstance(d, Decision)]
    if not lat:
        raise ValueError("no decisions to summarize")
    ms = np.asarray(lat, dtype=np.float64) / 1000.0

    def sig3(x: float) -> float:
        return float(f"{x:.3g}")

    return {"mean": sig3(ms.mean()), "min": sig3(ms.min()), "max": sig3(ms.max())}


@dataclass(frozen=True)
class SweepCell:
    k: int
    R: float
    metrics: MetricRow | None
    confusion: Confusion | None
    mean_latency_us: float | None
    error: str | None = None


def sweep(
    k_values: Sequence[int],
    r_values: Sequence[float],
    config: PipelineConfig,
    train: LabeledSet,
    stream_matrix,
    preds: Sequence[int],
    truth: Mapping[int, bool],
    timer=None,
) -> list[SweepCell]:
    """One offline+online run per (k, R) cell against a fixed dataset.

    The autoencoder and normalizer do not depend on (k, R), so they are
    trained once and shared; clusterers are rebuilt per cell. Cell failures
    are recorded and the sweep continues.
    """
    if not k_values or not r_values:
        raise ValueError("sweep grid is empty")
    ae, normalizer, normalized = train_reducer(train, config)
    cells: list[SweepCell] = []
    kwargs = {} if timer is None else {"timer": timer}
    for k in k_values:
        for r in r_values:
            try:
                clusterers = build_clusterers(
                    normalized, train.labels, train.class_names, k, r
                )
                cell_config = config.replace(k=k, R=r)
                state = StateBundle(ae, normalizer, clusterers, train.class_names, cell_config)
                decisions = online_run(state, stream_from_matrix(stream_matrix, preds), **kwargs)
                c = confusion([d for d in decisions if isinstance(d, Decision)], truth)
                row = prf(c, k=k, R=r)
                mean_lat = float(
                    np.mean([d.latency_us for d in decisions if isinstance(d, Decision)])
                )
                cells.append(SweepCell(k, r, row, c, mean_lat))
            except Exception as exc:  # cell isolation: record and continue
                cells.append(SweepCell(k, r, None, None, None, error=str(exc)))
    return cells


def sweep_to_csv(cells: Sequence[SweepCell], path=None) -> str:
    """Fixed-format CSV (stable decimal places) of the successful sweep cells."""
    lines = ["k,R,TP,FP,TN,FN,precision,recall,f_measure,mean_latency_us"]
    for cell in cells:
        if cell.error is not None:
            continue
        m, c = cell.metrics, cell.confusion
        lines.append(
            f"{cell.k},{cell.R:.6f},{c.tp},{c.fp},{c.tn},{c.fn},"
            f"{m.precision:.6f},{m.recall:.6f},{m.f_measure:.6f},{cell.mean_latency_us:.3f}"
        )
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
