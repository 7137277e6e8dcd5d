"""Command-line interface.

Subcommands: synth, offline, online, sweep, eval, openmax fit|score. File
formats are the DSCE1 activation matrix, sidecar JSON manifests (labels,
predictions, ground truth), the state directory written by `offline`, and
JSONL decision records:

    {"id", "pred_class", "verdict", "nearest_center_dist",
     "neighbor_count", "latency_us"}
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio, openmax
from .evaluation import Confusion, latency_stats, prf, sweep, sweep_to_csv
from .pipeline import (
    Decision,
    PipelineConfig,
    StreamError,
    decisions_to_jsonl,
    load_state,
    offline_run,
    online_run,
    save_state,
    stream_from_matrix,
)


def _load_config(path: str | None, seed: int | None) -> PipelineConfig:
    config = PipelineConfig.from_dict(json.loads(Path(path).read_text())) if path else PipelineConfig()
    if seed is not None:
        config = config.replace(seed=seed)
    return config


def _class_spec(entry: dict, dim: int, count_key: str) -> dataio.ClassSpec:
    mean = entry["mean"]
    mean = np.full(dim, float(mean)) if np.isscalar(mean) else np.asarray(mean, dtype=np.float64)
    return dataio.ClassSpec(entry["name"], mean, float(entry["stddev"]), int(entry[count_key]))


def cmd_synth(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    dim = int(spec["dim"])
    classes = spec["classes"]
    train_entries = [c for c in classes if not c.get("ce", False) and int(c.get("train_count", 0)) > 0]
    if not train_entries:
        print("synth spec needs at least one trained (non-ce) class", file=sys.stderr)
        return 2
    for c in classes:
        if c.get("ce", False) and int(c.get("train_count", 0)) > 0:
            print(f"ce class {c['name']!r} cannot have train instances", file=sys.stderr)
            return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = dataio.synth_generate(
        [_class_spec(c, dim, "train_count") for c in train_entries], args.seed
    )
    dataio.save_labeled(train, out / "train.dsce1", out / "train.labels.json")

    online_entries = [c for c in classes if int(c.get("online_count", 0)) > 0]
    if online_entries:
        stream = dataio.synth_generate(
            [_class_spec(c, dim, "online_count") for c in online_entries], args.seed + 1
        )
        dataio.save_matrix(stream.matrix, out / "stream.dsce1")
        means = dataio.class_means(train)
        preds = dataio.route_nearest_mean(means, stream.matrix)
        truth = [bool(online_entries[j].get("ce", False)) for j in stream.labels]
        (out / "stream.preds.json").write_text(json.dumps([int(p) for p in preds]) + "\n")
        (out / "stream.truth.json").write_text(json.dumps(truth) + "\n")
    print(f"wrote synthetic dataset to {out}")
    return 0


def cmd_offline(args) -> int:
    train = dataio.load_labeled(args.train, args.labels)
    config = _load_config(args.config, args.seed)
    state = offline_run(train, config)
    save_state(state, args.out)
    print(f"state written to {args.out}")
    return 0


def cmd_online(args) -> int:
    state = load_state(args.state)
    matrix = dataio.load_matrix(args.stream)
    preds = json.loads(Path(args.preds).read_text())
    timer = (lambda: 0) if args.latency == "zero" else time.perf_counter_ns
    results = online_run(state, stream_from_matrix(matrix, preds), timer=timer)
    Path(args.out).write_text(decisions_to_jsonl(results))
    n_err = sum(isinstance(r, StreamError) for r in results)
    print(f"{len(results)} records written to {args.out} ({n_err} errors)")
    return 0


def cmd_sweep(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    config = PipelineConfig.from_dict(grid.get("config", {}))
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    train = dataio.load_labeled(grid["train"], grid["labels"])
    stream = dataio.load_matrix(grid["stream"])
    preds = json.loads(Path(grid["preds"]).read_text())
    truth_list = json.loads(Path(grid["truth"]).read_text())
    truth = {i: bool(v) for i, v in enumerate(truth_list)}
    cells = sweep(grid["k"], grid["R"], config, train, stream, preds, truth)
    csv_path = args.out or grid.get("csv")
    text = sweep_to_csv(cells, csv_path)
    if csv_path:
        print(f"sweep CSV written to {csv_path}")
    else:
        print(text, end="")
    failures = [c for c in cells if c.error]
    for c in failures:
        print(f"cell k={c.k} R={c.R}: {c.error}", file=sys.stderr)
    return 0


def _read_decision_records(path: str) -> tuple[list[Decision], int]:
    decisions: list[Decision] = []
    n_errors = 0
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "error" in rec:
            n_errors += 1
            continue
        decisions.append(
            Decision(
                id=rec["id"],
                pred_class=rec.get("pred_class", -1),
                verdict=rec["verdict"],
                nearest_center_dist=rec.get("nearest_center_dist"),
                neighbor_count=rec.get("neighbor_count", 0),
                latency_us=rec.get("latency_us", 0),
            )
        )
    return decisions, n_errors


def cmd_eval(args) -> int:
    decisions, n_errors = _read_decision_records(args.decisions)
    truth_list = json.loads(Path(args.truth).read_text())
    truth = {i: bool(v) for i, v in enumerate(truth_list)}
    tp = fp = tn = fn = 0
    for d in decisions:
        if d.id not in truth:
            print(f"instance {d.id} missing from ground truth", file=sys.stderr)
            return 2
        flagged = d.verdict == "CE"
        if truth[d.id] and flagged:
            tp += 1
        elif not truth[d.id] and flagged:
            fp += 1
        elif not truth[d.id] and not flagged:
            tn += 1
        else:
            fn += 1
    c = Confusion(tp, fp, tn, fn)
    row = prf(c)
    report = {
        "tp": c.tp,
        "fp": c.fp,
        "tn": c.tn,
        "fn": c.fn,
        "precision": round(row.precision, 6),
        "recall": round(row.recall, 6),
        "f_measure": round(row.f_measure, 6),
        "latency_ms": latency_stats(decisions) if decisions else None,
        "n_decisions": len(decisions),
        "n_errors": n_errors,
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_openmax_fit(args) -> int:
    train = dataio.load_labeled(args.train, args.labels)
    labels = np.asarray(train.labels)
    by_class = {
        j: train.matrix.data[labels == j].astype(np.float64)
        for j in range(train.n_classes)
    }
    models = openmax.fit_class_models(by_class, args.tail)
    openmax.save_models(models, args.out, class_names=train.class_names)
    print(f"fit {len(models)} class models -> {args.out}")
    return 0


def cmd_openmax_score(args) -> int:
    models, _ = openmax.load_models(args.model)
    matrix = dataio.load_matrix(args.matrix)
    lines = []
    for i, row in enumerate(matrix.data):
        t0 = time.perf_counter_ns() if args.latency == "measure" else 0
        scores = openmax.openmax_recalibrate(row.astype(np.float64), models, args.alpha)
        decided = openmax.openmax_decide(scores, threshold=args.threshold)
        latency_us = (time.perf_counter_ns() - t0) // 1000 if args.latency == "measure" else 0
        record = {
            "id": i,
            "pred_class": decided,
            "verdict": "CE" if decided is None else "ND",
            "unknown_prob": scores.unknown_prob,
            "latency_us": int(latency_us),
        }
        lines.append(json.dumps(record))
    Path(args.out).write_text("\n".join(lines) + ("\n" if lines else ""))
    print(f"{len(lines)} scores written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cestream")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--spec", required=True, help="JSON class spec")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("offline", help="train autoencoder + clusterers")
    p.add_argument("--train", required=True, help="DSCE1 training matrix")
    p.add_argument("--labels", required=True, help="label manifest JSON")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="state directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="score a stream against trained state")
    p.add_argument("--state", required=True)
    p.add_argument("--stream", required=True, help="DSCE1 matrix of online instances")
    p.add_argument("--preds", required=True, help="JSON array of predicted classes")
    p.add_argument("--out", default="decisions.jsonl")
    p.add_argument("--latency", choices=("measure", "zero"), default="measure",
                   help="zero makes output byte-diffable across runs")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("sweep", help="grid sweep over (k, R)")
    p.add_argument("--grid", required=True, help="grid JSON (k, R, config, dataset paths)")
    p.add_argument("--out", help="CSV output path (overrides grid csv key)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="metrics report from decisions + ground truth")
    p.add_argument("--decisions", required=True, help="decisions JSONL")
    p.add_argument("--truth", required=True, help="JSON array of per-instance is_CE")
    p.add_argument("--out", help="write the JSON report here as well")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p_om = sub.add_parser("openmax", help="EVT recalibration baseline")
    om_sub = p_om.add_subparsers(dest="om_command", required=True)

    p = om_sub.add_parser("fit", help="fit per-class MAV + Weibull tail models")
    p.add_argument("--train", required=True, help="DSCE1 penultimate-layer matrix")
    p.add_argument("--labels", required=True)
    p.add_argument("--tail", type=int, default=9, help="tail size eta")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_openmax_fit)

    p = om_sub.add_parser("score", help="score a matrix against fitted models")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True, help="DSCE1 matrix to score")
    p.add_argument("--alpha", type=int, default=2)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default="openmax_scores.jsonl")
    p.add_argument("--latency", choices=("measure", "zero"), default="measure")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_openmax_score)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
