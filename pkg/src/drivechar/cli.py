"""Command-line entry point: ``drivechar <verb> [options]``."""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import shutil
import sys
import tempfile
import time
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import pipeline as pl
from . import predictor
from .config import ConfigError, PipelineConfig
from .dataset import (
    LABELS,
    TrajectoryFormatError,
    generate_synthetic_trajectory,
    load_trajectories,
    read_corpus,
    write_corpus,
    write_trajectories,
)
from .dataset import ExtractionConfig, extract_samples
from .traffic_model import CollisionError

log = logging.getLogger("drivechar")


class CommandError(Exception):
    pass


@contextlib.contextmanager
def staged_outputs(out_dir: Path):
    """Write into a scratch directory and move files into place on success."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    for f in sorted(stage.iterdir()):
        f.replace(out_dir / f.name)
    stage.rmdir()


def _write_rows(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _records(path, unit_mode):
    recs = load_trajectories(path, unit_mode)
    if not recs:
        raise CommandError(f"{path}: no trajectory rows")
    return recs


def _truth(path) -> dict:
    truth = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            truth[(row["vehicle_id"], int(row["frame"]))] = (float(row["delta"]), float(row["T"]), float(row["a"]))
    return truth


# ------------------------------------------------------------------ verbs


def cmd_synthesize(cfg: PipelineConfig, out: Path, args) -> None:
    samples, records, planted, report = pl.synthesize_corpus(cfg)
    wave = generate_synthetic_trajectory(cfg.square_wave, cfg.seed, cfg.data.vel_noise, cfg.idm)
    counts = Counter(s.label for s in samples)
    n = len(samples)
    with staged_outputs(out) as st:
        write_trajectories(records, st / "trajectories.csv")
        write_corpus(samples, st / "corpus.jsonl")
        _write_rows(st / "truth.csv", ["vehicle_id", "label", "anchor_frame", "delta", "T", "a"], [
            {"vehicle_id": p.vehicle_id, "label": p.label, "anchor_frame": p.anchor_frame,
             "delta": p.theta[0], "T": p.theta[1], "a": p.theta[2]} for p in planted
        ])
        write_trajectories(wave.records, st / "squarewave_trajectories.csv")
        _write_rows(st / "squarewave_truth.csv", ["vehicle_id", "frame", "delta", "T", "a"], [
            {"vehicle_id": wave.follower_id, "frame": k, "delta": float(d), "T": float(T), "a": float(a)}
            for k, (d, T, a) in enumerate(wave.truth)
        ])
        _dump(st / "corpus_stats.json", {
            "samples": n,
            "class_counts": {c: counts.get(c, 0) for c in LABELS},
            "class_fractions": {c: counts.get(c, 0) / n if n else 0.0 for c in LABELS},
            "configured_mix": dict(zip(LABELS, cfg.corpus.mix)),
            "extraction": report.to_dict(),
            "trajectory_rows": len(records),
            "squarewave_rows": len(wave.records),
        })
    print(f"synthesized {n} samples ({dict(counts)}) into {out}")


def cmd_ingest(cfg, out: Path, args) -> None:
    recs = _records(args.input, args.unit_mode or cfg.data.unit_mode)
    with staged_outputs(out) as st:
        write_trajectories(recs, st / "trajectories.csv")
    print(f"ingested {len(recs)} rows from {args.input}")


def cmd_estimate(cfg, out: Path, args) -> None:
    recs = _records(args.trajectories, args.unit_mode or cfg.data.unit_mode)
    truth = _truth(args.truth) if args.truth else None
    vehicles = args.vehicles.split(",") if args.vehicles else None
    if args.compare:
        modes = [("guided", True), ("unguided", False)]
    else:
        modes = [("unguided", False)] if args.no_clustering else [("guided", True)]
    rows, summary = [], {}
    for name, clustering in modes:
        r = pl.estimate_records(recs, cfg, clustering, vehicles, name)
        rows.extend(r)
        summary[name] = pl.estimation_summary(r, truth)
    if not rows:
        raise CommandError("no estimation window found (every window needs a leader over the full horizon)")
    if args.compare:
        summary["guided_beats_unguided"] = summary["guided"]["fit_mae"] < summary["unguided"]["fit_mae"]
    with staged_outputs(out) as st:
        _write_rows(st / "estimation_trace.csv", pl.TRACE_COLUMNS, rows)
        _dump(st / "estimation_summary.json", summary)
    for name, _ in modes:
        s = summary[name]
        print(f"{name}: {s['windows']} windows, fit MAE {s['fit_mae']:.5f}, E<0.1 {s['table1']['fractions'][0]:.4f}")


def cmd_extract(cfg, out: Path, args) -> None:
    recs = _records(args.trajectories, args.unit_mode or cfg.data.unit_mode)
    ext = replace(cfg.extraction, horizon=cfg.data.horizon, dt=cfg.data.dt)
    if args.n_lanes:
        ext = replace(ext, n_lanes=args.n_lanes)
    samples, report = extract_samples(recs, cfg.idm, cfg.mobil, pl.seeded(cfg.extraction_ga, cfg.seed), ext, None, pl.estimator_kwargs(cfg))
    with staged_outputs(out) as st:
        write_corpus(samples, st / "corpus.jsonl")
        _dump(st / "extraction_report.json", {**report.to_dict(), "class_counts": dict(Counter(s.label for s in samples))})
    print(f"extracted {report.emitted} samples, dropped {dict(report.dropped)}")


def _modes(arg: str):
    return list(predictor.MODES) if arg == "both" else [arg]


def cmd_train(cfg, out: Path, args) -> None:
    samples = read_corpus(args.corpus)
    results = pl.train_models(samples, cfg, _modes(args.mode))
    with staged_outputs(out) as st:
        for mode, res in results.items():
            predictor.save_params(res.params, st / f"model_{mode}.json")
            _write_rows(st / f"train_log_{mode}.csv", ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"], res.log)
    for mode, res in results.items():
        last = res.log[-1]
        print(f"{mode}: train acc {last['train_acc']:.3f}, held-out acc {last['val_acc']:.3f}")


def _check_shapes(params, samples) -> None:
    for s in samples[:1]:
        rows = predictor.MODES[params.mode]
        if s.stacked.shape[0] < rows:
            raise CommandError(f"model expects {rows}x{params.Wx.shape[1]} input, corpus has {s.stacked.shape}")


def cmd_predict(cfg, out: Path, args) -> None:
    params = predictor.load_params(args.model)
    samples = read_corpus(args.corpus)
    if args.split == "test":
        samples = pl.held_out(samples, params)
    if not samples:
        raise CommandError("no samples to predict")
    _check_shapes(params, samples)
    x, labels, _ = pl.corpus_arrays(samples)
    probs = predictor.predict_batch(params, x)
    rows = []
    for s, p in zip(samples, probs):
        rows.append({"vehicle_id": s.vehicle_id, "anchor_frame": s.anchor_frame, "label": s.label,
                     "p_LCL": float(p[0]), "p_LCR": float(p[1]), "p_LK": float(p[2]),
                     "predicted": predictor.predict_label(p)})
    with staged_outputs(out) as st:
        _write_rows(st / "predictions.csv", ["vehicle_id", "anchor_frame", "label", "p_LCL", "p_LCR", "p_LK", "predicted"], rows)
    print(f"wrote {len(rows)} predictions")


def _evaluate_to(st: Path, samples, models) -> dict:
    report, curves = pl.evaluate_models(samples, models)
    _dump(st / "metrics.json", report)
    text = [ev.format_table(r, f"[{name}]") for name, r in report["models"].items()]
    if "comparison" in report:
        c = report["comparison"]
        text.append(f"P_A macro-F1 {c['macro_f1']['P_A']:.4f} vs P_B {c['macro_f1']['P_B']:.4f}")
    (st / "metrics.txt").write_text("\n\n".join(text) + "\n")
    for (name, cls), curve in curves.items():
        curve.write_csv(st / f"roc_{name}_{cls}.csv")
    return report


def cmd_evaluate(cfg, out: Path, args) -> None:
    samples = read_corpus(args.corpus)
    models = {}
    for path in args.model:
        params = predictor.load_params(path)
        _check_shapes(params, samples)
        models[params.mode] = params
    with staged_outputs(out) as st:
        report = _evaluate_to(st, samples, models)
    for name, r in report["models"].items():
        print(f"{name}: macro-F1 {r['macro_f1']:.4f}, AUC {r['auc']}")


def cmd_repro_fig3(cfg, out: Path, args) -> None:
    t0 = time.perf_counter()
    summary, rows = pl.run_fig3(cfg)
    cols = pl.TRACE_COLUMNS + ["true_delta", "true_T", "true_a"]
    with staged_outputs(out) as st:
        _write_rows(st / "fig3_trace.csv", cols, rows)
        _dump(st / "fig3_summary.json", summary)
    g, u = summary["guided"], summary["unguided"]
    print(f"fit MAE guided {g['fit_mae']:.5f} vs unguided {u['fit_mae']:.5f}; T plateaus {g['T_plateau_means']} ({time.perf_counter() - t0:.1f}s)")


def cmd_repro_table1(cfg, out: Path, args) -> None:
    if args.corpus:
        report = {"per_class": pl.table1_from_corpus(read_corpus(args.corpus))}
    elif args.trajectories:
        recs = _records(args.trajectories, args.unit_mode or cfg.data.unit_mode)
        ext = replace(cfg.extraction, horizon=cfg.data.horizon, dt=cfg.data.dt)
        samples, rep = extract_samples(recs, cfg.idm, cfg.mobil, pl.seeded(cfg.ga, cfg.seed), ext, None, pl.estimator_kwargs(cfg))
        report = {"per_class": pl.table1_from_corpus(samples), "extraction": rep.to_dict()}
    else:
        report = {"synthetic": pl.run_table1_synthetic(cfg)}
    with staged_outputs(out) as st:
        _dump(st / "table1.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))


def cmd_repro_predictor(cfg, out: Path, args) -> None:
    """Corpus (synthetic or extracted) -> both models -> evaluation."""
    if args.trajectories:
        recs = _records(args.trajectories, args.unit_mode or cfg.data.unit_mode)
        ext = replace(cfg.extraction, horizon=cfg.data.horizon, dt=cfg.data.dt)
        samples, _ = extract_samples(recs, cfg.idm, cfg.mobil, pl.seeded(cfg.extraction_ga, cfg.seed), ext, None, pl.estimator_kwargs(cfg))
    else:
        samples = pl.synthesize_corpus(cfg)[0]
    results = pl.train_models(samples, cfg, list(predictor.MODES))
    with staged_outputs(out) as st:
        write_corpus(samples, st / "corpus.jsonl")
        for mode, res in results.items():
            predictor.save_params(res.params, st / f"model_{mode}.json")
            _write_rows(st / f"train_log_{mode}.csv", ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"], res.log)
        report = _evaluate_to(st, samples, {m: r.params for m, r in results.items()})
    c = report.get("comparison", {})
    if c:
        print(f"P_A macro-F1 {c['macro_f1']['P_A']:.4f} vs P_B {c['macro_f1']['P_B']:.4f}")


COMMANDS = {
    "synthesize": cmd_synthesize,
    "ingest": cmd_ingest,
    "estimate": cmd_estimate,
    "extract": cmd_extract,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "repro-fig3": cmd_repro_fig3,
    "repro-table1": cmd_repro_table1,
    "repro-predictor": cmd_repro_predictor,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="pipeline config (JSON)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override config seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="drivechar", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    add("synthesize", "generate synthetic trajectories, ground truth and a labelled corpus")
    s = add("ingest", "normalize a trajectory file (metric or NGSIM feet) to the native CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--unit-mode", choices=["metric", "ngsim_feet"])
    s = add("estimate", "moving-horizon IDM parameter estimation per vehicle")
    s.add_argument("--trajectories", required=True)
    s.add_argument("--unit-mode", choices=["metric", "ngsim_feet"])
    s.add_argument("--truth", help="CSV with vehicle_id,frame,delta,T,a")
    s.add_argument("--vehicles", help="comma-separated vehicle ids")
    s.add_argument("--no-clustering", action="store_true")
    s.add_argument("--compare", action="store_true", help="run with and without clustering")
    s = add("extract", "label behaviours and extract 25x30 samples")
    s.add_argument("--trajectories", required=True)
    s.add_argument("--unit-mode", choices=["metric", "ngsim_feet"])
    s.add_argument("--n-lanes", type=int)
    s = add("train", "train the behaviour predictor")
    s.add_argument("--corpus", required=True)
    s.add_argument("--mode", default="both", choices=["both", *predictor.MODES])
    s = add("predict", "predict behaviours for a corpus")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--split", choices=["all", "test"], default="all")
    s = add("evaluate", "metrics, ROC curves and the P_A/P_B comparison")
    s.add_argument("--corpus", required=True)
    s.add_argument("--model", required=True, action="append")
    add("repro-fig3", "square-wave estimation with and without clustering")
    s = add("repro-table1", "fitting-error bucket table")
    s.add_argument("--corpus")
    s.add_argument("--trajectories")
    s.add_argument("--unit-mode", choices=["metric", "ngsim_feet"])
    s = add("repro-predictor", "corpus -> P_A and P_B -> evaluation")
    s.add_argument("--trajectories", help="use real trajectories instead of the synthetic corpus")
    s.add_argument("--unit-mode", choices=["metric", "ngsim_feet"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "out"), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](cfg, Path(args.out), args)
    except (CommandError, ConfigError, TrajectoryFormatError, predictor.ModelFormatError, CollisionError, ValueError, OSError) as exc:
        print(f"drivechar {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
