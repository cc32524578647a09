"""End-to-end runs shared by the CLI and the acceptance tests."""
from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import evaluation as ev
from . import predictor
from .config import PipelineConfig
from .dataset import (
    LABELS,
    LabeledSample,
    SquareWaveSpec,
    TrajectoryRecord,
    generate_synthetic_corpus,
    generate_synthetic_trajectory,
    group_by_vehicle,
)
from .estimation import EstimationWindow, GaConfig, OnlineEstimator

TRACE_COLUMNS = [
    "mode", "vehicle_id", "frame", "step",
    "delta", "T", "a", "fit_error",
    "lo_delta", "lo_T", "lo_a", "hi_delta", "hi_T", "hi_a",
    "sel_delta", "sel_T", "sel_a", "event",
]


def estimator_kwargs(cfg: PipelineConfig) -> dict:
    e = cfg.ets
    return {"epsilon": e.epsilon, "q": e.q, "gamma1": e.gamma1, "gamma2": e.gamma2}


def seeded(ga: GaConfig, seed: int) -> GaConfig:
    return GaConfig(**{**ga.__dict__, "rng_seed": int(seed)})


# ------------------------------------------------------------ estimation


@dataclass
class FollowingSeries:
    frames: np.ndarray
    vel: np.ndarray
    leader_vel: np.ndarray
    gap: np.ndarray
    has_leader: np.ndarray


def following_series(records: Sequence[TrajectoryRecord]) -> dict[str, FollowingSeries]:
    """Speed, leader speed and gap of every vehicle at every frame.

    The leader is the nearest vehicle strictly ahead in the same lane.
    """
    lanes: dict[tuple[int, int], list[tuple[float, float]]] = defaultdict(list)
    for r in records:
        lanes[(r.frame, r.lane)].append((r.pos, r.vel))
    index = {}
    for key, lst in lanes.items():
        lst.sort()
        index[key] = ([p for p, _ in lst], [v for _, v in lst])
    out = {}
    for vid, track in group_by_vehicle(records).items():
        n = len(track)
        lv = np.zeros(n)
        gap = np.full(n, np.nan)
        has = np.zeros(n, dtype=bool)
        for k, r in enumerate(track):
            positions, vels = index[(r.frame, r.lane)]
            j = bisect.bisect_right(positions, r.pos)
            if j < len(positions):
                has[k] = True
                gap[k] = positions[j] - r.pos
                lv[k] = vels[j]
        out[vid] = FollowingSeries(
            np.array([r.frame for r in track]), np.array([r.vel for r in track]), lv, gap, has
        )
    return out


def estimate_vehicle(series: FollowingSeries, cfg: PipelineConfig, clustering: bool, seed: int, vehicle_id: str = "", mode: str = "") -> list[dict]:
    """Run the moving-horizon estimator over every full window with a leader."""
    n = cfg.data.horizon
    est = OnlineEstimator(cfg.idm, seeded(cfg.ga, seed), clustering=clustering, **estimator_kwargs(cfg))
    rows = []
    for end in range(n - 1, len(series.frames)):
        sl = slice(end - n + 1, end + 1)
        if not series.has_leader[sl].all() or np.any(series.gap[sl] <= 0):
            continue
        window = EstimationWindow(series.vel[sl], series.leader_vel[sl], series.gap[sl], cfg.data.dt)
        rec = est.step(window)
        th = rec.estimate
        sel = rec.selected_center if rec.selected_center is not None else [math.nan] * 3
        rows.append({
            "mode": mode, "vehicle_id": vehicle_id, "frame": int(series.frames[end]), "step": rec.step,
            "delta": th.delta, "T": th.T, "a": th.a, "fit_error": th.fit_error,
            "lo_delta": rec.bounds.lo[0], "lo_T": rec.bounds.lo[1], "lo_a": rec.bounds.lo[2],
            "hi_delta": rec.bounds.hi[0], "hi_T": rec.bounds.hi[1], "hi_a": rec.bounds.hi[2],
            "sel_delta": float(sel[0]), "sel_T": float(sel[1]), "sel_a": float(sel[2]), "event": rec.event,
        })
    return rows


def estimate_records(records, cfg: PipelineConfig, clustering: bool = True, vehicles: Optional[Iterable[str]] = None, mode: str = "") -> list[dict]:
    series = following_series(records)
    wanted = None if vehicles is None else {str(v) for v in vehicles}
    rows = []
    for k, (vid, s) in enumerate(series.items()):
        if wanted is not None and vid not in wanted:
            continue
        rows.extend(estimate_vehicle(s, cfg, clustering, cfg.seed * 7919 + k, vid, mode))
    return rows


def param_mae(rows: list[dict], truth: dict[tuple[str, int], tuple[float, float, float]]) -> Optional[dict]:
    """Mean absolute parameter error against the truth in force one frame before the window end."""
    errs = {"delta": [], "T": [], "a": []}
    for r in rows:
        key = (r["vehicle_id"], r["frame"] - 1)
        if key not in truth:
            continue
        for name, val in zip(("delta", "T", "a"), truth[key]):
            errs[name].append(abs(r[name] - val))
    if not errs["T"]:
        return None
    return {k: float(np.mean(v)) for k, v in errs.items()}


def estimation_summary(rows: list[dict], truth=None) -> dict:
    errors = [r["fit_error"] for r in rows]
    out = {
        "windows": len(rows),
        "fit_mae": float(np.mean(errors)) if errors else None,
        "table1": ev.fitting_error_buckets(errors),
    }
    if truth:
        out["param_mae"] = param_mae(rows, truth)
    return out


# ---------------------------------------------------------------- fig 3


def run_fig3(cfg: PipelineConfig, spec: Optional[SquareWaveSpec] = None) -> tuple[dict, list[dict]]:
    """Square-wave recovery with and without clustering guidance.

    Returns a summary and the per-window trace (with the planted values).
    """
    spec = spec or cfg.square_wave
    trace = generate_synthetic_trajectory(spec, cfg.seed, cfg.data.vel_noise, cfg.idm)
    fv, lv, gap = trace.columns()
    series = FollowingSeries(np.arange(len(fv)), fv, lv, gap, np.ones(len(fv), dtype=bool))
    summary = {"spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.__dict__.items()}}
    all_rows = []
    transitions = np.arange(spec.half_period, spec.duration, spec.half_period)
    for mode, clustering in (("guided", True), ("unguided", False)):
        rows = estimate_vehicle(series, cfg, clustering, cfg.seed, trace.follower_id, mode)
        for r in rows:
            d, T, a = trace.truth[r["frame"] - 1]
            r.update(true_delta=d, true_T=T, true_a=a)
        times = np.array([r["frame"] * spec.dt for r in rows])
        near = np.zeros(len(rows), dtype=bool)
        for t in transitions:
            near |= np.abs(times - t) <= 1.0
        Ts = np.array([r["T"] for r in rows])
        true_T = np.array([r["true_T"] for r in rows])
        plateaus = {}
        for level in sorted(set(spec.T_levels)):
            m = (~near) & np.isclose(true_T, level)
            plateaus[repr(level)] = float(Ts[m].mean()) if m.any() else None
        summary[mode] = {
            "fit_mae": float(np.mean([r["fit_error"] for r in rows])),
            "T_plateau_means": plateaus,
            "param_mae": {k: float(np.mean([abs(r[k] - r["true_" + k]) for r in rows])) for k in ("delta", "T", "a")},
            "table1": ev.fitting_error_buckets([r["fit_error"] for r in rows]),
            "windows": len(rows),
        }
        all_rows.extend(rows)
    summary["guided_beats_unguided"] = summary["guided"]["fit_mae"] < summary["unguided"]["fit_mae"]
    return summary, all_rows


# -------------------------------------------------------------- table I


def run_table1_synthetic(cfg: PipelineConfig) -> dict:
    """Fitting-error buckets over ``cfg.table1.n_windows`` synthetic windows.

    Each vehicle follows a sinusoidal leader with its own constant planted
    parameters; windows are consecutive moving-horizon steps.
    """
    t1 = cfg.table1
    rng = np.random.default_rng(cfg.seed)
    per_vehicle = [t1.n_windows // t1.n_vehicles + (1 if i < t1.n_windows % t1.n_vehicles else 0) for i in range(t1.n_vehicles)]
    errors = []
    for i, n_win in enumerate(per_vehicle):
        T = float(rng.uniform(0.8, 2.2))
        a = float(rng.uniform(0.6, 2.5))
        spec = SquareWaveSpec(
            T_levels=(T, T), a_levels=(a, a), delta=float(rng.uniform(3.9, 4.1)),
            half_period=1e9, duration=max(30.0, (n_win + cfg.data.horizon) * cfg.data.dt),
            leader_speed=float(rng.uniform(10.0, 25.0)), leader_amplitude=float(rng.uniform(0.5, 2.5)),
            leader_period=float(rng.uniform(8.0, 15.0)), initial_gap=float(rng.uniform(20.0, 50.0)),
            dt=cfg.data.dt,
        )
        trace = generate_synthetic_trajectory(spec, cfg.seed + i, cfg.data.vel_noise, cfg.idm)
        fv, lv, gap = trace.columns()
        n = cfg.data.horizon + n_win - 1
        series = FollowingSeries(np.arange(n), fv[:n], lv[:n], gap[:n], np.ones(n, dtype=bool))
        errors.extend(r["fit_error"] for r in estimate_vehicle(series, cfg, True, cfg.seed * 7919 + i))
    return ev.fitting_error_buckets(errors)


def table1_from_corpus(samples: Sequence[LabeledSample]) -> dict:
    """Buckets per behaviour class over the fit errors stored with each sample."""
    out = {}
    for label in LABELS:
        errs = [float(e) for s in samples if s.label == label for e in s.fit_errors]
        out[label] = ev.fitting_error_buckets(errs)
        out[label]["samples"] = sum(1 for s in samples if s.label == label)
    return out


# -------------------------------------------------------------- predictor


def synthesize_corpus(cfg: PipelineConfig):
    return generate_synthetic_corpus(
        cfg.corpus, cfg.seed, cfg.idm, cfg.mobil, seeded(cfg.extraction_ga, cfg.seed),
        _corpus_extraction(cfg), estimator_kwargs(cfg),
    )


def _corpus_extraction(cfg: PipelineConfig):
    from dataclasses import replace
    return replace(cfg.extraction, n_lanes=cfg.corpus.n_lanes, horizon=cfg.data.horizon, dt=cfg.data.dt)


def corpus_arrays(samples: Sequence[LabeledSample]):
    x = np.stack([s.stacked for s in samples])
    return x, [s.label for s in samples], [s.vehicle_id for s in samples]


def sample_key(s: LabeledSample) -> str:
    return f"{s.vehicle_id}@{s.anchor_frame}"


def train_models(samples: Sequence[LabeledSample], cfg: PipelineConfig, modes: Sequence[str]) -> dict[str, predictor.TrainResult]:
    """Train each requested mode on the same split."""
    x, labels, groups = corpus_arrays(samples)
    tc = cfg.train
    split = predictor.stratified_split(labels, groups, tc.train_fraction, tc.rng_seed + cfg.seed)
    results = {}
    for mode in modes:
        from dataclasses import replace
        res = predictor.train(x, labels, groups, replace(tc, rng_seed=tc.rng_seed + cfg.seed), mode, split)
        res.params.meta = {
            "mode": mode,
            "test_keys": [sample_key(samples[i]) for i in res.test_idx],
            "train_size": int(len(res.train_idx)),
        }
        results[mode] = res
    return results


def held_out(samples: Sequence[LabeledSample], params: predictor.NetworkParams) -> list[LabeledSample]:
    keys = params.meta.get("test_keys")
    if not keys:
        return list(samples)
    wanted = set(keys)
    return [s for s in samples if sample_key(s) in wanted]


def evaluate_models(samples: Sequence[LabeledSample], models: dict[str, predictor.NetworkParams]) -> tuple[dict, dict]:
    """Reports per model plus ROC curves keyed by (model, class)."""
    reports, curves = {}, {}
    for name, params in models.items():
        subset = held_out(samples, params)
        x, labels, _ = corpus_arrays(subset)
        probs = predictor.predict_batch(params, x)
        reports[name] = ev.evaluation_report(probs, labels)
        for c in ev.CLASSES:
            try:
                curves[(name, c)] = ev.roc_auc(probs, labels, c)
            except ValueError:
                pass
    out = {"models": reports}
    if "with_characteristics" in reports and "sensing_only" in reports:
        a, b = reports["with_characteristics"], reports["sensing_only"]
        out["comparison"] = {
            "macro_f1": {"P_A": a["macro_f1"], "P_B": b["macro_f1"]},
            "accuracy": {c: {"P_A": a["per_class"][c]["accuracy"], "P_B": b["per_class"][c]["accuracy"]} for c in ev.CLASSES},
            "auc": {c: {"P_A": a["auc"][c], "P_B": b["auc"][c]} for c in ev.CLASSES},
            "P_A_macro_f1_ge_P_B": a["macro_f1"] >= b["macro_f1"],
        }
    return out, curves
