"""Trajectory ingestion, behaviour labelling, sample extraction and synthetic data.

Lane 1 is the leftmost lane, so a decreasing lane index is a left change.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .estimation import (
    EstimationWindow,
    GaConfig,
    OnlineEstimator,
    windows_from_trace,
)
from .traffic_model import (
    SLOT_ORDER,
    VIRTUAL_LEADER_DISTANCE,
    CollisionError,
    IdmParams,
    MobilParams,
    NeighborSet,
    VehicleState,
    compute_characteristic,
    identify_neighbors,
    idm_acceleration,
    lane_change_accels,
    lane_exists,
    mobil_incentive,
    mobil_safety,
    simulate_following,
)

log = logging.getLogger(__name__)

DT = 0.1
HORIZON = 30
SENSING_ROWS = 21
CHARACTERISTIC_ROWS = 4
STACKED_ROWS = SENSING_ROWS + CHARACTERISTIC_ROWS
FEET = 0.3048
LABELS = ("LCL", "LCR", "LK")
CSV_HEADER = ["vehicle_id", "frame", "time_s", "lane", "pos_m", "vel_mps"]
NGSIM_COLUMNS = {"vehicle_id": "Vehicle_ID", "frame": "Frame_ID", "lane": "Lane_ID", "pos": "Local_Y", "vel": "v_Vel"}


class TrajectoryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: str
    frame: int
    time: float
    lane: int
    pos: float
    vel: float

    @property
    def state(self) -> VehicleState:
        return VehicleState(self.pos, max(self.vel, 0.0), self.lane)


# --------------------------------------------------------------------- io


def write_trajectories(records: Iterable[TrajectoryRecord], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.vehicle_id, r.frame, repr(float(r.time)), r.lane, repr(float(r.pos)), repr(float(r.vel))])


def _central_difference(pos: Sequence[float], dt: float) -> list[float]:
    n = len(pos)
    if n == 1:
        return [0.0]
    vel = []
    for i in range(n):
        if i == 0:
            vel.append((pos[1] - pos[0]) / dt)
        elif i == n - 1:
            vel.append((pos[-1] - pos[-2]) / dt)
        else:
            vel.append((pos[i + 1] - pos[i - 1]) / (2 * dt))
    return vel


def load_trajectories(path, unit_mode: str = "metric", dt: float = DT) -> list[TrajectoryRecord]:
    """Read a trajectory CSV.

    ``unit_mode="metric"`` expects the native header (``vel_mps`` optional);
    ``unit_mode="ngsim_feet"`` accepts the NGSIM column names in feet.
    Velocities missing from the file are derived by central differences.
    """
    if unit_mode not in ("metric", "ngsim_feet"):
        raise ValueError(f"unknown unit mode {unit_mode!r}")
    path = Path(path)
    rows: dict[str, list[tuple[int, float, int, float, Optional[float], int]]] = defaultdict(list)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TrajectoryFormatError(f"{path}: empty file, header missing")
        if unit_mode == "metric":
            need = ["vehicle_id", "frame", "lane", "pos_m"]
            cols = {"vehicle_id": "vehicle_id", "frame": "frame", "lane": "lane", "pos": "pos_m", "vel": "vel_mps", "time": "time_s"}
        else:
            need = [NGSIM_COLUMNS[k] for k in ("vehicle_id", "frame", "lane", "pos")]
            cols = dict(NGSIM_COLUMNS, time=None)
        missing = [c for c in need if c not in header]
        if missing:
            raise TrajectoryFormatError(f"{path}: header lacks columns {missing}")
        idx = {k: header.index(v) for k, v in cols.items() if v is not None and v in header}
        scale = FEET if unit_mode == "ngsim_feet" else 1.0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vid = row[idx["vehicle_id"]].strip()
                frame = int(float(row[idx["frame"]]))
                lane = int(float(row[idx["lane"]]))
                pos = float(row[idx["pos"]]) * scale
                vel = float(row[idx["vel"]]) * scale if "vel" in idx else None
                time = float(row[idx["time"]]) if "time" in idx else frame * dt
            except (ValueError, IndexError) as exc:
                raise TrajectoryFormatError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not (math.isfinite(pos) and (vel is None or math.isfinite(vel))):
                raise TrajectoryFormatError(f"{path}:{lineno}: non-finite value")
            rows[vid].append((frame, time, lane, pos, vel, lineno))

    out: list[TrajectoryRecord] = []
    for vid in sorted(rows, key=_vid_key):
        track = rows[vid]
        for prev, cur in zip(track, track[1:]):
            if cur[0] <= prev[0]:
                raise TrajectoryFormatError(f"{path}:{cur[5]}: frames of vehicle {vid} are not increasing")
            if cur[0] != prev[0] + 1:
                raise TrajectoryFormatError(f"{path}:{cur[5]}: frames of vehicle {vid} are not consecutive")
        vels = [r[4] for r in track]
        if any(v is None for v in vels):
            vels = _central_difference([r[3] for r in track], dt)
        for (frame, time, lane, pos, _, _), vel in zip(track, vels):
            out.append(TrajectoryRecord(vid, frame, time, lane, pos, vel))
    return out


def _vid_key(vid: str):
    return (0, int(vid), "") if vid.lstrip("-").isdigit() else (1, 0, vid)


def group_by_vehicle(records: Iterable[TrajectoryRecord]) -> dict[str, list[TrajectoryRecord]]:
    out: dict[str, list[TrajectoryRecord]] = defaultdict(list)
    for r in records:
        out[r.vehicle_id].append(r)
    for v in out.values():
        v.sort(key=lambda r: r.frame)
    return dict(sorted(out.items(), key=lambda kv: _vid_key(kv[0])))


def build_frames(records: Iterable[TrajectoryRecord]) -> dict[int, dict[str, VehicleState]]:
    frames: dict[int, dict[str, VehicleState]] = defaultdict(dict)
    for r in records:
        frames[r.frame][r.vehicle_id] = r.state
    return frames


# --------------------------------------------------------------- labelling


@dataclass(frozen=True)
class BehaviorEvent:
    vehicle_id: str
    label: str
    anchor_frame: int


def label_behaviors(
    track: Sequence[TrajectoryRecord],
    horizon: int = HORIZON,
    lk_stride: int = 50,
    lk_min_run: int = 90,
) -> list[BehaviorEvent]:
    """Lane-change and lane-keep events of one vehicle.

    A change at frame ``f`` (lane differs at ``f+1``) yields an LCL/LCR event
    anchored at ``f``, provided ``horizon`` frames end there. Runs of at
    least ``lk_min_run`` frames in one lane yield LK events every
    ``lk_stride`` frames, starting ``lk_min_run`` frames into the run and
    staying ``horizon`` frames clear of a following change.
    """
    if len(track) < horizon + 1:
        return []
    vid = track[0].vehicle_id
    first = track[0].frame
    events = []
    run_start = 0
    for i in range(len(track) + 1):
        changed = i < len(track) - 1 and track[i + 1].lane != track[i].lane
        at_end = i == len(track) - 1
        if not (changed or at_end):
            continue
        run_len = i - run_start + 1
        if run_len >= lk_min_run:
            limit = i - horizon if changed else i
            j = run_start + lk_min_run - 1
            while j <= limit:
                events.append(BehaviorEvent(vid, "LK", track[j].frame))
                j += lk_stride
        if changed:
            f = track[i].frame
            if f - first >= horizon - 1:
                label = "LCL" if track[i + 1].lane < track[i].lane else "LCR"
                events.append(BehaviorEvent(vid, label, f))
            run_start = i + 1
        if at_end:
            break
    events.sort(key=lambda e: e.anchor_frame)
    return events


# -------------------------------------------------------------- extraction


@dataclass
class LabeledSample:
    """Sensing window (21 x 30) and characteristic window (4 x 30) with a label.

    Stacked, the two give the 25 x 30 network input.
    """

    vehicle_id: str
    anchor_frame: int
    label: str
    sensing: np.ndarray
    characteristics: np.ndarray
    fit_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.sensing, self.characteristics])

    def to_json(self) -> str:
        data = self.stacked
        return json.dumps(
            {
                "vehicle_id": self.vehicle_id,
                "anchor_frame": int(self.anchor_frame),
                "label": self.label,
                "shape": list(data.shape),
                "data": [float(x) for x in data.ravel()],
                "fit_errors": [float(x) for x in self.fit_errors],
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "LabeledSample":
        d = json.loads(line)
        data = np.array(d["data"], dtype=float).reshape(d["shape"])
        if data.shape != (STACKED_ROWS, HORIZON):
            raise ValueError(f"sample shape {data.shape} is not {STACKED_ROWS}x{HORIZON}")
        return cls(
            vehicle_id=str(d["vehicle_id"]),
            anchor_frame=int(d["anchor_frame"]),
            label=d["label"],
            sensing=data[:SENSING_ROWS],
            characteristics=data[SENSING_ROWS:],
            fit_errors=np.array(d.get("fit_errors", []), dtype=float),
        )


def write_corpus(samples: Iterable[LabeledSample], path) -> None:
    with Path(path).open("w") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


def read_corpus(path) -> list[LabeledSample]:
    with Path(path).open() as fh:
        return [LabeledSample.from_json(line) for line in fh if line.strip()]


def _slot_state(slot: str, target: VehicleState, nb: NeighborSet) -> tuple[float, float, float]:
    if slot == "target":
        return target.pos, target.vel, target.lane
    veh = getattr(nb, slot)
    if veh is not None:
        return veh.pos, veh.vel, veh.lane
    lane = target.lane + (-1 if slot.endswith("_l") else 1 if slot.endswith("_r") else 0)
    offset = VIRTUAL_LEADER_DISTANCE if slot.startswith("p_") else -VIRTUAL_LEADER_DISTANCE
    return target.pos + offset, target.vel, lane


def sensing_frame(target: VehicleState, nb: NeighborSet) -> np.ndarray:
    """Flatten the seven tracked vehicles to 21 values (pos, vel, lane each).

    Absent vehicles are virtual: 1000 m ahead (preceding) or behind
    (following) at the target's speed, in the lane they would occupy.
    """
    return np.array([v for slot in SLOT_ORDER for v in _slot_state(slot, target, nb)])


@dataclass
class ExtractionReport:
    emitted: int = 0
    dropped: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"emitted": self.emitted, "dropped": dict(sorted(self.dropped.items()))}


@dataclass(frozen=True)
class ExtractionConfig:
    horizon: int = HORIZON
    lk_stride: int = 50
    lk_min_run: int = 90
    n_lanes: Optional[int] = None
    clustering: bool = True
    dt: float = DT


def _stable_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode())


def extract_samples(
    records: Sequence[TrajectoryRecord],
    base: IdmParams = IdmParams(),
    mobil: MobilParams = MobilParams(),
    ga: GaConfig = GaConfig(),
    config: ExtractionConfig = ExtractionConfig(),
    events: Optional[Sequence[BehaviorEvent]] = None,
    estimator_kwargs: Optional[dict] = None,
) -> tuple[list[LabeledSample], ExtractionReport]:
    """Build labelled samples for every behaviour event.

    Each characteristic column ``k`` comes from an estimate over the
    ``horizon`` frames ending at window frame ``k``, so ``2*horizon - 1``
    frames of history are needed before the anchor. Samples lacking history
    or hitting a zero gap are dropped and counted in the report.
    """
    n = config.horizon
    tracks = group_by_vehicle(records)
    frames = build_frames(records)
    if events is None:
        events = [e for t in tracks.values() for e in label_behaviors(t, n, config.lk_stride, config.lk_min_run)]
    report = ExtractionReport()
    samples = []
    for ev in sorted(events, key=lambda e: (_vid_key(e.vehicle_id), e.anchor_frame)):
        track = tracks[ev.vehicle_id]
        by_frame = {r.frame: r for r in track}
        needed = range(ev.anchor_frame - 2 * n + 2, ev.anchor_frame + 1)
        if any(f not in by_frame for f in needed):
            report.dropped["short_history"] += 1
            continue
        try:
            sample = _extract_one(ev, frames, needed, base, mobil, ga, config, estimator_kwargs or {})
        except CollisionError:
            report.dropped["collision"] += 1
            continue
        samples.append(sample)
        report.emitted += 1
    return samples, report


def _extract_one(ev, frames, needed, base, mobil, ga, config, estimator_kwargs) -> LabeledSample:
    n = config.horizon
    states, neighbors, leaders = [], [], []
    for f in needed:
        frame = frames[f]
        target = frame[ev.vehicle_id]
        nb = identify_neighbors(frame, ev.vehicle_id, config.n_lanes)
        states.append(target)
        neighbors.append(nb)
        leaders.append(nb.p_old if nb.p_old is not None else VehicleState(target.pos + VIRTUAL_LEADER_DISTANCE, target.vel, target.lane))
    fv = np.array([s.vel for s in states])
    lv = np.array([s.vel for s in leaders])
    gap = np.array([l.pos - s.pos for l, s in zip(leaders, states)])
    if np.any(gap <= 0):
        raise CollisionError("non-positive gap in estimation history")

    est = OnlineEstimator(base, GaConfig(**{**ga.__dict__, "rng_seed": _stable_seed(ga.rng_seed, ev.vehicle_id, ev.anchor_frame) % (2**31)}), clustering=config.clustering, **estimator_kwargs)
    chars, errors = [], []
    for end, window in windows_from_trace(fv, lv, gap, n, config.dt):
        rec = est.step(window)
        th = rec.estimate
        ch = compute_characteristic(states[end], neighbors[end], (th.T, th.a), base, mobil, config.n_lanes)
        chars.append(ch.as_array())
        errors.append(th.fit_error)
    sensing = np.array([sensing_frame(states[k], neighbors[k]) for k in range(n - 1, 2 * n - 1)])
    return LabeledSample(
        vehicle_id=ev.vehicle_id,
        anchor_frame=ev.anchor_frame,
        label=ev.label,
        sensing=sensing.T.copy(),
        characteristics=np.array(chars).T.copy(),
        fit_errors=np.array(errors),
    )


# --------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SquareWaveSpec:
    """Planted square-wave IDM schedule behind a sinusoidal leader.

    ``T_levels`` alternate every ``half_period`` seconds; ``delta`` and ``a``
    are held constant unless ``a_levels`` is given.
    """

    T_levels: tuple[float, float] = (1.2, 1.6)
    a_levels: tuple[float, float] = (1.0, 1.0)
    delta: float = 4.0
    half_period: float = 40.0
    duration: float = 160.0
    leader_speed: float = 15.0
    leader_amplitude: float = 2.0
    leader_period: float = 12.0
    initial_gap: float = 30.0
    dt: float = DT


@dataclass
class SyntheticTrace:
    records: list[TrajectoryRecord]
    truth: np.ndarray  # (frames, 3): delta, T, a in force at each frame
    follower_id: str = "1"
    leader_id: str = "0"

    def columns(self):
        lead = [r for r in self.records if r.vehicle_id == self.leader_id]
        fol = [r for r in self.records if r.vehicle_id == self.follower_id]
        fv = np.array([r.vel for r in fol])
        lv = np.array([r.vel for r in lead])
        gap = np.array([l.pos - f.pos for l, f in zip(lead, fol)])
        return fv, lv, gap


def generate_synthetic_trajectory(spec: SquareWaveSpec, seed: int = 0, vel_noise: float = 0.0, base: IdmParams = IdmParams()) -> SyntheticTrace:
    """Leader/follower pair with a planted parameter schedule.

    Noise is zero-mean Gaussian on the reported velocities; reported
    positions integrate the noisy velocities.
    """
    if spec.duration < 30.0:
        raise ValueError("synthetic horizon must be at least 30 s")
    rng = np.random.default_rng(seed)
    dt = spec.dt
    n = int(round(spec.duration / dt))
    leader = []
    pos = spec.initial_gap
    for k in range(n):
        v = spec.leader_speed + spec.leader_amplitude * math.sin(2 * math.pi * k * dt / spec.leader_period)
        leader.append(VehicleState(pos, max(v, 0.0), 1))
        pos += max(v, 0.0) * dt
    n_switch = int(math.ceil(spec.duration / spec.half_period)) + 1
    schedule = []
    for i in range(n_switch):
        schedule.append((i * spec.half_period, base.with_theta((spec.delta, spec.T_levels[i % 2], spec.a_levels[i % 2]))))
    follower = simulate_following(schedule, leader, VehicleState(0.0, leader[0].vel, 1), dt)

    truth = np.empty((n, 3))
    for k in range(n):
        i = min(int((k * dt + 1e-9) // spec.half_period), n_switch - 1)
        truth[k] = (spec.delta, spec.T_levels[i % 2], spec.a_levels[i % 2])

    records = []
    for vid, track in (("0", leader), ("1", follower)):
        vel = np.array([s.vel for s in track])
        pos = np.array([s.pos for s in track])
        if vel_noise > 0:
            vel = vel + rng.normal(0.0, vel_noise, size=n)
            pos = pos[0] + np.concatenate([[0.0], np.cumsum(vel[:-1] * dt)])
        for k in range(n):
            records.append(TrajectoryRecord(vid, k, round(k * dt, 10), 1, float(pos[k]), float(vel[k])))
    return SyntheticTrace(records, truth)


@dataclass(frozen=True)
class CorpusConfig:
    n_vehicles: int = 400
    mix: tuple[float, float, float] = (0.3, 0.2, 0.5)
    n_lanes: int = 3
    pre_frames: int = 90
    post_frames: int = 10
    decision_threshold: float = 0.1
    max_attempts: int = 500
    scene_spacing: int = 200

    def __post_init__(self):
        if abs(sum(self.mix) - 1.0) > 1e-9 or any(m < 0 for m in self.mix):
            raise ValueError(f"behaviour mix must be non-negative and sum to 1, got {self.mix}")


@dataclass
class PlantedVehicle:
    vehicle_id: str
    label: str
    theta: tuple[float, float, float]
    anchor_frame: int


def planted_decision(params: IdmParams, mobil: MobilParams, target: VehicleState, nb: NeighborSet, n_lanes: int, threshold: float) -> str:
    """Behaviour a MOBIL driver with ``params`` picks in this frame."""
    best, best_inc = "LK", threshold
    for direction, label, lane in (("lcl", "LCL", target.lane - 1), ("lcr", "LCR", target.lane + 1)):
        if not lane_exists(lane, n_lanes):
            continue
        acc = lane_change_accels(params, target, nb, direction)
        if not mobil_safety(acc.at_N, mobil.b_safe):
            continue
        inc = mobil_incentive(acc, mobil.p)
        if inc > best_inc:
            best, best_inc = label, inc
    return best


class _Scene:
    """A short multi-lane scene around one designated target."""

    def __init__(self, rng: np.random.Generator, cfg: CorpusConfig, base: IdmParams, target_lane: int):
        self.cfg = cfg
        self.base = base
        self.theta = (float(rng.uniform(3.9, 4.1)), float(rng.uniform(0.8, 2.2)), float(rng.uniform(0.6, 2.5)))
        self.target_params = base.with_theta(self.theta)
        v_t = float(rng.uniform(14.0, 28.0))
        # vehicle: [pos, vel, lane, kind, sine amp, sine period, phase, mean speed]
        self.vehicles: dict[str, list] = {}
        self.vehicles["T"] = [0.0, v_t, target_lane, "idm"]
        v_lead = float(rng.uniform(8.0, v_t + 2.0))
        self.vehicles["P"] = [float(rng.uniform(12.0, 70.0)), v_lead, target_lane, "sine", float(rng.uniform(0.3, 2.0)), float(rng.uniform(6.0, 15.0)), float(rng.uniform(0, 2 * math.pi)), v_lead]
        if rng.random() < 0.7:
            self.vehicles["F"] = [-float(rng.uniform(15.0, 60.0)), float(rng.uniform(12.0, 28.0)), target_lane, "idm"]
        for side, lane in (("L", target_lane - 1), ("R", target_lane + 1)):
            if not 1 <= lane <= cfg.n_lanes:
                continue
            if rng.random() < 0.7:
                v = float(rng.uniform(10.0, 32.0))
                self.vehicles["P" + side] = [float(rng.uniform(5.0, 110.0)), v, lane, "sine", float(rng.uniform(0.0, 1.0)), 10.0, float(rng.uniform(0, 2 * math.pi)), v]
            if rng.random() < 0.7:
                self.vehicles["F" + side] = [-float(rng.uniform(5.0, 80.0)), float(rng.uniform(10.0, 32.0)), lane, "idm"]
        self.k = 0

    def state(self, key) -> VehicleState:
        v = self.vehicles[key]
        return VehicleState(v[0], v[1], v[2])

    def frame(self) -> dict[str, VehicleState]:
        return {k: self.state(k) for k in self.vehicles}

    def step(self, dt: float) -> None:
        frame = self.frame()
        new = {}
        for key, v in self.vehicles.items():
            if v[3] == "sine":
                t = (self.k + 1) * dt
                vel = max(0.0, v[7] + v[4] * math.sin(2 * math.pi * t / v[5] + v[6]))
                new[key] = (v[0] + v[1] * dt, vel)
                continue
            ahead = [s for k2, s in frame.items() if k2 != key and s.lane == v[2] and s.pos > v[0]]
            me = frame[key]
            leader = min(ahead, key=lambda s: s.pos) if ahead else VehicleState(v[0] + VIRTUAL_LEADER_DISTANCE, v[1], v[2])
            params = self.target_params if key == "T" else self.base
            acc = idm_acceleration(params, me.vel, leader.pos - me.pos, me.vel - leader.vel)
            new[key] = (v[0] + v[1] * dt, max(0.0, v[1] + acc * dt))
        for key, (p, vel) in new.items():
            self.vehicles[key][0] = p
            self.vehicles[key][1] = vel
        self.k += 1
        # keep lanes collision-free at the point-vehicle level
        by_lane = defaultdict(list)
        for s in self.vehicles.values():
            by_lane[s[2]].append(s[0])
        for ps in by_lane.values():
            ps.sort()
            if any(b - a <= 0.0 for a, b in zip(ps, ps[1:])):
                raise CollisionError("scene collision")


def _valid_lanes(label: str, n_lanes: int) -> list[int]:
    if label == "LCL":
        return list(range(2, n_lanes + 1))
    if label == "LCR":
        return list(range(1, n_lanes))
    return list(range(1, n_lanes + 1))


def generate_scenes(
    cfg: CorpusConfig = CorpusConfig(),
    seed: int = 0,
    base: IdmParams = IdmParams(),
    mobil: MobilParams = MobilParams(),
    dt: float = DT,
) -> tuple[list[TrajectoryRecord], list[PlantedVehicle]]:
    """Scripted multi-lane scenes, one designated target per scene.

    Each target's behaviour class is drawn from ``cfg.mix``; scenes are then
    re-drawn until a MOBIL driver with the target's planted parameters makes
    exactly that choice at the decision frame, so labels always follow from
    the planted incentives. Scenes occupy disjoint frame ranges.
    """
    rng = np.random.default_rng(seed)
    labels = rng.choice(3, size=cfg.n_vehicles, p=np.asarray(cfg.mix, dtype=float))
    records: list[TrajectoryRecord] = []
    planted: list[PlantedVehicle] = []
    for i, li in enumerate(labels):
        label = LABELS[int(li)]
        scene = None
        for _ in range(cfg.max_attempts):
            lane = int(rng.choice(_valid_lanes(label, cfg.n_lanes)))
            scene = _Scene(rng, cfg, base, lane)
            hist = _run_scene(scene, cfg, mobil, label, dt)
            if hist is not None:
                break
        else:
            raise RuntimeError(f"could not script a {label} scene in {cfg.max_attempts} attempts")
        offset = i * cfg.scene_spacing
        names = {key: f"{i}{key}" if key != "T" else str(i) for key in scene.vehicles}
        for k, frame in enumerate(hist):
            for key, s in frame.items():
                f = offset + k
                records.append(TrajectoryRecord(names[key], f, round(f * dt, 10), s.lane, s.pos, s.vel))
        planted.append(PlantedVehicle(str(i), label, scene.theta, offset + cfg.pre_frames - 1))
    records.sort(key=lambda r: (_vid_key(r.vehicle_id), r.frame))
    return records, planted


def _run_scene(scene: _Scene, cfg: CorpusConfig, mobil: MobilParams, label: str, dt: float):
    hist = [scene.frame()]
    try:
        for _ in range(cfg.pre_frames - 1):
            scene.step(dt)
            hist.append(scene.frame())
        frame = hist[-1]
        nb = identify_neighbors(frame, "T", cfg.n_lanes)
        decision = planted_decision(scene.target_params, mobil, frame["T"], nb, cfg.n_lanes, cfg.decision_threshold)
        if decision != label:
            return None
        if label != "LK":
            scene.vehicles["T"][2] += -1 if label == "LCL" else 1
        n_post = cfg.post_frames if label != "LK" else 0
        for _ in range(n_post):
            scene.step(dt)
            hist.append(scene.frame())
    except CollisionError:
        return None
    return hist


def generate_synthetic_corpus(
    cfg: CorpusConfig = CorpusConfig(),
    seed: int = 0,
    base: IdmParams = IdmParams(),
    mobil: MobilParams = MobilParams(),
    ga: GaConfig = GaConfig(),
    extraction: Optional[ExtractionConfig] = None,
    estimator_kwargs: Optional[dict] = None,
) -> tuple[list[LabeledSample], list[TrajectoryRecord], list[PlantedVehicle], ExtractionReport]:
    """Scenes plus extracted samples for the designated targets."""
    records, planted = generate_scenes(cfg, seed, base, mobil)
    extraction = extraction or ExtractionConfig(n_lanes=cfg.n_lanes)
    events = [BehaviorEvent(p.vehicle_id, p.label, p.anchor_frame) for p in planted]
    samples, report = extract_samples(records, base, mobil, ga, extraction, events, estimator_kwargs)
    return samples, records, planted, report
