import math
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivechar.dataset import (
    CSV_HEADER,
    BehaviorEvent,
    STACKED_ROWS,
    CorpusConfig,
    ExtractionConfig,
    LabeledSample,
    SquareWaveSpec,
    TrajectoryFormatError,
    TrajectoryRecord,
    extract_samples,
    generate_scenes,
    generate_synthetic_corpus,
    generate_synthetic_trajectory,
    label_behaviors,
    load_trajectories,
    read_corpus,
    sensing_frame,
    write_corpus,
    write_trajectories,
)
from drivechar.estimation import GaConfig, OnlineEstimator, windows_from_trace
from drivechar.evaluation import fitting_error_buckets
from drivechar.traffic_model import IdmParams, MobilParams, NeighborSet, VehicleState

SMALL_GA = GaConfig(population_size=12, generations=6)


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


# -- loading ----------------------------------------------------------------------


def test_load_empty_file_with_header(tmp_path):
    assert load_trajectories(write(tmp_path / "t.csv", ",".join(CSV_HEADER) + "\n")) == []


def test_load_empty_file_without_header(tmp_path):
    with pytest.raises(TrajectoryFormatError):
        load_trajectories(write(tmp_path / "t.csv", ""))


def test_load_ngsim_feet(tmp_path):
    p = write(tmp_path / "n.csv", "Vehicle_ID,Frame_ID,Lane_ID,Local_Y,v_Vel\n7,1,2,100,10\n")
    (r,) = load_trajectories(p, "ngsim_feet")
    assert r.pos == pytest.approx(30.48, abs=1e-12)
    assert r.vel == pytest.approx(3.048, abs=1e-12)
    assert (r.vehicle_id, r.frame, r.lane) == ("7", 1, 2)


def test_load_central_difference(tmp_path):
    p = write(tmp_path / "t.csv", "vehicle_id,frame,lane,pos_m\n1,0,1,0.0\n1,1,1,1.0\n1,2,1,3.0\n")
    vel = [r.vel for r in load_trajectories(p)]
    # one-sided at the ends, centred inside: (1-0)/.1, (3-0)/.2, (3-1)/.1
    assert vel == pytest.approx([10.0, 15.0, 20.0], abs=1e-12)


def test_load_malformed_row_reports_line(tmp_path):
    p = write(tmp_path / "t.csv", ",".join(CSV_HEADER) + "\n1,0,0.0,1,0.0,1.0\n1,1,0.1,1,abc,1.0\n")
    with pytest.raises(TrajectoryFormatError, match=":3:"):
        load_trajectories(p)


@pytest.mark.parametrize("frames", [(0, 2), (1, 0), (0, 0)])
def test_load_rejects_bad_frame_order(tmp_path, frames):
    body = "".join(f"1,{f},0.0,1,{i}.0,1.0\n" for i, f in enumerate(frames))
    with pytest.raises(TrajectoryFormatError):
        load_trajectories(write(tmp_path / "t.csv", ",".join(CSV_HEADER) + "\n" + body))


def test_load_missing_columns(tmp_path):
    with pytest.raises(TrajectoryFormatError):
        load_trajectories(write(tmp_path / "t.csv", "vehicle_id,frame\n1,0\n"))


def test_load_unknown_unit_mode(tmp_path):
    with pytest.raises(ValueError):
        load_trajectories(write(tmp_path / "t.csv", ",".join(CSV_HEADER) + "\n"), "imperial")


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), finite, finite), min_size=1, max_size=20), st.integers(0, 10**6))
def test_trajectory_round_trip(tmp_path_factory, rows, start):
    recs = [TrajectoryRecord("42", start + k, (start + k) * 0.1, lane, pos, vel) for k, (lane, pos, vel) in enumerate(rows)]
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_trajectories(recs, path)
    assert load_trajectories(path) == recs


# -- labelling -------------------------------------------------------------------------


def track(lanes, vid="v"):
    return [TrajectoryRecord(vid, k, k * 0.1, lane, 10.0 * k, 10.0) for k, lane in enumerate(lanes)]


def test_label_constant_lane_only_lk():
    ev = label_behaviors(track([2] * 300))
    assert ev and {e.label for e in ev} == {"LK"}
    assert [e.anchor_frame for e in ev] == [89, 139, 189, 239, 289]


def test_label_left_change():
    ev = label_behaviors(track([3] * 40 + [2] * 20))
    assert [(e.label, e.anchor_frame) for e in ev] == [("LCL", 39)]


def test_label_right_change():
    ev = label_behaviors(track([1] * 40 + [2] * 20))
    assert [(e.label, e.anchor_frame) for e in ev] == [("LCR", 39)]


def test_label_double_change_overlapping_windows():
    ev = label_behaviors(track([3] * 40 + [2] * 10 + [1] * 10))
    assert [(e.label, e.anchor_frame) for e in ev] == [("LCL", 39), ("LCL", 49)]
    assert ev[1].anchor_frame - ev[0].anchor_frame < 30


def test_label_needs_history():
    assert label_behaviors(track([3] * 10 + [2] * 30)) == []
    assert label_behaviors(track([3] * 30)) == []


def test_label_lk_stays_clear_of_change():
    ev = label_behaviors(track([2] * 200 + [1] * 5))
    lk = [e.anchor_frame for e in ev if e.label == "LK"]
    assert lk == [89, 139]  # 189 would overlap the 30 frames before the change at 199


# -- sensing frame ---------------------------------------------------------------------------


def test_sensing_frame_virtual_vehicles():
    t = VehicleState(50.0, 20.0, 2)
    x = sensing_frame(t, NeighborSet(p_old=VehicleState(70.0, 18.0, 2)))
    assert x.shape == (21,)
    assert x[:3].tolist() == [50.0, 20.0, 2]
    assert x[12:15].tolist() == [70.0, 18.0, 2]  # p_old
    assert x[3:6].tolist() == [-950.0, 20.0, 2]  # f_old virtual
    assert x[15:18].tolist() == [1050.0, 20.0, 1]  # p_new_l virtual


# -- ten-vehicle NGSIM fixture ---------------------------------------------------------------------


def ngsim_fixture(path: Path) -> Path:
    """Two platoons of five in lanes 1 and 2; vehicle 7 moves left at frame 119."""
    n = 160
    lines = ["Vehicle_ID,Frame_ID,Lane_ID,Local_Y,v_Vel"]
    for lane, base_pos, speed in ((1, 0.0, 40.0), (2, 10.0, 45.0)):
        for j in range(5):
            vid = (lane - 1) * 5 + j + 1
            for f in range(1, n + 1):
                t = f * 0.1
                v = speed + 2.0 * math.sin(t + vid)
                pos = base_pos + 120.0 * j + speed * t - 2.0 * math.cos(t + vid)
                ln = lane
                if vid == 7 and f > 119:
                    ln = 1
                lines.append(f"{vid},{f},{ln},{pos + (60.0 if vid == 7 and f > 119 else 0.0):.3f},{v:.3f}")
    return write(path, "\n".join(lines) + "\n")


def test_ngsim_fixture_extraction_shapes(tmp_path):
    recs = load_trajectories(ngsim_fixture(tmp_path / "ng.csv"), "ngsim_feet")
    assert len({r.vehicle_id for r in recs}) == 10
    samples, report = extract_samples(recs, ga=SMALL_GA, config=ExtractionConfig(lk_stride=100))
    assert samples and report.emitted == len(samples)
    assert all(s.stacked.shape == (STACKED_ROWS, 30) for s in samples)
    assert Counter(s.label for s in samples)["LCL"] == 1


# -- synthetic trajectories --------------------------------------------------------------------------


def test_synthetic_trajectory_truth_and_shape():
    spec = SquareWaveSpec(T_levels=(1.0, 2.0), half_period=15.0, duration=60.0)
    tr = generate_synthetic_trajectory(spec, 0)
    assert tr.truth.shape == (600, 3)
    assert tr.truth[149, 1] == 1.0 and tr.truth[150, 1] == 2.0 and tr.truth[300, 1] == 1.0
    fv, lv, gap = tr.columns()
    assert len(fv) == len(lv) == len(gap) == 600 and gap.min() > 0


def test_synthetic_requires_thirty_seconds():
    with pytest.raises(ValueError):
        generate_synthetic_trajectory(SquareWaveSpec(duration=20.0))


def test_constant_params_recovered():
    spec = SquareWaveSpec(T_levels=(1.7, 1.7), a_levels=(1.3, 1.3), half_period=1e9, duration=30.0)
    fv, lv, gap = generate_synthetic_trajectory(spec, 1).columns()
    est = OnlineEstimator(IdmParams(), GaConfig())
    Ts = np.array([est.step(w).estimate.T for _, w in windows_from_trace(fv, lv, gap)])
    assert np.mean(np.abs(Ts - 1.7) <= 0.1) >= 0.9


@pytest.mark.parametrize("clustering", [True, False])
def test_square_wave_plateaus_recovered(clustering):
    spec = SquareWaveSpec(T_levels=(1.0, 2.0), half_period=15.0, duration=60.0)
    fv, lv, gap = generate_synthetic_trajectory(spec, 0).columns()
    est = OnlineEstimator(IdmParams(), GaConfig(), clustering=clustering)
    rows = np.array([(end, est.step(w).estimate.T) for end, w in windows_from_trace(fv, lv, gap)])
    for lo, level in ((100, 1.0), (250, 2.0), (400, 1.0), (550, 2.0)):
        m = (rows[:, 0] >= lo) & (rows[:, 0] < lo + 50)
        assert np.median(rows[m, 1]) == pytest.approx(level, abs=0.1)


@pytest.mark.xfail(strict=True, reason=(
    "velocity noise of 0.1 m/s becomes ~1.4 m/s^2 of forward-difference acceleration "
    "noise at dt = 0.1 s, so every window's mean absolute fit error is ~1 m/s^2"
))
def test_noisy_velocity_bucket_fraction():
    spec = SquareWaveSpec(T_levels=(1.5, 1.5), half_period=1e9, duration=30.0)
    fv, lv, gap = generate_synthetic_trajectory(spec, 0, vel_noise=0.1).columns()
    est = OnlineEstimator(IdmParams(), GaConfig())
    errs = [est.step(w).estimate.fit_error for _, w in windows_from_trace(fv, lv, gap)]
    assert fitting_error_buckets(errs)["fractions"][0] >= 0.9


def test_noise_floor_matches_analysis():
    # the unattainable case above, quantified: E|N(0, s)| with s = 0.1*sqrt(2)/0.1
    spec = SquareWaveSpec(T_levels=(1.5, 1.5), half_period=1e9, duration=30.0)
    fv, lv, gap = generate_synthetic_trajectory(spec, 0, vel_noise=0.1).columns()
    est = OnlineEstimator(IdmParams(), GaConfig(population_size=20, generations=10))
    errs = [est.step(w).estimate.fit_error for _, w in list(windows_from_trace(fv, lv, gap))[:40]]
    expected = math.sqrt(2) * math.sqrt(2 / math.pi)
    assert np.mean(errs) == pytest.approx(expected, rel=0.35)


# -- synthetic corpus -------------------------------------------------------------------------------


def test_corpus_all_lane_keep():
    _, planted = generate_scenes(CorpusConfig(n_vehicles=30, mix=(0.0, 0.0, 1.0)), seed=3)
    assert {p.label for p in planted} == {"LK"}


def test_corpus_mix_multinomial_band():
    mix = (0.15, 0.05, 0.80)
    n = 400
    _, planted = generate_scenes(CorpusConfig(n_vehicles=n, mix=mix), seed=11)
    counts = Counter(p.label for p in planted)
    for label, p in zip(("LCL", "LCR", "LK"), mix):
        assert abs(counts[label] - n * p) <= 2.576 * math.sqrt(n * p * (1 - p)), label


def test_corpus_mix_validation():
    with pytest.raises(ValueError):
        CorpusConfig(mix=(0.5, 0.5, 0.5))


def test_planted_labels_follow_lane_changes():
    recs, planted = generate_scenes(CorpusConfig(n_vehicles=30), seed=5)
    by_vid = {}
    for r in recs:
        by_vid.setdefault(r.vehicle_id, {})[r.frame] = r.lane
    for p in planted:
        lanes = by_vid[p.vehicle_id]
        before, after = lanes[p.anchor_frame], lanes.get(p.anchor_frame + 1, lanes[p.anchor_frame])
        expect = {"LCL": before - 1, "LCR": before + 1, "LK": before}[p.label]
        assert after == expect


@pytest.fixture(scope="module")
def small_corpus():
    cfg = CorpusConfig(n_vehicles=12)
    return generate_synthetic_corpus(cfg, seed=2, ga=GaConfig(population_size=30, generations=25))


def test_corpus_counts_equal_planted(small_corpus):
    samples, _, planted, report = small_corpus
    assert report.emitted == len(samples) == len(planted)
    assert Counter(s.label for s in samples) == Counter(p.label for p in planted)


def test_corpus_deterministic(small_corpus):
    samples, *_ = small_corpus
    again, *_ = generate_synthetic_corpus(CorpusConfig(n_vehicles=12), seed=2, ga=GaConfig(population_size=30, generations=25))
    assert [s.to_json() for s in samples] == [s.to_json() for s in again]


def test_sample_windows_contiguous_and_before_change(small_corpus):
    samples, records, planted, _ = small_corpus
    pos = {(r.vehicle_id, r.frame): r for r in records}
    for s in samples:
        frames = range(s.anchor_frame - 29, s.anchor_frame + 1)
        assert s.sensing[0].tolist() == [pos[(s.vehicle_id, f)].pos for f in frames]
        assert np.all(s.sensing[2] == s.sensing[2][0])  # target lane constant inside the window
        if s.label != "LK":
            assert pos[(s.vehicle_id, s.anchor_frame + 1)].lane != pos[(s.vehicle_id, s.anchor_frame)].lane


def test_planted_truth_recovery(small_corpus):
    samples, _, planted, _ = small_corpus
    truth = {p.vehicle_id: p.theta[1] for p in planted}
    err = np.mean([np.abs(s.characteristics[0] - truth[s.vehicle_id]).mean() for s in samples])
    assert err <= 0.15


def test_corpus_jsonl_round_trip(small_corpus, tmp_path):
    samples, *_ = small_corpus
    write_corpus(samples, tmp_path / "c.jsonl")
    back = read_corpus(tmp_path / "c.jsonl")
    assert [s.to_json() for s in back] == [s.to_json() for s in samples]
    assert all(s.stacked.shape == (STACKED_ROWS, 30) for s in back)


def test_sample_shape_validated():
    s = LabeledSample("1", 5, "LK", np.zeros((21, 30)), np.zeros((4, 30)))
    bad = s.to_json().replace('"shape": [25, 30]', '"shape": [30, 25]')
    with pytest.raises(ValueError):
        LabeledSample.from_json(bad)


def test_extraction_drops_short_history():
    recs, planted = generate_scenes(CorpusConfig(n_vehicles=1, mix=(1.0, 0.0, 0.0)), seed=0)
    ev = [BehaviorEvent(planted[0].vehicle_id, "LCL", 40)]
    samples, report = extract_samples(recs, IdmParams(), MobilParams(), SMALL_GA, ExtractionConfig(n_lanes=3), ev)
    assert samples == [] and report.dropped["short_history"] == 1
