import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivechar import traffic_model as tm
from drivechar.traffic_model import (
    CollisionError,
    IdmParams,
    MobilAccels,
    MobilParams,
    NeighborSet,
    VehicleState,
    compute_characteristic,
    idm_acceleration,
    idm_desired_gap,
    idm_step,
    identify_neighbors,
    mobil_incentive,
    mobil_safety,
    simulate_following,
)

P = IdmParams(delta=4.0, T=1.5, a=1.0, b=1.5, v0=30.0, s0=2.0)


def steady_gap(params, v):
    # fixed point of the IDM at dv = 0: 1 - (v/v0)^delta = (s*/gap)^2
    return (params.s0 + v * params.T) / math.sqrt(1.0 - (v / params.v0) ** params.delta)


# -- desired gap / acceleration --------------------------------------------


def test_desired_gap_examples():
    assert idm_desired_gap(P, 0.0, 0.0) == 2.0
    assert idm_desired_gap(P, 20.0, 0.0) == 32.0
    # 32 + 100 / (2 sqrt 1.5); the shorter 42.8248 figure leaves out v*T
    assert idm_desired_gap(P, 20.0, 5.0) == pytest.approx(32 + 100 / (2 * math.sqrt(1.5)), abs=1e-9)
    assert idm_desired_gap(P, 20.0, 5.0) == pytest.approx(72.8248, abs=1e-4)


def test_desired_gap_not_clamped_below_s0():
    assert idm_desired_gap(P, 10.0, -10.0) < P.s0


def test_acceleration_examples():
    assert abs(idm_acceleration(P, 0.0, 1e9, 0.0) - 1.0) <= 1e-9
    acc = idm_acceleration(P, 30.0, 1e9, 0.0)
    assert -1e-9 < acc < 0.0
    s = 32 + 100 / (2 * math.sqrt(1.5))
    oracle = 1.0 * (1 - (2 / 3) ** 4 - (s / 30) ** 2)
    assert idm_acceleration(P, 20.0, 30.0, 5.0) == pytest.approx(oracle, abs=1e-9)
    assert idm_acceleration(P, 20.0, 30.0, 5.0) == pytest.approx(-5.0903, abs=1e-4)


@pytest.mark.parametrize("gap", [0.0, -1.0])
def test_acceleration_rejects_nonpositive_gap(gap):
    with pytest.raises(CollisionError):
        idm_acceleration(P, 10.0, gap, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        IdmParams(a=0.0)
    with pytest.raises(ValueError):
        IdmParams(T=-1.0)


# -- stepping ----------------------------------------------------------------


def test_step_zero_acceleration():
    p = IdmParams(v0=10.0)
    # v == v0 and an astronomically distant leader: both terms cancel exactly
    out = idm_step(p, VehicleState(0.0, 10.0, 1), VehicleState(1e300, 10.0, 1), 0.1)
    assert out.pos == 1.0 and out.vel == 10.0 and out.lane == 1


def test_step_velocity_floor(monkeypatch):
    monkeypatch.setattr(tm, "idm_acceleration", lambda *a: -1.0)
    out = idm_step(P, VehicleState(0.0, 0.05, 1), VehicleState(50.0, 0.0, 1), 0.1)
    assert out.vel == 0.0
    assert math.copysign(1.0, out.vel) == 1.0


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        idm_step(P, VehicleState(0.0, 1.0, 1), VehicleState(10.0, 1.0, 1), 0.0)


def test_chained_steady_state():
    v = 15.0
    leader = VehicleState(28.0, v, 1)
    f = VehicleState(0.0, v, 1)
    for _ in range(300):
        nxt = idm_step(P, f, leader, 0.1)
        leader = VehicleState(leader.pos + v * 0.1, v, 1)
        f = nxt
    gap = leader.pos - f.pos
    assert abs(idm_acceleration(P, f.vel, gap, f.vel - v)) < 1e-3
    assert gap == pytest.approx(steady_gap(P, v), abs=0.05)


def _leader(v, n, start=30.0, dt=0.1):
    return [VehicleState(start + v * k * dt, v, 1) for k in range(n)]


def test_simulate_free_road_converges_monotonically():
    # leader faster than v0: the follower settles at v0 from below
    leader = _leader(35.0, 1200, start=300.0)
    out = simulate_following([(0.0, P)], leader, VehicleState(0.0, 5.0, 1))
    vel = np.array([s.vel for s in out])
    assert len(out) == len(leader)
    assert np.all(np.diff(vel) >= 0)
    assert vel[-1] == pytest.approx(min(P.v0, 35.0), abs=0.1)


def test_simulate_converges_to_slow_leader():
    # behind a slower leader the speed overshoots slightly before settling
    leader = _leader(12.0, 600)
    out = simulate_following([(0.0, P)], leader, VehicleState(0.0, 5.0, 1))
    vel = np.array([s.vel for s in out])
    assert vel[-1] == pytest.approx(min(P.v0, 12.0), abs=1e-3)
    assert np.all(np.abs(np.diff(vel[-100:])) < 1e-3)


def test_simulate_square_wave_gaps():
    v, dt = 15.0, 0.1
    p1, p2 = IdmParams(T=1.0), IdmParams(T=2.0)
    schedule = [(0.0, p1), (15.0, p2), (30.0, p1), (45.0, p2)]
    leader = _leader(v, 600, start=steady_gap(p1, v))
    out = simulate_following(schedule, leader, VehicleState(0.0, v, 1), dt)
    gaps = np.array([l.pos - f.pos for l, f in zip(leader, out)])
    for k_end, p in ((149, p1), (299, p2), (449, p1), (599, p2)):
        other = p2 if p is p1 else p1
        assert gaps[k_end] == pytest.approx(steady_gap(p, v), abs=2.0)
        assert abs(gaps[k_end] - steady_gap(p, v)) < 0.15 * abs(gaps[k_end] - steady_gap(other, v))
    assert steady_gap(p2, v) - steady_gap(p1, v) > 10


def test_simulate_errors():
    leader = _leader(10.0, 10)
    with pytest.raises(ValueError):
        simulate_following([], leader, VehicleState(0.0, 10.0, 1))
    with pytest.raises(ValueError):
        simulate_following([(0.0, P)], leader, VehicleState(50.0, 10.0, 1))


def test_simulate_collision_reports_step():
    # a leader that teleports behind the follower
    leader = _leader(10.0, 5)
    leader[3] = VehicleState(-5.0, 0.0, 1)
    with pytest.raises(CollisionError) as info:
        simulate_following([(0.0, P)], leader, VehicleState(0.0, 10.0, 1))
    assert info.value.step == 3


# -- neighbours --------------------------------------------------------------


def test_neighbors_single_vehicle():
    nb = identify_neighbors({"t": VehicleState(0.0, 10.0, 2)}, "t", n_lanes=3)
    assert all(getattr(nb, k) is None for k in ("p_old", "f_old", "p_new_l", "f_new_l", "p_new_r", "f_new_r"))


def test_neighbors_leftmost_lane():
    frame = {"t": VehicleState(0.0, 10.0, 1)}
    for i, lane in enumerate((1, 2, 2, 3)):
        frame[i] = VehicleState(10.0 * (i - 1.5), 10.0, lane)
    nb = identify_neighbors(frame, "t", n_lanes=3)
    assert nb.p_new_l is None and nb.f_new_l is None


SEVEN = {
    "t": VehicleState(100.0, 20.0, 2),
    "a": VehicleState(130.0, 20.0, 2),
    "b": VehicleState(160.0, 20.0, 2),
    "c": VehicleState(80.0, 20.0, 2),
    "d": VehicleState(110.0, 20.0, 1),
    "e": VehicleState(70.0, 20.0, 1),
    "f": VehicleState(95.0, 20.0, 3),
}


def _brute(frame, tid, lane, ahead):
    t = frame[tid]
    cands = [(v.pos - t.pos if ahead else t.pos - v.pos, k) for k, v in frame.items()
             if k != tid and v.lane == lane and ((v.pos > t.pos) if ahead else (v.pos <= t.pos))]
    return frame[min(cands)[1]] if cands else None


def test_neighbors_seven_vehicle_fixture():
    nb = identify_neighbors(SEVEN, "t", n_lanes=3)
    assert nb.p_old is SEVEN["a"]
    for slot, lane, ahead in (("p_old", 2, True), ("f_old", 2, False), ("p_new_l", 1, True),
                              ("f_new_l", 1, False), ("p_new_r", 3, True), ("f_new_r", 3, False)):
        assert getattr(nb, slot) is _brute(SEVEN, "t", lane, ahead), slot


# -- MOBIL ---------------------------------------------------------------------


def test_incentive_examples():
    assert mobil_incentive(MobilAccels(0.3, 0.3, -0.2, -0.2, 0.1, 0.1), 0.35) == 0.0
    for p in (0.0, 0.35, 1.0):
        assert mobil_incentive(MobilAccels(a_T=0.2, at_T=1.2), p) == pytest.approx(1.0, abs=1e-12)
    inc = mobil_incentive(MobilAccels(a_T=0.2, at_T=0.5, a_N=0.0, at_N=-0.3, a_O=0.0, at_O=0.1), 0.35)
    assert inc == pytest.approx(0.23, abs=1e-9)


def test_safety_examples():
    assert mobil_safety(0.0, 4.0)
    assert mobil_safety(-4.0, 4.0)
    assert not mobil_safety(-4.01, 4.0)


def test_characteristic_empty_neighbours_reduce_to_own_gain():
    target = VehicleState(0.0, 20.0, 2)
    nb = NeighborSet(p_old=VehicleState(25.0, 15.0, 2))
    ch = compute_characteristic(target, nb, (1.2, 1.4), IdmParams(), MobilParams(), n_lanes=3)
    p = IdmParams(T=1.2, a=1.4)
    gain = idm_acceleration(p, 20.0, tm.VIRTUAL_LEADER_DISTANCE, 0.0) - idm_acceleration(p, 20.0, 25.0, 5.0)
    assert ch.i_lcl == pytest.approx(gain, abs=1e-12)
    assert ch.i_lcr == pytest.approx(gain, abs=1e-12)
    assert (ch.T, ch.a) == (1.2, 1.4)


def test_characteristic_blocked_lane_gives_positive_left_incentive():
    target = VehicleState(0.0, 25.0, 2)
    nb = NeighborSet(p_old=VehicleState(20.0, 10.0, 2), p_new_r=VehicleState(15.0, 10.0, 3))
    ch = compute_characteristic(target, nb, (1.5, 1.0), IdmParams(), MobilParams(), n_lanes=3)
    assert ch.i_lcl > 0
    assert ch.i_lcl > ch.i_lcr


def test_characteristic_leftmost_sentinel():
    ch = compute_characteristic(VehicleState(0.0, 20.0, 1), NeighborSet(), (1.5, 1.0), IdmParams(), MobilParams(), n_lanes=3)
    assert ch.i_lcl == tm.MISSING_LANE_INCENTIVE == -100.0
    assert ch.i_lcr != tm.MISSING_LANE_INCENTIVE
    ch = compute_characteristic(VehicleState(0.0, 20.0, 3), NeighborSet(), (1.5, 1.0), IdmParams(), MobilParams(), n_lanes=3)
    assert ch.i_lcr == -100.0


def test_characteristic_uses_estimates_for_neighbours():
    target = VehicleState(0.0, 20.0, 2)
    nb = NeighborSet(f_new_l=VehicleState(-20.0, 20.0, 1), f_old=VehicleState(-25.0, 20.0, 2))
    base = IdmParams()
    a = compute_characteristic(target, nb, (1.0, 1.0), base, MobilParams(), 3)
    b = compute_characteristic(target, nb, (2.0, 1.0), base, MobilParams(), 3)
    assert a.i_lcl != b.i_lcl


# -- properties ---------------------------------------------------------------

params_st = st.builds(
    IdmParams,
    delta=st.floats(3.8, 4.2),
    T=st.floats(0.1, 5.0),
    a=st.floats(0.1, 9.0),
    b=st.floats(0.5, 5.0),
    v0=st.floats(10.0, 40.0),
    s0=st.floats(0.5, 5.0),
)


@given(params_st)
def test_free_road_limit(p):
    assert idm_acceleration(p, 0.0, 1e12, 0.0) == pytest.approx(p.a, rel=1e-6)


# s* grows with v only while dv >= 0 (a large closing-away dv makes s* shrink)
@given(params_st, st.floats(0.0, 30.0), st.floats(0.1, 10.0), st.floats(5.0, 100.0), st.floats(0.0, 5.0))
def test_monotonicity(p, v, dvel, gap, dv):
    assert idm_acceleration(p, v + dvel, gap, dv) < idm_acceleration(p, v, gap, dv)
    assert idm_acceleration(p, v, gap + dvel, dv) > idm_acceleration(p, v, gap, dv)


@settings(max_examples=8, deadline=None)
@given(params_st, st.floats(0.2, 0.95), st.floats(5.0, 60.0), st.floats(0.0, 1.0))
def test_crash_free_ten_thousand_steps(p, frac, gap0, vfrac):
    v = frac * p.v0
    leader = _leader(v, 10_000, start=gap0)
    out = simulate_following([(0.0, p)], leader, VehicleState(0.0, vfrac * p.v0, 1))
    gaps = np.array([l.pos for l in leader]) - np.array([f.pos for f in out])
    assert gaps.min() > 0


acc = st.floats(-10.0, 10.0)


@given(st.tuples(acc, acc, acc, acc, acc, acc), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_incentive_linear_in_p(t, p1, p2):
    a = MobilAccels(*t)
    lhs = mobil_incentive(a, p1) + mobil_incentive(a, p2) - mobil_incentive(a, 0.0)
    assert lhs == pytest.approx(mobil_incentive(a, p1 + p2), abs=1e-12)
