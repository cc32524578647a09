"""IDM car-following dynamics and MOBIL lane-change incentives.

Everything here is a pure function of its arguments. Vehicles are point
masses: the gap between two vehicles is the difference of their longitudinal
positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

# Incentive reported for a lane that does not exist.
MISSING_LANE_INCENTIVE = -100.0
# Distance at which an absent preceding vehicle is placed.
VIRTUAL_LEADER_DISTANCE = 1.0e3
# Hypothetical (post-relocation) gaps are floored here instead of failing.
MIN_HYPOTHETICAL_GAP = 0.1


class CollisionError(ValueError):
    """Raised when a non-positive gap reaches the IDM."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class VehicleState:
    pos: float
    vel: float
    lane: int

    def __post_init__(self):
        if self.vel < 0:
            raise ValueError(f"velocity must be non-negative, got {self.vel}")
        if self.lane < 1:
            raise ValueError(f"lane index must be >= 1, got {self.lane}")


@dataclass(frozen=True)
class IdmParams:
    """The six IDM parameters.

    Attributes:
        delta: Acceleration exponent.
        T: Desired time headway (s).
        a: Desired (maximum) acceleration (m/s^2).
        b: Comfortable deceleration (m/s^2).
        v0: Desired speed (m/s).
        s0: Minimum standstill gap (m).
    """

    delta: float = 4.0
    T: float = 1.5
    a: float = 1.0
    b: float = 1.5
    v0: float = 33.3
    s0: float = 2.0

    def __post_init__(self):
        if not (self.T > 0 and self.a > 0 and self.b > 0 and self.v0 > 0 and self.delta > 0):
            raise ValueError(f"invalid IDM parameters: {self}")
        if self.s0 < 0:
            raise ValueError(f"s0 must be non-negative, got {self.s0}")

    def with_theta(self, theta: Sequence[float]) -> "IdmParams":
        """Copy with (delta, T, a) replaced."""
        return replace(self, delta=float(theta[0]), T=float(theta[1]), a=float(theta[2]))


@dataclass(frozen=True)
class MobilParams:
    p: float = 0.35
    b_safe: float = 4.0
    delta_a_th: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"politeness must be in [0, 1], got {self.p}")
        if self.b_safe <= 0:
            raise ValueError(f"b_safe must be positive, got {self.b_safe}")


@dataclass(frozen=True)
class NeighborSet:
    p_old: Optional[VehicleState] = None
    f_old: Optional[VehicleState] = None
    p_new_l: Optional[VehicleState] = None
    f_new_l: Optional[VehicleState] = None
    p_new_r: Optional[VehicleState] = None
    f_new_r: Optional[VehicleState] = None


# Order in which the seven tracked vehicles are flattened into a sensing frame.
SLOT_ORDER = ("target", "f_old", "f_new_l", "f_new_r", "p_old", "p_new_l", "p_new_r")


@dataclass(frozen=True)
class Characteristic:
    T: float
    a: float
    i_lcl: float
    i_lcr: float

    def as_array(self) -> np.ndarray:
        return np.array([self.T, self.a, self.i_lcl, self.i_lcr])


class MobilAccels(NamedTuple):
    """Expected accelerations without (a_*) and with (at_*) the lane change."""

    a_T: float
    at_T: float
    a_N: float = 0.0
    at_N: float = 0.0
    a_O: float = 0.0
    at_O: float = 0.0


def idm_desired_gap(params: IdmParams, v, dv):
    """Dynamic desired gap s*(v, dv). Works elementwise on arrays."""
    return params.s0 + v * params.T + v * dv / (2.0 * math.sqrt(params.a * params.b))


def idm_acceleration(params: IdmParams, v: float, gap: float, dv: float) -> float:
    """IDM acceleration of a follower at speed ``v`` with ``dv = v - v_leader``.

    Raises:
        CollisionError: if ``gap <= 0``.
    """
    if not gap > 0:
        raise CollisionError(f"non-positive gap {gap}")
    s_star = idm_desired_gap(params, v, dv)
    return params.a * (1.0 - (v / params.v0) ** params.delta - (s_star / gap) ** 2)


def idm_step(params: IdmParams, follower: VehicleState, preceding: VehicleState, dt: float) -> VehicleState:
    """One explicit-Euler step of the follower. Velocity is floored at zero."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    gap = preceding.pos - follower.pos
    acc = idm_acceleration(params, follower.vel, gap, follower.vel - preceding.vel)
    return VehicleState(
        pos=follower.pos + follower.vel * dt,
        vel=max(0.0, follower.vel + acc * dt),
        lane=follower.lane,
    )


def simulate_following(
    schedule: Sequence[tuple[float, IdmParams]],
    leader_trajectory: Sequence[VehicleState],
    follower_init: VehicleState,
    dt: float = 0.1,
) -> list[VehicleState]:
    """Generate a follower trajectory behind a prescribed leader.

    Args:
        schedule: ``(start_time, params)`` pairs sorted by start time; the
            entry with the latest start time not after ``k * dt`` drives step
            ``k``. The first entry must start at or before 0.
        leader_trajectory: Leader states at every step.
        follower_init: Follower state at step 0.
        dt: Step length (s).

    Returns:
        Follower states, same length as ``leader_trajectory``.

    Raises:
        ValueError: on an empty schedule or a leader not ahead at t=0.
        CollisionError: if the gap closes; ``.step`` holds the step index.
    """
    if len(schedule) == 0:
        raise ValueError("empty parameter schedule")
    starts = [s for s, _ in schedule]
    if starts[0] > 1e-12 or any(b < a for a, b in zip(starts, starts[1:])):
        raise ValueError("schedule must start at t<=0 and be sorted")
    if not leader_trajectory:
        return []
    if leader_trajectory[0].pos <= follower_init.pos:
        raise ValueError("leader must be strictly ahead of the follower at t=0")

    out = [follower_init]
    idx = 0
    for k in range(1, len(leader_trajectory)):
        t = (k - 1) * dt
        while idx + 1 < len(schedule) and schedule[idx + 1][0] <= t + 1e-9:
            idx += 1
        try:
            out.append(idm_step(schedule[idx][1], out[-1], leader_trajectory[k - 1], dt))
        except CollisionError as exc:
            raise CollisionError(f"collision at step {k - 1}", step=k - 1) from exc
        if leader_trajectory[k].pos - out[-1].pos <= 0:
            raise CollisionError(f"collision at step {k}", step=k)
    return out


def identify_neighbors(frame: Mapping[object, VehicleState], target_id, n_lanes: Optional[int] = None) -> NeighborSet:
    """Nearest preceding/following vehicle in the own, left and right lanes.

    A vehicle at exactly the target's position counts as following. Lane 1
    is the leftmost lane; the right lane exists only up to ``n_lanes`` (when
    given).
    """
    target = frame[target_id]
    lane = target.lane
    best: dict[str, tuple[float, VehicleState]] = {}
    slots = {lane: ("p_old", "f_old")}
    if lane > 1:
        slots[lane - 1] = ("p_new_l", "f_new_l")
    if n_lanes is None or lane + 1 <= n_lanes:
        slots[lane + 1] = ("p_new_r", "f_new_r")
    for vid, veh in frame.items():
        if vid == target_id or veh.lane not in slots:
            continue
        ahead, behind = slots[veh.lane]
        d = veh.pos - target.pos
        key, dist = (ahead, d) if d > 0 else (behind, -d)
        if key not in best or dist < best[key][0]:
            best[key] = (dist, veh)
    return NeighborSet(**{k: v for k, (_, v) in best.items()})


def mobil_incentive(accels: MobilAccels, p: float) -> float:
    """Left-hand side of the MOBIL criterion."""
    return accels.at_T - accels.a_T + p * (accels.at_N - accels.a_N + accels.at_O - accels.a_O)


def mobil_safety(at_N: float, b_safe: float) -> bool:
    return at_N >= -b_safe


def mobil_criterion(incentive: float, delta_a_th: float) -> bool:
    """Threshold test of MOBIL; not used on the prediction path."""
    return incentive > delta_a_th


def virtual_leader(follower: VehicleState) -> VehicleState:
    return VehicleState(follower.pos + VIRTUAL_LEADER_DISTANCE, follower.vel, follower.lane)


def _accel_behind(params: IdmParams, follower: VehicleState, leader: Optional[VehicleState], hypothetical: bool = False) -> float:
    if leader is None:
        leader = virtual_leader(follower)
    gap = leader.pos - follower.pos
    if hypothetical:
        gap = max(gap, MIN_HYPOTHETICAL_GAP)
    return idm_acceleration(params, follower.vel, gap, follower.vel - leader.vel)


def lane_change_accels(params: IdmParams, target: VehicleState, nb: NeighborSet, direction: str) -> MobilAccels:
    """Expected accelerations for a hypothetical change to ``direction``.

    The target is relocated sideways at unchanged position and speed. Absent
    followers contribute nothing.
    """
    if direction == "lcl":
        p_new, f_new = nb.p_new_l, nb.f_new_l
    elif direction == "lcr":
        p_new, f_new = nb.p_new_r, nb.f_new_r
    else:
        raise ValueError(f"unknown direction {direction!r}")
    a_T = _accel_behind(params, target, nb.p_old)
    at_T = _accel_behind(params, target, p_new, hypothetical=True)
    a_N = at_N = a_O = at_O = 0.0
    if f_new is not None:
        a_N = _accel_behind(params, f_new, p_new)
        at_N = _accel_behind(params, f_new, target, hypothetical=True)
    if nb.f_old is not None:
        a_O = _accel_behind(params, nb.f_old, target)
        at_O = _accel_behind(params, nb.f_old, nb.p_old)
    return MobilAccels(a_T, at_T, a_N, at_N, a_O, at_O)


def lane_exists(lane: int, n_lanes: Optional[int]) -> bool:
    return lane >= 1 and (n_lanes is None or lane <= n_lanes)


def compute_characteristic(
    target: VehicleState,
    neighbors: NeighborSet,
    estimated: Sequence[float],
    base: IdmParams,
    mobil: MobilParams,
    n_lanes: Optional[int] = None,
) -> Characteristic:
    """Assemble [T, a, I_lcl, I_lcr] for one time step.

    ``estimated`` is ``(T, a)``; they replace the corresponding entries of
    ``base`` for every IDM evaluation, including the neighbours'.
    """
    T, a = float(estimated[0]), float(estimated[1])
    params = replace(base, T=T, a=a)
    incentives = []
    for direction, lane in (("lcl", target.lane - 1), ("lcr", target.lane + 1)):
        if not lane_exists(lane, n_lanes):
            incentives.append(MISSING_LANE_INCENTIVE)
            continue
        incentives.append(mobil_incentive(lane_change_accels(params, target, neighbors, direction), mobil.p))
    return Characteristic(T=T, a=a, i_lcl=incentives[0], i_lcr=incentives[1])
