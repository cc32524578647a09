"""Moving-horizon estimation of (delta, T, a) with a genetic algorithm.

The cost compares the follower's measured acceleration (forward difference of
its speed trace) with the IDM acceleration predicted from the measured speed,
gap and speed difference at every step of the horizon. Optionally the GA is
guided by the eTS clustering: the next step's search box is re-centered on
the selected cluster center and half the initial population is seeded there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .clustering import DEFAULT_EPSILON, DEFAULT_Q, ClusterStore, ets_step
from .traffic_model import CollisionError, IdmParams

HARD_LO = np.array([3.8, 0.1, 0.1])
HARD_HI = np.array([4.2, 5.0, 9.0])
GAMMA1 = 0.55
GAMMA2 = 1.45


@dataclass(frozen=True)
class ParamBounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds must be 3-vectors over (delta, T, a)")
        if np.any(lo >= hi):
            raise ValueError(f"lower bound must be below upper bound: {lo} vs {hi}")
        tol = 1e-12
        if np.any(lo < HARD_LO - tol) or np.any(hi > HARD_HI + tol):
            raise ValueError(f"bounds {lo}..{hi} leave the hard box")

    @classmethod
    def hard(cls) -> "ParamBounds":
        return cls(HARD_LO.copy(), HARD_HI.copy())

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)


@dataclass(frozen=True)
class EstimationWindow:
    follower_vel: np.ndarray
    leader_vel: np.ndarray
    gap: np.ndarray
    dt: float = 0.1

    def __post_init__(self):
        for name in ("follower_vel", "leader_vel", "gap"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.follower_vel)
        if len(self.leader_vel) != n or len(self.gap) != n:
            raise ValueError("window vectors must have equal length")
        if n < 2:
            raise ValueError("window needs at least two steps")
        if np.any(self.gap <= 0):
            raise CollisionError(f"non-positive gap in window at index {int(np.argmax(self.gap <= 0))}")

    @property
    def measured_accel(self) -> np.ndarray:
        return np.diff(self.follower_vel) / self.dt


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 60
    generations: int = 80
    crossover_rate: float = 0.8
    mutation_rate: float = 0.2
    elite_count: int = 2
    tournament_size: int = 3
    mutation_scale: float = 0.1
    seeded_fraction: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2 * self.elite_count or self.population_size < 2:
            raise ValueError("population_size must be at least 2 * elite_count")
        for name in ("crossover_rate", "mutation_rate", "seeded_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class ThetaEstimate:
    delta: float
    T: float
    a: float
    fit_error: float

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.delta, self.T, self.a])


def fitting_costs(thetas: np.ndarray, window: EstimationWindow, base: IdmParams) -> np.ndarray:
    """Mean absolute acceleration error for each row of ``thetas``.

    The last step has no forward difference and is left out.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    delta = thetas[:, 0:1]
    T = thetas[:, 1:2]
    a = thetas[:, 2:3]
    v = window.follower_vel[:-1]
    dv = v - window.leader_vel[:-1]
    gap = window.gap[:-1]
    s_star = base.s0 + v * T + v * dv / (2.0 * np.sqrt(a * base.b))
    model = a * (1.0 - (v / base.v0) ** delta - (s_star / gap) ** 2)
    return np.mean(np.abs(model - window.measured_accel), axis=1)


def fitting_cost(theta, window: EstimationWindow, base: IdmParams) -> float:
    return float(fitting_costs(np.asarray(theta, dtype=float)[None, :], window, base)[0])


def _tournament(rng: np.random.Generator, fitness: np.ndarray, n: int, k: int) -> np.ndarray:
    picks = rng.integers(0, len(fitness), size=(n, k))
    return picks[np.arange(n), np.argmin(fitness[picks], axis=1)]


def ga_optimize(
    cost: Callable[[np.ndarray], np.ndarray],
    bounds: ParamBounds,
    config: GaConfig = GaConfig(),
    seed_center: Optional[np.ndarray] = None,
    vectorized: bool = True,
) -> ThetaEstimate:
    """Minimize ``cost`` inside ``bounds``.

    Args:
        cost: Maps a ``(pop, 3)`` array to ``pop`` costs when ``vectorized``,
            otherwise a single 3-vector to a float.
        bounds: Search box; every evaluated individual lies inside it.
        config: GA settings, including the RNG seed.
        seed_center: When given, ``config.seeded_fraction`` of the initial
            population is drawn from a Gaussian around it.

    Returns:
        The best individual seen, with its cost as ``fit_error``.
    """
    rng = np.random.default_rng(config.rng_seed)
    lo, hi, width = bounds.lo, bounds.hi, bounds.width
    n = config.population_size
    sigma = config.mutation_scale * width

    def evaluate(pop):
        if vectorized:
            return np.asarray(cost(pop), dtype=float)
        return np.array([float(cost(x)) for x in pop])

    pop = lo + rng.random((n, 3)) * width
    if seed_center is not None:
        n_seed = int(round(config.seeded_fraction * n))
        around = np.asarray(seed_center, dtype=float) + rng.normal(size=(n_seed, 3)) * sigma
        pop[:n_seed] = around
    pop = bounds.clip(pop)
    fit = evaluate(pop)
    fit = np.where(np.isfinite(fit), fit, np.inf)

    best_i = int(np.argmin(fit))
    best_x, best_f = pop[best_i].copy(), float(fit[best_i])
    n_elite = config.elite_count
    n_child = n - n_elite
    for _ in range(config.generations):
        order = np.argsort(fit, kind="stable")
        elite = pop[order[:n_elite]]
        p1 = pop[_tournament(rng, fit, n_child, config.tournament_size)]
        p2 = pop[_tournament(rng, fit, n_child, config.tournament_size)]
        w = rng.random((n_child, 1))
        cross = rng.random((n_child, 1)) < config.crossover_rate
        child = np.where(cross, w * p1 + (1.0 - w) * p2, p1)
        mutate = rng.random((n_child, 3)) < config.mutation_rate
        child = child + mutate * rng.normal(size=(n_child, 3)) * sigma
        pop = bounds.clip(np.vstack([elite, child]))
        fit = evaluate(pop)
        fit = np.where(np.isfinite(fit), fit, np.inf)
        i = int(np.argmin(fit))
        if fit[i] < best_f:
            best_x, best_f = pop[i].copy(), float(fit[i])
    return ThetaEstimate(delta=float(best_x[0]), T=float(best_x[1]), a=float(best_x[2]), fit_error=best_f)


def update_bounds(center, gamma1: float = GAMMA1, gamma2: float = GAMMA2) -> ParamBounds:
    """Search box ``[center*gamma1, center*gamma2]`` intersected with the hard box.

    A component whose intersection is empty falls back to its hard range.
    """
    c = np.asarray(center, dtype=float)
    lo = np.maximum(c * gamma1, HARD_LO)
    hi = np.minimum(c * gamma2, HARD_HI)
    empty = lo >= hi
    lo = np.where(empty, HARD_LO, lo)
    hi = np.where(empty, HARD_HI, hi)
    return ParamBounds(lo, hi)


@dataclass
class EstimatorState:
    """Per-vehicle estimator memory: clustering store and the active bounds."""

    store: ClusterStore = field(default_factory=ClusterStore)
    bounds: ParamBounds = field(default_factory=ParamBounds.hard)
    seed_center: Optional[np.ndarray] = None
    steps: int = 0


@dataclass(frozen=True)
class StepRecord:
    step: int
    estimate: ThetaEstimate
    bounds: ParamBounds
    selected_center: Optional[np.ndarray]
    event: str


def estimate_step(
    window: EstimationWindow,
    store: ClusterStore,
    bounds: ParamBounds,
    config: GaConfig,
    base: IdmParams = IdmParams(),
    seed_center: Optional[np.ndarray] = None,
    epsilon: float = DEFAULT_EPSILON,
    q: float = DEFAULT_Q,
    gamma1: float = GAMMA1,
    gamma2: float = GAMMA2,
) -> tuple[ThetaEstimate, ClusterStore, ParamBounds, np.ndarray]:
    """One guided estimation step.

    Returns the estimate, the (mutated) store, the bounds for the next step
    and the selected cluster center.
    """
    est = ga_optimize(lambda pop: fitting_costs(pop, window, base), bounds, config, seed_center)
    selected, _ = ets_step(est.theta, store, epsilon, q)
    return est, store, update_bounds(selected, gamma1, gamma2), selected


class OnlineEstimator:
    """Sequential estimator for one vehicle.

    With ``clustering=False`` every step searches the hard box from a uniform
    initial population.
    """

    def __init__(
        self,
        base: IdmParams = IdmParams(),
        ga: GaConfig = GaConfig(),
        clustering: bool = True,
        epsilon: float = DEFAULT_EPSILON,
        q: float = DEFAULT_Q,
        gamma1: float = GAMMA1,
        gamma2: float = GAMMA2,
    ):
        self.base = base
        self.ga = ga
        self.clustering = clustering
        self.epsilon = epsilon
        self.q = q
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.state = EstimatorState()

    def step(self, window: EstimationWindow) -> StepRecord:
        st = self.state
        # distinct but reproducible GA stream per step
        cfg = GaConfig(**{**self.ga.__dict__, "rng_seed": self.ga.rng_seed * 1_000_003 + st.steps})
        bounds = st.bounds
        if not self.clustering:
            est = ga_optimize(lambda pop: fitting_costs(pop, window, self.base), ParamBounds.hard(), cfg)
            rec = StepRecord(st.steps, est, ParamBounds.hard(), None, "none")
        else:
            cost = lambda pop: fitting_costs(pop, window, self.base)
            est = ga_optimize(cost, bounds, cfg, st.seed_center)
            selected, event = ets_step(est.theta, st.store, self.epsilon, self.q)
            st.bounds = update_bounds(selected, self.gamma1, self.gamma2)
            st.seed_center = np.clip(selected, st.bounds.lo, st.bounds.hi)
            rec = StepRecord(st.steps, est, bounds, selected, event)
        st.steps += 1
        return rec


def windows_from_trace(follower_vel, leader_vel, gap, horizon: int = 30, dt: float = 0.1):
    """Yield ``(end_index, EstimationWindow)`` for every full horizon."""
    follower_vel = np.asarray(follower_vel, dtype=float)
    leader_vel = np.asarray(leader_vel, dtype=float)
    gap = np.asarray(gap, dtype=float)
    for end in range(horizon - 1, len(follower_vel)):
        sl = slice(end - horizon + 1, end + 1)
        yield end, EstimationWindow(follower_vel[sl], leader_vel[sl], gap[sl], dt)


def mean_abs(values) -> float:
    values = list(values)
    return math.fsum(abs(v) for v in values) / len(values) if values else float("nan")
