"""Particle-filter belief over the robot cell and the planner observation derived from it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.world.gridworld import (
    Cell,
    Direction,
    GridMap,
    ObservationNoise,
    TransitionNoise,
    observation_likelihood,
    outcome_offsets,
    sample_outcomes,
)
from src.world.nav import UNREACHED, goal_distance_field, nearest_free

DEFAULT_PARTICLES = 100


@dataclass(frozen=True, eq=False)
class Belief:
    """Fixed-size particle set; `poses` is (n, 2) row/col, `collided` is (n,)."""

    poses: np.ndarray
    collided: np.ndarray

    def __post_init__(self) -> None:
        poses = np.asarray(self.poses, dtype=np.int64).reshape(-1, 2)
        collided = np.asarray(self.collided, dtype=bool).reshape(-1)
        if len(poses) != len(collided) or len(poses) == 0:
            raise ValueError("Belief needs one collided flag per particle and at least one particle.")
        poses.setflags(write=False)
        collided.setflags(write=False)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "collided", collided)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def n_collided(self) -> int:
        return int(self.collided.sum())


@dataclass(frozen=True)
class PlannerObservation:
    """Collided-particle fraction and step distance from the belief mean to the goal."""

    p_hat: float
    d_hat: int

    def as_tuple(self) -> tuple[float, int]:
        return (self.p_hat, self.d_hat)


def init_belief(start: Cell, n: int = DEFAULT_PARTICLES) -> Belief:
    if n < 1:
        raise ValueError(f"Belief needs at least one particle, got {n}.")
    poses = np.tile(np.array([start[0], start[1]], dtype=np.int64), (n, 1))
    return Belief(poses=poses, collided=np.zeros(n, dtype=bool))


def propagate(
    belief: Belief,
    grid: GridMap,
    direction: Direction,
    noise: TransitionNoise,
    rng: np.random.Generator,
) -> Belief:
    """Move each live particle by the robot's motion model; blocked draws mark it collided in place."""
    poses = belief.poses.copy()
    collided = belief.collided.copy()
    live = np.flatnonzero(~collided)
    if len(live) == 0:
        return Belief(poses=poses, collided=collided)

    outcomes = sample_outcomes(noise, rng, len(live))
    targets = poses[live] + outcome_offsets(direction)[outcomes]
    free = grid.free_mask(targets)
    poses[live[free]] = targets[free]
    collided[live[~free]] = True
    return Belief(poses=poses, collided=collided)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Low-variance resampling: one uniform offset, `n` evenly spaced pointers into the CDF."""
    weights = np.asarray(weights, dtype=float)
    count = len(weights) if n is None else int(n)
    total = weights.sum()
    if total <= 0:
        raise ValueError("Cannot resample from weights that sum to zero.")
    cumulative = np.cumsum(weights / total)
    cumulative[-1] = 1.0
    pointers = (rng.random() + np.arange(count)) / count
    return np.searchsorted(cumulative, pointers, side="right")


def update(
    belief: Belief,
    observed: Cell,
    noise: ObservationNoise,
    grid: GridMap,
    rng: np.random.Generator,
) -> Belief:
    """Weight live particles by the kernel likelihood, resample, clear collided flags."""
    n = len(belief)
    weights = observation_likelihood(belief.poses, observed, noise, grid)
    weights[belief.collided] = 0.0
    if weights.sum() <= 0:
        return init_belief(observed, n)
    indices = systematic_resample(weights, rng, n)
    return Belief(poses=belief.poses[indices], collided=np.zeros(n, dtype=bool))


def belief_mean(belief: Belief, grid: GridMap) -> Cell:
    """Mean of live particles (all if none live), rounded half-up, snapped to the nearest free cell."""
    live = belief.poses[~belief.collided]
    if len(live) == 0:
        live = belief.poses
    mean = live.mean(axis=0)
    rounded = np.floor(mean + 0.5).astype(np.int64)
    return nearest_free(grid, Cell(int(rounded[0]), int(rounded[1])))


def planner_observation(belief: Belief, grid: GridMap) -> PlannerObservation:
    p_hat = belief.n_collided / len(belief)
    mean = belief_mean(belief, grid)
    distance = int(goal_distance_field(grid)[mean])
    if distance == UNREACHED:
        distance = grid.width * grid.height
    return PlannerObservation(p_hat=p_hat, d_hat=distance)
