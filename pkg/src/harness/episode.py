"""One episode of the move/localize loop, the grid episode source, and planner construction."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from src.config import RewardTable, RunConfig
from src.errors import ConfigurationError, UnreachableError
from src.learning.rsac import EpisodeRecord, RecurrentPlanner, RecurrentSac, Transition
from src.learning.training import TrainingResult, train
from src.planners.policy import HighLevelAction, Planner, PlannerInput, parse_baseline_spec, split_planner_spec
from src.world.belief import belief_mean, init_belief, planner_observation, propagate, update
from src.world.gridworld import (
    Cell,
    Direction,
    EnvState,
    GridMap,
    Status,
    hold,
    observe_pose,
    read_map,
    reset,
    step_move,
)
from src.world.nav import Path as WaypointPath
from src.world.nav import advance, next_command, random_start_goal, shortest_path, truncate

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "step",
    "action",
    "true_row",
    "true_col",
    "mean_row",
    "mean_col",
    "p_hat",
    "d_hat",
    "reward",
    "safe",
    "status",
    "failure_cause",
    "decide_ms",
]
LEARNED_KINDS = ("riskrl", "baserl")


@dataclass(frozen=True)
class EpisodeResult:
    record: EpisodeRecord
    trace: pd.DataFrame
    final_state: EnvState

    @property
    def n_localize(self) -> int:
        return self.record.n_localize

    @property
    def n_steps(self) -> int:
        return len(self.record)

    @property
    def success(self) -> bool:
        return self.record.success

    @property
    def failure_cause(self) -> str | None:
        return self.final_state.failure_cause


def _command(path: WaypointPath, mean: Cell, grid: GridMap, fallback: Direction) -> Direction:
    try:
        return next_command(path, mean, grid)
    except ValueError:
        return fallback


def _replan(grid: GridMap, mean: Cell, current: WaypointPath) -> WaypointPath:
    try:
        return shortest_path(grid, mean)
    except UnreachableError:
        logger.debug("No path from belief mean %s; keeping the previous path.", tuple(mean))
        return current


def run_episode(
    cfg: RunConfig,
    planner: Planner,
    rng: np.random.Generator,
    *,
    grid: GridMap | None = None,
) -> EpisodeResult:
    """Play one episode: the planner picks Move or Localize each tick until the goal, a failure or the cap."""
    grid = grid if grid is not None else read_map(cfg.map_path)
    if grid.start in grid.goal:
        raise ConfigurationError(f"Start {tuple(grid.start)} already lies in the goal region.")
    try:
        path = shortest_path(grid, grid.start)
    except UnreachableError as exc:
        raise ConfigurationError(f"Goal is unreachable from start {tuple(grid.start)}.") from exc

    state = reset(grid, max_steps=cfg.max_steps)
    belief = init_belief(grid.start, cfg.n_particles)
    planner.reset()
    prev_action = HighLevelAction.MOVE
    last_direction = Direction.between(path.waypoints[0], path.waypoints[1])
    transitions: list[Transition] = []
    rows: list[dict[str, object]] = []

    while state.status is Status.ACTIVE:
        obs = planner_observation(belief, grid)
        mean = belief_mean(belief, grid)
        started = time.perf_counter()
        action = planner.decide(PlannerInput(obs, prev_action))
        decide_ms = (time.perf_counter() - started) * 1000.0

        if action is HighLevelAction.MOVE:
            path = advance(path, mean)
            direction = _command(path, mean, grid, last_direction)
            on_path = len(path) >= 2 and mean.shifted(direction) == path.waypoints[1]
            state = step_move(state, grid, direction, cfg.transition, rng)
            belief = propagate(belief, grid, direction, cfg.transition, rng)
            if on_path:
                path = truncate(path)
            last_direction = direction
        else:
            state = hold(state)
            if state.status is Status.ACTIVE:
                observed = observe_pose(state, cfg.localize_kernel, grid, rng)
                belief = update(belief, observed, cfg.filter_kernel, grid, rng)
                path = _replan(grid, belief_mean(belief, grid), path)

        reward = cfg.rewards.step_reward(action, state.status)
        safe = 0 if state.status is Status.FAILED else 1
        done = state.status is not Status.ACTIVE
        transitions.append(Transition(obs, prev_action, action, reward, safe, done))
        rows.append(
            {
                "step": len(rows),
                "action": action.name,
                "true_row": state.true_pose.row,
                "true_col": state.true_pose.col,
                "mean_row": mean.row,
                "mean_col": mean.col,
                "p_hat": obs.p_hat,
                "d_hat": obs.d_hat,
                "reward": reward,
                "safe": safe,
                "status": state.status.value,
                "failure_cause": state.failure_cause,
                "decide_ms": decide_ms,
            }
        )
        prev_action = action

    record = EpisodeRecord(tuple(transitions), state.status)
    return EpisodeResult(record=record, trace=pd.DataFrame(rows, columns=TRACE_COLUMNS), final_state=state)


def episode_grid(cfg: RunConfig, grid: GridMap, rng: np.random.Generator) -> GridMap:
    """The map as configured, or with freshly sampled endpoints when paths are randomized."""
    if not cfg.randomize_path:
        return grid
    start, goal = random_start_goal(grid, cfg.min_separation, rng)
    return grid.with_endpoints(start, [goal])


@dataclass
class GridEpisodeSource:
    """Training episodes on a fixed map; start and goal are resampled per episode when randomized."""

    cfg: RunConfig
    grid: GridMap | None = None

    def __post_init__(self) -> None:
        if self.grid is None:
            self.grid = read_map(self.cfg.map_path)

    def rollout(self, planner: Planner, rng: np.random.Generator) -> EpisodeRecord:
        grid = episode_grid(self.cfg, self.grid, rng)
        return run_episode(self.cfg, planner, rng, grid=grid).record


def train_policy(
    cfg: RunConfig,
    kind: str = "riskrl",
    *,
    budget: int | None = None,
    grid: GridMap | None = None,
    log_every: int = 10,
) -> TrainingResult:
    """Train a RiskRL (primal-dual) or BaseRL (lambda frozen at 0, failure penalty) policy on the configured map."""
    if kind not in LEARNED_KINDS:
        raise ConfigurationError(f"Unknown learned planner kind {kind!r}; expected one of {LEARNED_KINDS}.")
    rng = np.random.default_rng(cfg.seed)
    episodes = cfg.train_episodes if budget is None else budget
    if kind == "baserl":
        cfg = replace(cfg, rewards=RewardTable.baserl())
        hyper = cfg.baserl_sac
    else:
        hyper = cfg.sac
    source = GridEpisodeSource(cfg, grid)
    logger.info("Training %s for %d episodes on %s", kind, episodes, cfg.map_path)
    return train(
        source,
        cfg.risk,
        hyper,
        episodes,
        rng,
        freeze_dual=kind == "baserl",
        lambda_init=0.0 if kind == "baserl" else None,
        seed=cfg.seed,
        log_every=log_every,
    )


def build_planner(spec: str, *, name: str | None = None) -> Planner:
    """Planner from `static:k`, `threshold:tau`, `always:move|localize`, `riskrl:<ckpt>` or `baserl:<ckpt>`."""
    kind, argument = split_planner_spec(spec)
    if kind in LEARNED_KINDS:
        checkpoint = Path(argument)
        planner: Planner = RecurrentPlanner(RecurrentSac.load(checkpoint), mode="greedy", name=name or spec)
        return planner
    planner = parse_baseline_spec(spec)
    if name:
        planner = replace(planner, name=name)
    return planner
