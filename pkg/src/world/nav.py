"""Low-level planner: breadth-first paths, motion commands, replanning, start/goal sampling."""

from __future__ import annotations

import weakref
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigurationError, UnreachableError
from src.world.gridworld import Cell, Direction, GridMap

UNREACHED = -1
START_GOAL_RETRIES = 10_000

_GOAL_FIELDS: weakref.WeakKeyDictionary[GridMap, np.ndarray] = weakref.WeakKeyDictionary()


@dataclass(frozen=True)
class Path:
    """Ordered 4-adjacent waypoints ending in the goal region."""

    waypoints: tuple[Cell, ...]

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def steps(self) -> int:
        return len(self.waypoints) - 1

    @property
    def head(self) -> Cell:
        return self.waypoints[0]


def _neighbours(grid: GridMap, cell: Cell) -> Iterable[Cell]:
    for direction in Direction:
        neighbour = cell.shifted(direction)
        if grid.is_free(neighbour):
            yield neighbour


def _flood(grid: GridMap, sources: Iterable[Cell]) -> np.ndarray:
    distances = np.full((grid.height, grid.width), UNREACHED, dtype=np.int64)
    queue: deque[Cell] = deque()
    for source in sources:
        if grid.is_free(source) and distances[source] == UNREACHED:
            distances[source] = 0
            queue.append(source)
    while queue:
        current = queue.popleft()
        for neighbour in _neighbours(grid, current):
            if distances[neighbour] == UNREACHED:
                distances[neighbour] = distances[current] + 1
                queue.append(neighbour)
    return distances


def distances_from(grid: GridMap, origin: Cell) -> np.ndarray:
    """Step distance from `origin` to every cell; -1 where unreachable."""
    return _flood(grid, [origin])


def goal_distance_field(grid: GridMap) -> np.ndarray:
    """Step distance from every cell to the nearest goal cell, cached per map."""
    field = _GOAL_FIELDS.get(grid)
    if field is None:
        field = _flood(grid, sorted(grid.goal))
        field.setflags(write=False)
        _GOAL_FIELDS[grid] = field
    return field


def _bfs_path(grid: GridMap, origin: Cell, targets: frozenset[Cell]) -> Path:
    if not grid.is_free(origin):
        raise UnreachableError(f"Cell {origin} is not free.")
    parents: dict[Cell, Cell | None] = {origin: None}
    queue: deque[Cell] = deque([origin])
    while queue:
        current = queue.popleft()
        if current in targets:
            waypoints = [current]
            node = parents[current]
            while node is not None:
                waypoints.append(node)
                node = parents[node]
            return Path(tuple(reversed(waypoints)))
        for neighbour in _neighbours(grid, current):
            if neighbour not in parents:
                parents[neighbour] = current
                queue.append(neighbour)
    raise UnreachableError(f"No obstacle-free path from {origin} to {sorted(targets)}.")


def shortest_path(grid: GridMap, origin: Cell, goal: Iterable[Cell] | None = None) -> Path:
    """Minimum-step path to the nearest goal cell; ties broken by N, E, S, W expansion order."""
    targets = grid.goal if goal is None else frozenset(Cell(*cell) for cell in goal)
    return _bfs_path(grid, Cell(*origin), targets)


def nearest_free(grid: GridMap, cell: Cell) -> Cell:
    """`cell` itself if free, else the closest free cell by a BFS ring over the whole grid."""
    cell = Cell(min(max(cell.row, 0), grid.height - 1), min(max(cell.col, 0), grid.width - 1))
    if grid.is_free(cell):
        return cell
    seen = {cell}
    queue: deque[Cell] = deque([cell])
    while queue:
        current = queue.popleft()
        for direction in Direction:
            neighbour = current.shifted(direction)
            if not grid.in_bounds(neighbour) or neighbour in seen:
                continue
            if grid.is_free(neighbour):
                return neighbour
            seen.add(neighbour)
            queue.append(neighbour)
    raise UnreachableError("Map has no free cell.")


def truncate(path: Path) -> Path:
    if len(path) < 2:
        return path
    return Path(path.waypoints[1:])


def advance(path: Path, mean: Cell) -> Path:
    """Drop waypoints the belief mean has already reached."""
    if mean in path.waypoints[1:]:
        index = path.waypoints.index(mean, 1)
        return Path(path.waypoints[index:])
    return path


def next_command(path: Path, mean: Cell, grid: GridMap) -> Direction:
    """Command from the belief mean toward the next waypoint, steering back by BFS when off-path."""
    path = advance(path, mean)
    if len(path) < 2:
        raise ValueError("next_command needs a path with at least two waypoints ahead of the mean.")
    target = path.waypoints[1]
    if abs(target.row - mean.row) + abs(target.col - mean.col) == 1:
        return Direction.between(mean, target)
    detour = shortest_path(grid, mean, [target])
    return Direction.between(detour.waypoints[0], detour.waypoints[1])


def random_start_goal(
    grid: GridMap,
    min_separation: int,
    rng: np.random.Generator,
    *,
    max_retries: int = START_GOAL_RETRIES,
) -> tuple[Cell, Cell]:
    """Rejection-sample distinct free cells at least `min_separation` steps apart."""
    free = grid.free_cells()
    if len(free) < 2:
        raise ConfigurationError("Map needs at least two free cells to sample a start and goal.")
    for _ in range(max_retries):
        start, goal = (free[index] for index in rng.choice(len(free), size=2, replace=False))
        distance = int(distances_from(grid, start)[goal])
        if distance != UNREACHED and distance >= min_separation:
            return start, goal
    raise ConfigurationError(
        f"No start/goal pair at least {min_separation} steps apart after {max_retries} draws."
    )
