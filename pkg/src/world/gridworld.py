"""Grid environment: map model, noisy motion, noisy pose observations."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from src.errors import ConfigurationError, MapParseError

PROBABILITY_TOLERANCE = 1e-9
EPISODE_CAP_FACTOR = 4

OBSTACLE_CHAR = "#"
FREE_CHAR = "."
START_CHAR = "S"
GOAL_CHAR = "G"
MAP_CHARACTERS = frozenset({OBSTACLE_CHAR, FREE_CHAR, START_CHAR, GOAL_CHAR})


class Cell(NamedTuple):
    """Grid coordinate, row-major with row 0 at the top."""

    row: int
    col: int

    def shifted(self, direction: Direction) -> Cell:
        d_row, d_col = direction.delta
        return Cell(self.row + d_row, self.col + d_col)


class Direction(Enum):
    """Motion commands. Iteration order is the neighbour order used by every search."""

    NORTH = (-1, 0)
    EAST = (0, 1)
    SOUTH = (1, 0)
    WEST = (0, -1)

    @property
    def delta(self) -> tuple[int, int]:
        return self.value

    @property
    def left(self) -> Direction:
        return _LEFT_OF[self]

    @property
    def right(self) -> Direction:
        return _RIGHT_OF[self]

    @classmethod
    def between(cls, origin: Cell, target: Cell) -> Direction:
        """Direction of the single step from `origin` to the 4-adjacent `target`."""
        delta = (target.row - origin.row, target.col - origin.col)
        for direction in cls:
            if direction.delta == delta:
                return direction
        raise ValueError(f"Cells {origin} and {target} are not 4-adjacent.")


_LEFT_OF = {
    Direction.NORTH: Direction.WEST,
    Direction.EAST: Direction.NORTH,
    Direction.SOUTH: Direction.EAST,
    Direction.WEST: Direction.SOUTH,
}
_RIGHT_OF = {value: key for key, value in _LEFT_OF.items()}


class Status(Enum):
    ACTIVE = "active"
    REACHED_GOAL = "reached_goal"
    FAILED = "failed"


@dataclass(frozen=True)
class TransitionNoise:
    """Categorical motion model: forward, drift left, drift right."""

    p_forward: float = 0.8
    p_left: float = 0.1
    p_right: float = 0.1

    def __post_init__(self) -> None:
        values = (self.p_forward, self.p_left, self.p_right)
        if any(not 0.0 <= float(value) <= 1.0 for value in values):
            raise ConfigurationError(f"Transition probabilities must lie in [0, 1], got {values}.")
        if abs(sum(values) - 1.0) > PROBABILITY_TOLERANCE:
            raise ConfigurationError(f"Transition probabilities must sum to 1, got {sum(values)!r}.")

    @classmethod
    def from_forward(cls, p_forward: float) -> TransitionNoise:
        """Symmetric drift around a given forward mass."""
        drift = (1.0 - p_forward) / 2.0
        return cls(p_forward=p_forward, p_left=drift, p_right=1.0 - p_forward - drift)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.p_forward, self.p_left, self.p_right], dtype=float)


@dataclass(frozen=True, eq=False)
class ObservationNoise:
    """3x3 pose-observation kernel centred on the true cell."""

    kernel: np.ndarray

    def __post_init__(self) -> None:
        kernel = np.array(self.kernel, dtype=float)
        if kernel.shape != (3, 3):
            raise ConfigurationError(f"Observation kernel must be 3x3, got shape {kernel.shape}.")
        if (kernel < 0).any():
            raise ConfigurationError("Observation kernel entries must be nonnegative.")
        if abs(kernel.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ConfigurationError(f"Observation kernel must sum to 1, got {kernel.sum()!r}.")
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)

    @classmethod
    def from_center(cls, center: float) -> ObservationNoise:
        """Kernel with `center` on the true cell and the rest split over the 8 neighbours."""
        if not 0.0 <= center <= 1.0:
            raise ConfigurationError(f"Observation center mass must lie in [0, 1], got {center}.")
        kernel = np.full((3, 3), (1.0 - center) / 8.0)
        kernel[1, 1] = center
        return cls(kernel)

    @classmethod
    def noiseless(cls) -> ObservationNoise:
        return cls.from_center(1.0)

    @property
    def center(self) -> float:
        return float(self.kernel[1, 1])


@dataclass(frozen=True, eq=False)
class GridMap:
    """Occupancy grid with a start cell and a goal region."""

    blocked: np.ndarray
    start: Cell
    goal: frozenset[Cell]

    def __post_init__(self) -> None:
        blocked = np.array(self.blocked, dtype=bool)
        if blocked.ndim != 2 or blocked.size == 0:
            raise ConfigurationError("Map must be a nonempty 2-D grid.")
        blocked.setflags(write=False)
        object.__setattr__(self, "blocked", blocked)
        object.__setattr__(self, "start", Cell(*self.start))
        object.__setattr__(self, "goal", frozenset(Cell(*cell) for cell in self.goal))
        if not self.is_free(self.start):
            raise ConfigurationError(f"Start cell {self.start} is not free.")
        if not self.goal:
            raise ConfigurationError("Map has no goal cell.")
        for cell in self.goal:
            if not self.is_free(cell):
                raise ConfigurationError(f"Goal cell {cell} is not free.")

    @property
    def height(self) -> int:
        return int(self.blocked.shape[0])

    @property
    def width(self) -> int:
        return int(self.blocked.shape[1])

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def is_free(self, cell: Cell) -> bool:
        """Off-map cells count as obstacles."""
        return self.in_bounds(cell) and not self.blocked[cell[0], cell[1]]

    def free_mask(self, cells: np.ndarray) -> np.ndarray:
        """Vectorised `is_free` over an (n, 2) array of coordinates."""
        rows, cols = cells[:, 0], cells[:, 1]
        inside = (rows >= 0) & (rows < self.height) & (cols >= 0) & (cols < self.width)
        free = np.zeros(len(cells), dtype=bool)
        free[inside] = ~self.blocked[rows[inside], cols[inside]]
        return free

    def free_cells(self) -> list[Cell]:
        rows, cols = np.nonzero(~self.blocked)
        return [Cell(int(row), int(col)) for row, col in zip(rows, cols)]

    def with_endpoints(self, start: Cell, goal: Iterable[Cell]) -> GridMap:
        """Same occupancy, new start cell and goal region."""
        return GridMap(blocked=self.blocked, start=start, goal=frozenset(goal))


@dataclass(frozen=True)
class EnvState:
    true_pose: Cell
    status: Status = Status.ACTIVE
    steps_taken: int = 0
    max_steps: int | None = None
    failure_cause: str | None = None


def episode_cap(grid: GridMap, factor: int = EPISODE_CAP_FACTOR) -> int:
    return factor * (grid.width + grid.height)


def reset(grid: GridMap, *, max_steps: int | None = None) -> EnvState:
    cap = episode_cap(grid) if max_steps is None else int(max_steps)
    return EnvState(true_pose=grid.start, max_steps=cap)


def outcome_offsets(direction: Direction) -> np.ndarray:
    """Row/col offsets of the forward, left-drift and right-drift outcomes."""
    return np.array([direction.delta, direction.left.delta, direction.right.delta], dtype=np.int64)


def sample_outcomes(noise: TransitionNoise, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw outcome indices (0 forward, 1 left, 2 right); shared by the robot and the particles."""
    return rng.choice(3, size=size, p=noise.probabilities)


def _after_step(state: EnvState, pose: Cell, status: Status, cause: str | None) -> EnvState:
    steps = state.steps_taken + 1
    if status is Status.ACTIVE and state.max_steps is not None and steps > state.max_steps:
        return replace(state, true_pose=pose, status=Status.FAILED, steps_taken=steps, failure_cause="timeout")
    return replace(state, true_pose=pose, status=status, steps_taken=steps, failure_cause=cause)


def step_move(
    state: EnvState,
    grid: GridMap,
    direction: Direction,
    noise: TransitionNoise,
    rng: np.random.Generator,
) -> EnvState:
    """Advance the true robot one noisy step; collisions and off-map moves are absorbing failures."""
    if state.status is not Status.ACTIVE:
        raise ValueError(f"step_move requires an active episode, status is {state.status.value}.")
    outcome = int(sample_outcomes(noise, rng, 1)[0])
    d_row, d_col = outcome_offsets(direction)[outcome]
    target = Cell(state.true_pose.row + int(d_row), state.true_pose.col + int(d_col))
    if not grid.is_free(target):
        return _after_step(state, state.true_pose, Status.FAILED, "collision")
    if target in grid.goal:
        return _after_step(state, target, Status.REACHED_GOAL, None)
    return _after_step(state, target, Status.ACTIVE, None)


def hold(state: EnvState) -> EnvState:
    """Spend one decision without moving (the localize branch)."""
    if state.status is not Status.ACTIVE:
        raise ValueError(f"hold requires an active episode, status is {state.status.value}.")
    return _after_step(state, state.true_pose, Status.ACTIVE, None)


def observation_distribution(pose: Cell, noise: ObservationNoise, grid: GridMap) -> dict[Cell, float]:
    """Exact observation distribution at `pose`: the kernel renormalised over in-bounds cells."""
    weights: dict[Cell, float] = {}
    for d_row in (-1, 0, 1):
        for d_col in (-1, 0, 1):
            cell = Cell(pose.row + d_row, pose.col + d_col)
            mass = float(noise.kernel[d_row + 1, d_col + 1])
            if grid.in_bounds(cell) and mass > 0.0:
                weights[cell] = mass
    total = sum(weights.values())
    return {cell: mass / total for cell, mass in weights.items()}


def observe_pose(
    state: EnvState,
    noise: ObservationNoise,
    grid: GridMap,
    rng: np.random.Generator,
) -> Cell:
    if state.status is not Status.ACTIVE:
        raise ValueError(f"observe_pose requires an active episode, status is {state.status.value}.")
    distribution = observation_distribution(state.true_pose, noise, grid)
    cells = list(distribution)
    index = int(rng.choice(len(cells), p=np.fromiter(distribution.values(), dtype=float)))
    return cells[index]


def observation_likelihood(
    poses: np.ndarray,
    observed: Cell,
    noise: ObservationNoise,
    grid: GridMap,
) -> np.ndarray:
    """P(observed | pose) for each row of an (n, 2) pose array, consistent with `observe_pose`."""
    poses = np.asarray(poses, dtype=np.int64).reshape(-1, 2)
    normaliser = np.zeros(len(poses))
    for d_row in (-1, 0, 1):
        for d_col in (-1, 0, 1):
            shifted = poses + np.array([d_row, d_col])
            inside = (
                (shifted[:, 0] >= 0)
                & (shifted[:, 0] < grid.height)
                & (shifted[:, 1] >= 0)
                & (shifted[:, 1] < grid.width)
            )
            normaliser += noise.kernel[d_row + 1, d_col + 1] * inside

    offset = np.array([observed.row, observed.col]) - poses
    within = (np.abs(offset) <= 1).all(axis=1)
    likelihood = np.zeros(len(poses))
    rows = offset[within, 0] + 1
    cols = offset[within, 1] + 1
    likelihood[within] = noise.kernel[rows, cols] / normaliser[within]
    return likelihood


def load_map(text: str) -> GridMap:
    """Parse the ASCII map format: `#` obstacle, `.` free, `S` start, `G` goal."""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapParseError("empty map document", line=1, column=1)

    width = len(lines[0])
    start: Cell | None = None
    goal: set[Cell] = set()
    blocked = np.zeros((len(lines), width), dtype=bool)
    for row, line in enumerate(lines):
        if len(line) != width:
            raise MapParseError(
                f"ragged row: expected {width} characters, found {len(line)}",
                line=row + 1,
                column=min(len(line), width) + 1,
            )
        for col, char in enumerate(line):
            if char not in MAP_CHARACTERS:
                raise MapParseError(f"unexpected character {char!r}", line=row + 1, column=col + 1)
            if char == OBSTACLE_CHAR:
                blocked[row, col] = True
            elif char == START_CHAR:
                if start is not None:
                    raise MapParseError("more than one start cell", line=row + 1, column=col + 1)
                start = Cell(row, col)
            elif char == GOAL_CHAR:
                goal.add(Cell(row, col))

    if start is None:
        raise MapParseError("no start cell", line=len(lines), column=width)
    if not goal:
        raise MapParseError("no goal cell", line=len(lines), column=width)
    return GridMap(blocked=blocked, start=start, goal=frozenset(goal))


def serialize_map(grid: GridMap) -> str:
    rows: list[str] = []
    for row in range(grid.height):
        chars = []
        for col in range(grid.width):
            cell = Cell(row, col)
            if cell == grid.start:
                chars.append(START_CHAR)
            elif cell in grid.goal:
                chars.append(GOAL_CHAR)
            elif grid.blocked[row, col]:
                chars.append(OBSTACLE_CHAR)
            else:
                chars.append(FREE_CHAR)
        rows.append("".join(chars))
    return "\n".join(rows) + "\n"


def read_map(path: str | Path) -> GridMap:
    map_path = Path(path)
    if not map_path.exists():
        raise FileNotFoundError(f"Missing map file: {map_path}")
    return load_map(map_path.read_text(encoding="utf-8"))
