import numpy as np
import pytest

from src.errors import ConfigurationError, UnreachableError
from src.world.gridworld import Cell, Direction, load_map, read_map
from src.world.nav import (
    Path,
    advance,
    distances_from,
    goal_distance_field,
    next_command,
    random_start_goal,
    shortest_path,
    truncate,
)

OPEN_5X5 = ".....\n..S..\n.....\n.....\n....G\n"


def _open_map(size: int) -> str:
    rows = ["." * size for _ in range(size)]
    rows[0] = "S" + rows[0][1:]
    rows[-1] = rows[-1][:-1] + "G"
    return "\n".join(rows) + "\n"


def _assert_valid_path(grid, path: Path) -> None:
    assert path.waypoints[-1] in grid.goal
    assert all(grid.is_free(cell) for cell in path.waypoints)
    for current, following in zip(path.waypoints, path.waypoints[1:]):
        assert abs(current.row - following.row) + abs(current.col - following.col) == 1


def test_shortest_path_trivial_cases(corridor) -> None:
    beside_goal = shortest_path(corridor, Cell(1, 4))
    at_goal = shortest_path(corridor, Cell(1, 5))

    assert beside_goal.waypoints == (Cell(1, 4), Cell(1, 5))
    assert at_goal.waypoints == (Cell(1, 5),)
    assert at_goal.steps == 0


def test_shortest_path_matches_flood_fill_on_bundled_maps(tunnel_path) -> None:
    for name in ("tunnel12.map", "maze64a.map", "maze64b.map"):
        grid = read_map(tunnel_path.parent / name)
        path = shortest_path(grid, grid.start)
        _assert_valid_path(grid, path)

        field = goal_distance_field(grid)
        assert path.steps == field[grid.start]
        assert path.steps == min(distances_from(grid, grid.start)[cell] for cell in grid.goal)


def test_shortest_path_follows_expansion_order() -> None:
    grid = load_map("....\n.S..\n....\n..G.\n")
    path = shortest_path(grid, grid.start)

    assert path.steps == 3
    assert path.waypoints[1] == Cell(1, 2)


def test_shortest_path_unreachable() -> None:
    grid = load_map("#####\n#S#G#\n#####\n")
    with pytest.raises(UnreachableError):
        shortest_path(grid, grid.start)


def test_next_command_adjacent_and_detour() -> None:
    grid = load_map(OPEN_5X5)

    assert next_command(Path((Cell(2, 2), Cell(2, 3), Cell(2, 4))), Cell(2, 2), grid) is Direction.EAST
    assert next_command(Path((Cell(2, 2), Cell(4, 2), Cell(4, 3))), Cell(2, 2), grid) is Direction.SOUTH


def test_next_command_skips_reached_waypoint() -> None:
    grid = load_map(OPEN_5X5)
    path = Path((Cell(2, 1), Cell(2, 2), Cell(3, 2), Cell(4, 2)))

    assert next_command(path, Cell(2, 2), grid) is Direction.SOUTH
    assert advance(path, Cell(2, 2)).waypoints == (Cell(2, 2), Cell(3, 2), Cell(4, 2))


def test_next_command_needs_a_waypoint_ahead() -> None:
    grid = load_map(OPEN_5X5)
    with pytest.raises(ValueError):
        next_command(Path((Cell(4, 4),)), Cell(4, 4), grid)


def test_truncate() -> None:
    a, b, c = Cell(1, 1), Cell(1, 2), Cell(1, 3)

    assert truncate(Path((a, b, c))).waypoints == (b, c)
    assert truncate(Path((a, b))).waypoints == (b,)
    assert truncate(Path((c,))).waypoints == (c,)


def test_random_start_goal_respects_separation() -> None:
    grid = load_map(_open_map(100))
    rng = np.random.default_rng(2)
    for _ in range(5):
        start, goal = random_start_goal(grid, 50, rng)
        assert start != goal
        assert distances_from(grid, start)[goal] >= 50


def test_random_start_goal_without_separation(rng) -> None:
    grid = load_map(OPEN_5X5)
    start, goal = random_start_goal(grid, 0, rng)

    assert grid.is_free(start) and grid.is_free(goal)
    assert start != goal


def test_random_start_goal_impossible(rng) -> None:
    grid = load_map("S..\n...\n..G\n")
    with pytest.raises(ConfigurationError):
        random_start_goal(grid, 50, rng, max_retries=200)
