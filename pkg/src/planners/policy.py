"""High-level move/localize planners and the non-learned baselines."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Protocol, runtime_checkable

from src.errors import ConfigurationError
from src.world.belief import PlannerObservation


class HighLevelAction(IntEnum):
    MOVE = 0
    LOCALIZE = 1


@dataclass(frozen=True)
class PlannerInput:
    obs: PlannerObservation
    prev_action: HighLevelAction = HighLevelAction.MOVE


@runtime_checkable
class Planner(Protocol):
    """Common interface of every high-level planner."""

    name: str

    def reset(self) -> None: ...

    def decide(self, planner_input: PlannerInput) -> HighLevelAction: ...


def decide(planner: Planner, planner_input: PlannerInput) -> HighLevelAction:
    return planner.decide(planner_input)


@dataclass
class StaticPolicy:
    """Emit `moves` Moves, then one Localize, cyclically."""

    moves: int
    name: str = ""
    _since_localize: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if self.moves < 1:
            raise ConfigurationError(f"Static policy needs at least one move per cycle, got {self.moves}.")
        if not self.name:
            self.name = f"static:{self.moves}"

    def reset(self) -> None:
        self._since_localize = 0

    def decide(self, planner_input: PlannerInput) -> HighLevelAction:
        if self._since_localize >= self.moves:
            self._since_localize = 0
            return HighLevelAction.LOCALIZE
        self._since_localize += 1
        return HighLevelAction.MOVE


@dataclass(frozen=True)
class ThresholdPolicy:
    """Localize iff the collided-particle fraction strictly exceeds `tau`."""

    tau: float
    name: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError(f"Threshold must lie in [0, 1], got {self.tau}.")
        if not self.name:
            object.__setattr__(self, "name", f"threshold:{self.tau:g}")

    def reset(self) -> None:
        return None

    def decide(self, planner_input: PlannerInput) -> HighLevelAction:
        if planner_input.obs.p_hat > self.tau:
            return HighLevelAction.LOCALIZE
        return HighLevelAction.MOVE


@dataclass(frozen=True)
class ConstantPolicy:
    action: HighLevelAction
    name: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            object.__setattr__(self, "name", f"always:{self.action.name.lower()}")

    def reset(self) -> None:
        return None

    def decide(self, planner_input: PlannerInput) -> HighLevelAction:
        return self.action


def make_static(k: int) -> StaticPolicy:
    return StaticPolicy(moves=k)


def make_threshold(tau: float) -> ThresholdPolicy:
    return ThresholdPolicy(tau=tau)


def split_planner_spec(spec: str) -> tuple[str, str]:
    kind, separator, argument = spec.strip().partition(":")
    if not separator or not argument:
        raise ConfigurationError(f"Planner spec must look like 'kind:argument', got {spec!r}.")
    return kind.lower(), argument


def parse_baseline_spec(spec: str) -> Planner:
    """Build a non-learned planner from `static:k`, `threshold:tau` or `always:move|localize`."""
    kind, argument = split_planner_spec(spec)
    try:
        if kind == "static":
            return make_static(int(argument))
        if kind == "threshold":
            return make_threshold(float(argument))
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"Bad argument in planner spec {spec!r}: {exc}") from exc
    if kind == "always":
        try:
            return ConstantPolicy(HighLevelAction[argument.upper()])
        except KeyError as exc:
            raise ConfigurationError(f"Unknown constant action in planner spec {spec!r}.") from exc
    raise ConfigurationError(f"Unknown planner kind {kind!r} in spec {spec!r}.")
