"""Run configuration: reward rows, the RunConfig container and the TOML loader."""

from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback with the same API
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from src.errors import ConfigurationError
from src.learning.riskrl import RiskConfig
from src.learning.rsac import SacHyper
from src.planners.policy import HighLevelAction
from src.world.gridworld import ObservationNoise, Status, TransitionNoise


@dataclass(frozen=True)
class RewardTable:
    """Per-step reward row; Failed and ReachedGoal terms are added on the step that ends the episode."""

    r_goal: float = 0.0
    r_move: float = 0.0
    r_local: float = -1.0
    r_fail: float = 0.0

    @classmethod
    def riskrl(cls) -> RewardTable:
        return cls()

    @classmethod
    def baserl(cls) -> RewardTable:
        return cls(r_fail=-256.0)

    def step_reward(self, action: HighLevelAction, status: Status) -> float:
        reward = self.r_local if action is HighLevelAction.LOCALIZE else self.r_move
        if status is Status.FAILED:
            reward += self.r_fail
        elif status is Status.REACHED_GOAL:
            reward += self.r_goal
        return reward


@dataclass(frozen=True)
class RunConfig:
    """Everything one campaign needs.

    `localize_kernel` is the sensor the robot actually reads when it localizes.
    `observation_kernel` is the likelihood the particle filter assumes; `None`
    means the filter uses the sensor's own kernel.
    """

    map_path: Path = Path("data/maps/tunnel12.map")
    planner: str = "static:2"
    transition: TransitionNoise = field(default_factory=TransitionNoise)
    observation_kernel: ObservationNoise | None = None
    localize_kernel: ObservationNoise = field(default_factory=ObservationNoise.noiseless)
    risk: RiskConfig = field(default_factory=RiskConfig)
    sac: SacHyper = field(default_factory=SacHyper.riskrl)
    baserl_sac: SacHyper = field(default_factory=SacHyper.baserl)
    rewards: RewardTable = field(default_factory=RewardTable.riskrl)
    episodes: int = 100
    train_episodes: int = 200
    heatmap_runs: int = 250
    seed: int = 0
    randomize_path: bool = False
    min_separation: int = 50
    n_particles: int = 100
    max_steps: int | None = None
    output_dir: Path = Path("outputs")

    def __post_init__(self) -> None:
        object.__setattr__(self, "map_path", Path(self.map_path))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.episodes < 1:
            raise ConfigurationError(f"episodes must be at least 1, got {self.episodes}.")
        if self.train_episodes < 0:
            raise ConfigurationError(f"train_episodes must be nonnegative, got {self.train_episodes}.")
        if self.heatmap_runs < 1:
            raise ConfigurationError(f"heatmap_runs must be at least 1, got {self.heatmap_runs}.")
        if self.n_particles < 1:
            raise ConfigurationError(f"n_particles must be at least 1, got {self.n_particles}.")
        if self.min_separation < 1:
            raise ConfigurationError(f"min_separation must be at least 1, got {self.min_separation}.")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be at least 1, got {self.max_steps}.")

    @property
    def filter_kernel(self) -> ObservationNoise:
        return self.localize_kernel if self.observation_kernel is None else self.observation_kernel


def get_config() -> RunConfig:
    """Return the reference run configuration."""
    return RunConfig()


_RUN_KEYS = {
    "map": "map_path",
    "planner": "planner",
    "episodes": "episodes",
    "train_episodes": "train_episodes",
    "heatmap_runs": "heatmap_runs",
    "seed": "seed",
    "randomize_path": "randomize_path",
    "min_separation": "min_separation",
    "n_particles": "n_particles",
    "max_steps": "max_steps",
    "output_dir": "output_dir",
}
_NOISE_KEYS = {"p_forward", "p_left", "p_right", "observation_center", "localize_center"}
_SECTIONS = {"run", "noise", "risk", "sac", "baserl_sac", "rewards"}


def _check_keys(section: str, values: dict[str, Any], allowed: set[str]) -> None:
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in [{section}]: {', '.join(unknown)}")


def _dataclass_section(section: str, values: dict[str, Any], base: Any) -> Any:
    _check_keys(section, values, {item.name for item in fields(base)})
    return replace(base, **values)


def _noise_section(values: dict[str, Any], base: RunConfig) -> dict[str, Any]:
    _check_keys("noise", values, _NOISE_KEYS)
    updates: dict[str, Any] = {}
    transition_keys = {"p_forward", "p_left", "p_right"} & set(values)
    if transition_keys == {"p_forward"}:
        updates["transition"] = TransitionNoise.from_forward(values["p_forward"])
    elif transition_keys:
        updates["transition"] = replace(base.transition, **{key: values[key] for key in transition_keys})
    if "observation_center" in values:
        updates["observation_kernel"] = ObservationNoise.from_center(values["observation_center"])
    if "localize_center" in values:
        updates["localize_kernel"] = ObservationNoise.from_center(values["localize_center"])
    return updates


def parse_run_config(document: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
    """Overlay a parsed TOML document on `base` (the defaults when omitted)."""
    config = base or get_config()
    unknown = sorted(set(document) - _SECTIONS)
    if unknown:
        raise ConfigurationError(f"Unknown config section(s): {', '.join(unknown)}")

    updates: dict[str, Any] = {}
    run_section = document.get("run", {})
    _check_keys("run", run_section, set(_RUN_KEYS))
    updates.update({_RUN_KEYS[key]: value for key, value in run_section.items()})
    updates.update(_noise_section(document.get("noise", {}), config))
    for section, attribute in (("risk", "risk"), ("sac", "sac"), ("baserl_sac", "baserl_sac"), ("rewards", "rewards")):
        if section in document:
            updates[attribute] = _dataclass_section(section, document[section], getattr(config, attribute))
    return replace(config, **updates)


def load_run_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Missing config file: {source}")
    with source.open("rb") as handle:
        try:
            document = tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"Config file {source} is not valid TOML: {exc}") from exc
    return parse_run_config(document, base)
