"""Evaluation campaigns: metrics, noise and risk sweeps, localization heatmaps, planner comparison."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, replace
from typing import Literal

import numpy as np
import pandas as pd

from src.config import RunConfig
from src.errors import ConfigurationError
from src.harness.episode import EpisodeResult, build_planner, episode_grid, run_episode, train_policy
from src.learning.rsac import RecurrentPlanner
from src.planners.policy import HighLevelAction, Planner
from src.world.gridworld import GridMap, ObservationNoise, TransitionNoise, read_map

logger = logging.getLogger(__name__)

SweepAxis = Literal["transition", "observation", "risk"]
SWEEP_AXES: tuple[str, ...] = ("transition", "observation", "risk")

METRIC_COLUMNS = [
    "n_runs",
    "success_rate",
    "failure_rate",
    "mean_localizations",
    "mean_steps",
    "mean_inference_ms",
    "collision_rate",
    "timeout_rate",
]
HEATMAP_COLUMNS = ["row", "col", "visits", "localizations", "probability"]
UNAVAILABLE_PLANNER = "CC-POMCP"
PATH_STREAM = 1


@dataclass(frozen=True)
class MetricsSummary:
    n_runs: int
    success_rate: float
    failure_rate: float
    mean_localizations: float
    mean_steps: float
    mean_inference_ms: float
    collision_rate: float
    timeout_rate: float

    @classmethod
    def from_results(cls, results: Sequence[EpisodeResult]) -> MetricsSummary:
        if not results:
            raise ValueError("Cannot summarise an empty campaign.")
        n_runs = len(results)
        successes = sum(result.success for result in results)
        causes = [result.failure_cause for result in results]
        decide_ms = np.concatenate([result.trace["decide_ms"].to_numpy(dtype=float) for result in results])
        return cls(
            n_runs=n_runs,
            success_rate=successes / n_runs,
            failure_rate=(n_runs - successes) / n_runs,
            mean_localizations=float(np.mean([result.n_localize for result in results])),
            mean_steps=float(np.mean([result.n_steps for result in results])),
            mean_inference_ms=float(decide_ms.mean()) if len(decide_ms) else 0.0,
            collision_rate=causes.count("collision") / n_runs,
            timeout_rate=causes.count("timeout") / n_runs,
        )

    @classmethod
    def average(cls, summaries: Sequence[MetricsSummary]) -> MetricsSummary:
        """Unweighted mean over planners of one group."""
        frame = pd.DataFrame([summary.as_row() for summary in summaries])
        means = frame.mean()
        return cls(
            n_runs=int(frame["n_runs"].sum()),
            **{column: float(means[column]) for column in METRIC_COLUMNS if column != "n_runs"},
        )

    def as_row(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class HeatmapGrid:
    """Per-cell decision counts keyed by the belief mean at decision time."""

    localize_counts: np.ndarray
    visit_counts: np.ndarray

    def __post_init__(self) -> None:
        if self.localize_counts.shape != self.visit_counts.shape:
            raise ValueError("Heatmap count tables must share one shape.")
        if (self.localize_counts > self.visit_counts).any():
            raise ValueError("A cell cannot be localized at more often than it is visited.")

    @property
    def probabilities(self) -> np.ndarray:
        """Localize probability per cell; NaN where the belief mean never landed."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.visit_counts > 0, self.localize_counts / self.visit_counts, np.nan)

    def to_frame(self) -> pd.DataFrame:
        rows, cols = np.nonzero(self.visit_counts)
        visits = self.visit_counts[rows, cols]
        localizations = self.localize_counts[rows, cols]
        return pd.DataFrame(
            {
                "row": rows,
                "col": cols,
                "visits": visits,
                "localizations": localizations,
                "probability": localizations / visits,
            },
            columns=HEATMAP_COLUMNS,
        )


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for episode `index`; every planner sees the same stream for the same index."""
    return np.random.default_rng([seed, index])


def run_campaign(
    cfg: RunConfig,
    planner: Planner,
    *,
    episodes: int | None = None,
    grid: GridMap | None = None,
) -> list[EpisodeResult]:
    base_grid = grid if grid is not None else read_map(cfg.map_path)
    count = cfg.episodes if episodes is None else episodes
    results = []
    for index in range(count):
        episode_map = episode_grid(cfg, base_grid, np.random.default_rng([cfg.seed, index, PATH_STREAM]))
        results.append(run_episode(cfg, planner, episode_rng(cfg.seed, index), grid=episode_map))
    return results


def evaluate(cfg: RunConfig, planner: Planner, *, grid: GridMap | None = None) -> MetricsSummary:
    summary = MetricsSummary.from_results(run_campaign(cfg, planner, grid=grid))
    logger.info(
        "%s on %s: success %.2f, localizations %.2f, steps %.1f, decide %.3f ms over %d runs",
        planner.name,
        cfg.map_path,
        summary.success_rate,
        summary.mean_localizations,
        summary.mean_steps,
        summary.mean_inference_ms,
        summary.n_runs,
    )
    return summary


def _trained_planner(cfg: RunConfig) -> Planner:
    result = train_policy(cfg, "riskrl")
    return RecurrentPlanner(result.nets, mode="greedy", name=f"riskrl@{cfg.risk.c_hat:g}")


def sweep_config(cfg: RunConfig, axis: SweepAxis, value: float) -> RunConfig:
    if axis == "transition":
        return replace(cfg, transition=TransitionNoise.from_forward(value))
    if axis == "observation":
        return replace(cfg, localize_kernel=ObservationNoise.from_center(value))
    if axis == "risk":
        return replace(cfg, risk=cfg.risk.with_c_hat(value))
    raise ConfigurationError(f"Unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}.")


def sweep(
    cfg: RunConfig,
    axis: SweepAxis,
    values: Iterable[float],
    planner: Planner | None = None,
    *,
    trainer: Callable[[RunConfig], Planner] = _trained_planner,
) -> pd.DataFrame:
    """One evaluation per value with shared seeds; the risk axis retrains a policy for every value."""
    values = [float(value) for value in values]
    if not values:
        raise ConfigurationError("A sweep needs at least one value.")
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"Unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}.")
    if planner is None and axis != "risk":
        raise ConfigurationError(f"The {axis} sweep needs a planner.")

    grid = read_map(cfg.map_path)
    rows = []
    for value in values:
        value_cfg = sweep_config(cfg, axis, value)
        value_planner = trainer(value_cfg) if axis == "risk" else planner
        summary = evaluate(value_cfg, value_planner, grid=grid)
        rows.append({"axis": axis, "value": value, "planner": value_planner.name, **summary.as_row()})
    return pd.DataFrame(rows, columns=["axis", "value", "planner", *METRIC_COLUMNS])


def heatmap(cfg: RunConfig, planner: Planner, runs: int | None = None) -> HeatmapGrid:
    if cfg.randomize_path:
        raise ConfigurationError("Heatmaps need a predefined path; disable randomize_path.")
    grid = read_map(cfg.map_path)
    localize_counts = np.zeros((grid.height, grid.width), dtype=np.int64)
    visit_counts = np.zeros_like(localize_counts)
    for result in run_campaign(cfg, planner, episodes=runs or cfg.heatmap_runs, grid=grid):
        cells = result.trace[["mean_row", "mean_col"]].to_numpy(dtype=np.int64)
        localized = (result.trace["action"] == HighLevelAction.LOCALIZE.name).to_numpy()
        np.add.at(visit_counts, (cells[:, 0], cells[:, 1]), 1)
        np.add.at(localize_counts, (cells[localized, 0], cells[localized, 1]), 1)
    return HeatmapGrid(localize_counts=localize_counts, visit_counts=visit_counts)


def default_planner_groups(riskrl_checkpoint: str | None, baserl_checkpoint: str | None) -> dict[str, list[str]]:
    groups = {
        "SP(2)": ["static:2"],
        "SP(3)": ["static:3"],
        "TP": ["threshold:0.1", "threshold:0.2", "threshold:0.4"],
    }
    if baserl_checkpoint:
        groups["BaseRL"] = [f"baserl:{baserl_checkpoint}"]
    if riskrl_checkpoint:
        groups["RiskRL"] = [f"riskrl:{riskrl_checkpoint}"]
    return groups


def compare(
    configs: Mapping[str, RunConfig],
    groups: Mapping[str, Sequence[str]],
    *,
    planner_factory: Callable[[str], Planner] = build_planner,
) -> pd.DataFrame:
    """Metrics per (environment, planner group); members of a group are averaged."""
    rows = []
    for environment, cfg in configs.items():
        grid = read_map(cfg.map_path)
        for group, specs in groups.items():
            if not specs:
                raise ConfigurationError(f"Planner group {group!r} is empty.")
            summaries = [evaluate(cfg, planner_factory(spec), grid=grid) for spec in specs]
            rows.append({"environment": environment, "planner": group, **MetricsSummary.average(summaries).as_row()})
        rows.append({"environment": environment, "planner": UNAVAILABLE_PLANNER})
    return pd.DataFrame(rows, columns=["environment", "planner", *METRIC_COLUMNS])
