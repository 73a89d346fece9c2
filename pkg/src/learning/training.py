"""Primal-dual training loop: rollout, replay, SAC update on shaped rewards, projected dual step."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd

from src.learning.riskrl import DualState, RiskConfig, dual_update, initial_dual, trajectory_constraint_estimate
from src.learning.rsac import EpisodeRecord, RecurrentPlanner, RecurrentSac, ReplayBuffer, SacHyper, update_step
from src.planners.policy import Planner

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["episode", "success", "n_localize", "lambda", "U_estimate", "actor_loss", "critic_loss"]


class EpisodeSource(Protocol):
    """Anything that can play one episode with a planner and return its record."""

    def rollout(self, planner: Planner, rng: np.random.Generator) -> EpisodeRecord: ...


@dataclass
class TrainingResult:
    nets: RecurrentSac
    dual: DualState
    curves: pd.DataFrame
    buffer: ReplayBuffer

    def save(self, path: str | Path, *, kind: str = "riskrl") -> Path:
        return self.nets.save(
            path,
            extra={
                "kind": kind,
                "lambda": float(self.dual.lambda_val),
                "threshold_c": float(self.dual.threshold_c),
                "episodes_seen": int(self.buffer.episodes_seen),
            },
        )


def train(
    source: EpisodeSource,
    cfg: RiskConfig,
    hyper: SacHyper,
    budget: int,
    rng: np.random.Generator,
    *,
    freeze_dual: bool = False,
    lambda_init: float | None = None,
    seed: int | None = None,
    log_every: int = 10,
    nets: RecurrentSac | None = None,
) -> TrainingResult:
    """Run `budget` training episodes; `freeze_dual` keeps lambda at its initial value."""
    if budget < 0:
        raise ValueError(f"Training budget must be nonnegative, got {budget}.")
    if nets is None:
        net_seed = int(rng.integers(2**31 - 1)) if seed is None else seed
        nets = RecurrentSac.create(hyper, seed=net_seed)
    buffer = ReplayBuffer(hyper.buffer_capacity)
    dual = initial_dual(cfg, lambda_init=lambda_init)
    window: deque[float] = deque(maxlen=cfg.window)
    planner = RecurrentPlanner(nets, mode="sample", rng=rng, name="training")
    rows: list[dict[str, float]] = []

    for episode_index in range(budget):
        episode = source.rollout(planner, rng)
        buffer.append(episode)

        actor_loss = critic_loss = np.nan
        if len(buffer) >= hyper.batch_size:
            for _ in range(hyper.updates_for(len(episode))):
                diagnostics = update_step(nets, buffer, hyper, dual.lambda_val, cfg, rng)
                if not diagnostics["skipped"]:
                    actor_loss = diagnostics["actor_loss"]
                    critic_loss = diagnostics["critic_loss"]

        u_estimate = trajectory_constraint_estimate(episode, cfg) if len(episode) else 0.0
        window.append(u_estimate)
        if not freeze_dual:
            dual = dual_update(dual, float(np.mean(window)), cfg)

        rows.append(
            {
                "episode": episode_index,
                "success": float(episode.success),
                "n_localize": episode.n_localize,
                "lambda": dual.lambda_val,
                "U_estimate": u_estimate,
                "actor_loss": actor_loss,
                "critic_loss": critic_loss,
            }
        )
        if log_every and (episode_index + 1) % log_every == 0:
            recent = rows[-log_every:]
            logger.info(
                "episode %d: success %.2f, localizations %.1f, lambda %.4f, U %.3f (c %.3f), actor %.4f, critic %.4f",
                episode_index + 1,
                np.mean([row["success"] for row in recent]),
                np.mean([row["n_localize"] for row in recent]),
                dual.lambda_val,
                float(np.mean(window)),
                dual.threshold_c,
                actor_loss,
                critic_loss,
            )

    curves = pd.DataFrame(rows, columns=CURVE_COLUMNS)
    nets.metadata.update({"lambda": float(dual.lambda_val), "episodes_seen": buffer.episodes_seen})
    return TrainingResult(nets=nets, dual=dual, curves=curves, buffer=buffer)
