"""One-step constrained bandit: Move risks failure, Localize is safe but costs a reward unit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from src.errors import ConfigurationError
from src.learning.nnsub import LstmState
from src.learning.rsac import EpisodeRecord, RecurrentSac, Transition, actor_step
from src.planners.policy import HighLevelAction, Planner, PlannerInput
from src.world.belief import PlannerObservation
from src.world.gridworld import Status

BANDIT_OBSERVATION = PlannerObservation(p_hat=0.0, d_hat=1)


@dataclass(frozen=True)
class ConstrainedBandit:
    p_fail_move: float = 0.5
    r_local: float = -1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_fail_move <= 1.0:
            raise ConfigurationError(f"p_fail_move must lie in [0, 1], got {self.p_fail_move}.")

    def rollout(self, planner: Planner, rng: np.random.Generator) -> EpisodeRecord:
        planner.reset()
        action = planner.decide(PlannerInput(BANDIT_OBSERVATION, HighLevelAction.MOVE))
        failed = action is HighLevelAction.MOVE and rng.random() < self.p_fail_move
        transition = Transition(
            obs=BANDIT_OBSERVATION,
            prev_action=HighLevelAction.MOVE,
            action=action,
            base_reward=self.r_local if action is HighLevelAction.LOCALIZE else 0.0,
            safe_indicator=0 if failed else 1,
            done=True,
        )
        return EpisodeRecord((transition,), Status.FAILED if failed else Status.REACHED_GOAL)

    def optimal_localize_probability(self, c_hat: float, resolution: int = 10_000) -> float:
        """Cheapest localize probability whose failure rate stays within `c_hat`, by grid enumeration."""
        mix = np.linspace(0.0, 1.0, resolution + 1)
        failure = self.p_fail_move * (1.0 - mix)
        feasible = mix[failure <= c_hat + 1e-12]
        expected_reward = self.r_local * feasible
        return float(feasible[np.argmax(expected_reward)])


def localize_probability(nets: RecurrentSac) -> float:
    """Actor's pi(Localize) at the bandit's only decision."""
    planner_input = PlannerInput(BANDIT_OBSERVATION, HighLevelAction.MOVE)
    logits, _ = actor_step(nets, LstmState.zeros(nets.hyper.lstm_hidden), planner_input)
    return float(torch.softmax(logits, dim=-1)[int(HighLevelAction.LOCALIZE)])
