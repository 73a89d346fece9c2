"""Chance-constraint machinery: risk-adjusted threshold, shaped reward, constraint estimate, dual step."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Literal

import numpy as np

from src.errors import ConfigurationError

if TYPE_CHECKING:
    from src.learning.rsac import EpisodeRecord, Transition

FormulaMode = Literal["complement", "literal"]
FORMULA_MODES: tuple[str, ...] = ("complement", "literal")


@dataclass(frozen=True)
class RiskConfig:
    """Allowed failure probability and the dual-ascent settings around it.

    `formula_mode="complement"` reads the constraint as time-averaged safety of at
    least `1 - c_hat`; `"literal"` keeps the printed closed form
    `(1 - c_hat * gamma**T * (1 - gamma)) / (1 - gamma)` for comparison runs.
    """

    c_hat: float = 0.4
    gamma: float = 0.9
    horizon_T: int = 200
    lambda_lr: float = 0.01
    lambda_init: float = 1.0
    formula_mode: FormulaMode = "complement"
    window: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.c_hat <= 1.0:
            raise ConfigurationError(f"c_hat must lie in [0, 1], got {self.c_hat}.")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"Risk discount gamma must lie in (0, 1), got {self.gamma}.")
        if self.horizon_T < 1:
            raise ConfigurationError(f"horizon_T must be at least 1, got {self.horizon_T}.")
        if self.lambda_lr <= 0:
            raise ConfigurationError(f"lambda_lr must be positive, got {self.lambda_lr}.")
        if self.lambda_init < 0:
            raise ConfigurationError(f"lambda_init must be nonnegative, got {self.lambda_init}.")
        if self.formula_mode not in FORMULA_MODES:
            raise ConfigurationError(
                f"Unknown formula_mode {self.formula_mode!r}; expected one of {FORMULA_MODES}."
            )
        if self.window < 1:
            raise ConfigurationError(f"Running-mean window must be at least 1, got {self.window}.")

    def with_c_hat(self, c_hat: float) -> RiskConfig:
        return replace(self, c_hat=c_hat)


@dataclass(frozen=True)
class DualState:
    lambda_val: float
    threshold_c: float

    def __post_init__(self) -> None:
        if self.lambda_val < 0:
            raise ConfigurationError(f"Dual variable must be nonnegative, got {self.lambda_val}.")


def compute_threshold(cfg: RiskConfig) -> float:
    gamma = cfg.gamma
    if cfg.formula_mode == "literal":
        return (1.0 - cfg.c_hat * gamma**cfg.horizon_T * (1.0 - gamma)) / (1.0 - gamma)
    return (1.0 - cfg.c_hat) * (1.0 - gamma ** (cfg.horizon_T + 1)) / (1.0 - gamma)


def horizon_mass(cfg: RiskConfig) -> float:
    """Discount mass of the whole horizon, sum_{t=0}^{T} gamma**t."""
    return (1.0 - cfg.gamma ** (cfg.horizon_T + 1)) / (1.0 - cfg.gamma)


def tail_mass(step: int, cfg: RiskConfig) -> float:
    """Discount mass after `step` up to the horizon, seen from `step`: sum_{j=1}^{T-step} gamma**j."""
    remaining = cfg.horizon_T - step
    if remaining <= 0:
        return 0.0
    return cfg.gamma * (1.0 - cfg.gamma**remaining) / (1.0 - cfg.gamma)


def initial_dual(cfg: RiskConfig, *, lambda_init: float | None = None) -> DualState:
    value = cfg.lambda_init if lambda_init is None else lambda_init
    return DualState(lambda_val=float(value), threshold_c=compute_threshold(cfg))


def shaped_reward(transition: Transition, lambda_val: float, cfg: RiskConfig) -> float:
    """r + lambda * (safe - c * (1 - gamma))."""
    if lambda_val < 0:
        raise ConfigurationError(f"Dual variable must be nonnegative, got {lambda_val}.")
    per_step_bound = compute_threshold(cfg) * (1.0 - cfg.gamma)
    return transition.base_reward + lambda_val * (transition.safe_indicator - per_step_bound)


def constraint_estimate(episode: EpisodeRecord, cfg: RiskConfig) -> float:
    """Discounted safety mass of one rollout, sum_t gamma**t * safe_t."""
    if len(episode.transitions) == 0:
        raise ValueError("Constraint estimate needs a nonempty episode.")
    safe = np.array([transition.safe_indicator for transition in episode.transitions], dtype=float)
    discounts = cfg.gamma ** np.arange(len(safe))
    return float(discounts @ safe)


def dual_update(dual: DualState, u_estimate: float, cfg: RiskConfig) -> DualState:
    """Projected descent: lambda <- max(0, lambda - eta * (U - c))."""
    stepped = dual.lambda_val - cfg.lambda_lr * (u_estimate - dual.threshold_c)
    return replace(dual, lambda_val=max(0.0, stepped))


def terminal_shaping(step: int, reached_goal: bool, lambda_val: float, cfg: RiskConfig) -> float:
    """Shaped reward of the absorbing tail after an episode's last step, discounted to that step.

    The goal is absorbing-safe and a failure is absorbing-unsafe, so the tail pays
    `lambda * (safe - c * (1 - gamma))` every remaining step out to the horizon.
    """
    if lambda_val < 0:
        raise ConfigurationError(f"Dual variable must be nonnegative, got {lambda_val}.")
    per_step_bound = compute_threshold(cfg) * (1.0 - cfg.gamma)
    return lambda_val * (float(reached_goal) - per_step_bound) * tail_mass(step, cfg)


def trajectory_constraint_estimate(episode: EpisodeRecord, cfg: RiskConfig) -> float:
    """Sample of the chance constraint for the dual step.

    A rollout that reaches the goal is safe for the whole horizon and scores
    `horizon_mass`; one that fails (collision or timeout) scores 0. The mean is
    `(1 - P(fail)) * horizon_mass`, which clears the complement threshold exactly
    when `P(fail) <= c_hat`.
    """
    if len(episode.transitions) == 0:
        raise ValueError("Constraint estimate needs a nonempty episode.")
    return horizon_mass(cfg) if episode.success else 0.0
