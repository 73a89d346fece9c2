"""Recurrent discrete soft actor-critic over whole-episode sequences."""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import ConfigurationError, ContractViolation
from src.learning import nnsub
from src.learning.nnsub import LstmState, ParameterStore
from src.learning.riskrl import RiskConfig, shaped_reward, terminal_shaping
from src.planners.policy import HighLevelAction, PlannerInput
from src.world.belief import PlannerObservation
from src.world.gridworld import Status

logger = logging.getLogger(__name__)

N_ACTIONS = len(HighLevelAction)
OBS_SIZE = 2

SelectionMode = Literal["sample", "greedy"]
PrimalEstimator = Literal["sac", "score_function"]


@dataclass(frozen=True)
class Transition:
    obs: PlannerObservation
    prev_action: HighLevelAction
    action: HighLevelAction
    base_reward: float
    safe_indicator: int
    done: bool

    def __post_init__(self) -> None:
        if self.safe_indicator not in (0, 1):
            raise ValueError(f"safe_indicator must be 0 or 1, got {self.safe_indicator}.")


@dataclass(frozen=True)
class EpisodeRecord:
    transitions: tuple[Transition, ...]
    outcome: Status

    def __post_init__(self) -> None:
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if self.outcome is Status.ACTIVE:
            raise ValueError("An episode record needs a terminal outcome.")
        dones = [transition.done for transition in self.transitions]
        if dones and (not dones[-1] or any(dones[:-1])):
            raise ValueError("Exactly the last transition of an episode must be marked done.")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def n_localize(self) -> int:
        return sum(transition.action is HighLevelAction.LOCALIZE for transition in self.transitions)

    @property
    def success(self) -> bool:
        return self.outcome is Status.REACHED_GOAL


class ReplayBuffer:
    """Bounded FIFO of whole episodes; append and sample share one lock."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ConfigurationError(f"Replay capacity must be at least 1, got {capacity}.")
        self.capacity = capacity
        self._episodes: deque[EpisodeRecord] = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.episodes_seen = 0

    def __len__(self) -> int:
        return len(self._episodes)

    def append(self, episode: EpisodeRecord) -> None:
        with self._lock:
            self._episodes.append(episode)
            self.episodes_seen += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        with self._lock:
            count = min(batch_size, len(self._episodes))
            indices = rng.choice(len(self._episodes), size=count, replace=False) if count else []
            return [self._episodes[int(index)] for index in indices]


@dataclass(frozen=True)
class SacHyper:
    lr: float = 1e-4
    gamma: float = 0.9
    alpha: float = 0.5
    tau_soft: float = 0.005
    dqn_layers: tuple[int, ...] = (128, 128)
    policy_layers: tuple[int, ...] = (128, 128)
    obs_emb: int = 32
    action_emb: int = 8
    lstm_hidden: int = 64
    batch_size: int = 8
    buffer_capacity: int = 512
    updates_per_episode: int = 1
    updates_per_step: float = 1.0
    distance_scale: float = 50.0
    primal_estimator: PrimalEstimator = "sac"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "dqn_layers", tuple(int(size) for size in self.dqn_layers))
        object.__setattr__(self, "policy_layers", tuple(int(size) for size in self.policy_layers))
        object.__setattr__(self, "betas", tuple(float(beta) for beta in self.betas))
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"SAC discount gamma must lie in (0, 1), got {self.gamma}.")
        if not 0.0 < self.tau_soft <= 1.0:
            raise ConfigurationError(f"tau_soft must lie in (0, 1], got {self.tau_soft}.")
        if self.alpha < 0:
            raise ConfigurationError(f"Entropy coefficient alpha must be nonnegative, got {self.alpha}.")
        if self.lr <= 0:
            raise ConfigurationError(f"Learning rate must be positive, got {self.lr}.")
        if self.primal_estimator not in ("sac", "score_function"):
            raise ConfigurationError(f"Unknown primal_estimator {self.primal_estimator!r}.")
        sizes = (self.obs_emb, self.action_emb, self.lstm_hidden, self.batch_size, self.buffer_capacity)
        if min(sizes) < 1 or self.updates_per_episode < 0 or self.updates_per_step < 0 or self.distance_scale <= 0:
            raise ConfigurationError("Layer sizes, batch size and capacity must be positive.")
        if any(size < 1 for size in self.dqn_layers + self.policy_layers):
            raise ConfigurationError("Hidden layer sizes must be positive.")

    @classmethod
    def riskrl(cls) -> SacHyper:
        return cls()

    @classmethod
    def baserl(cls) -> SacHyper:
        return cls(lr=0.00012, gamma=0.95, alpha=0.25, dqn_layers=(64, 64), policy_layers=(64, 64))

    def updates_for(self, episode_length: int) -> int:
        """Gradient steps per collected episode: `updates_per_step` per transition, at least `updates_per_episode`."""
        return max(self.updates_per_episode, round(self.updates_per_step * episode_length))

    def to_metadata(self) -> dict[str, Any]:
        values = asdict(self)
        for key in ("dqn_layers", "policy_layers", "betas"):
            values[key] = list(values[key])
        return values

    @classmethod
    def from_metadata(cls, values: dict[str, Any]) -> SacHyper:
        return cls(**{key: tuple(value) if isinstance(value, list) else value for key, value in values.items()})


@dataclass
class RecurrentSac:
    """Actor, twin critics on a shared critic LSTM, and the critics' target copy."""

    hyper: SacHyper
    actor: ParameterStore
    critic: ParameterStore
    target: ParameterStore
    updates_done: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def create(cls, hyper: SacHyper, seed: int = 0) -> RecurrentSac:
        generator = torch.Generator().manual_seed(seed)
        actor = _init_recurrent_trunk(hyper, generator)
        nnsub.init_mlp(actor, "head", _head_sizes(hyper, hyper.policy_layers), generator)
        critic = _init_recurrent_trunk(hyper, generator)
        for head in ("q1", "q2"):
            nnsub.init_mlp(critic, head, _head_sizes(hyper, hyper.dqn_layers), generator)
        return cls(hyper=hyper, actor=actor, critic=critic, target=critic.clone())

    def save(self, path: str | Path, *, extra: dict[str, Any] | None = None) -> Path:
        metadata = {
            "hyper": self.hyper.to_metadata(),
            "updates_done": self.updates_done,
            **self.metadata,
            **(extra or {}),
        }
        stores = {"actor": self.actor, "critic": self.critic, "target": self.target}
        return nnsub.save_checkpoint(path, stores, metadata)

    @classmethod
    def load(cls, path: str | Path) -> RecurrentSac:
        stores, metadata = nnsub.load_checkpoint(path)
        hyper = SacHyper.from_metadata(dict(metadata.pop("hyper")))
        updates_done = int(metadata.pop("updates_done", 0))
        return cls(
            hyper=hyper,
            actor=stores["actor"],
            critic=stores["critic"],
            target=stores["target"],
            updates_done=updates_done,
            metadata=metadata,
        )


def _head_sizes(hyper: SacHyper, hidden_layers: tuple[int, ...]) -> list[int]:
    return [hyper.lstm_hidden, *hidden_layers, N_ACTIONS]


def _init_recurrent_trunk(hyper: SacHyper, generator: torch.Generator) -> ParameterStore:
    store = ParameterStore()
    nnsub.init_mlp(store, "obs_emb", [OBS_SIZE, hyper.obs_emb], generator)
    nnsub.init_mlp(store, "act_emb", [N_ACTIONS, hyper.action_emb], generator)
    nnsub.init_lstm(store, "lstm", hyper.obs_emb + hyper.action_emb, hyper.lstm_hidden, generator)
    return store


def encode_observation(obs: PlannerObservation, hyper: SacHyper) -> torch.Tensor:
    return torch.tensor([obs.p_hat, obs.d_hat / hyper.distance_scale], dtype=nnsub.DTYPE)


def encode_action(action: HighLevelAction) -> torch.Tensor:
    return F.one_hot(torch.tensor(int(action)), N_ACTIONS).to(nnsub.DTYPE)


def _trunk_input(store: ParameterStore, hyper: SacHyper, obs: torch.Tensor, prev: torch.Tensor) -> torch.Tensor:
    obs_features = nnsub.mlp_forward(store, "obs_emb", [OBS_SIZE, hyper.obs_emb], "relu", obs, activate_output=True)
    act_features = nnsub.mlp_forward(
        store, "act_emb", [N_ACTIONS, hyper.action_emb], "relu", prev, activate_output=True
    )
    return torch.cat([obs_features, act_features], dim=-1)


def _head(store: ParameterStore, prefix: str, hyper: SacHyper, layers: tuple[int, ...], hidden: torch.Tensor) -> torch.Tensor:
    return nnsub.mlp_forward(store, prefix, _head_sizes(hyper, layers), "relu", hidden)


def actor_step(
    nets: RecurrentSac,
    lstm_state: LstmState,
    planner_input: PlannerInput,
) -> tuple[torch.Tensor, LstmState]:
    """Actor logits for one decision and the advanced recurrent state, without gradients."""
    hyper = nets.hyper
    with torch.no_grad():
        features = _trunk_input(
            nets.actor,
            hyper,
            encode_observation(planner_input.obs, hyper),
            encode_action(planner_input.prev_action),
        )
        next_state = nnsub.lstm_step(nets.actor, "lstm", features, lstm_state)
        logits = _head(nets.actor, "head", hyper, hyper.policy_layers, next_state.hidden)
    return logits, next_state


def select_action(
    nets: RecurrentSac,
    lstm_state: LstmState,
    planner_input: PlannerInput,
    mode: SelectionMode,
    rng: np.random.Generator,
) -> tuple[HighLevelAction, LstmState, float]:
    """One recurrent actor step; returns the action, the advanced state and log pi(action)."""
    logits, next_state = actor_step(nets, lstm_state, planner_input)
    if not torch.isfinite(logits).all():
        raise ContractViolation(f"Actor produced non-finite logits {logits.tolist()}.")
    log_probs = torch.log_softmax(logits, dim=-1)

    if mode == "greedy":
        index = 0 if logits[0] >= logits[1] else 1
    elif mode == "sample":
        index = 0 if rng.random() < float(log_probs[0].exp()) else 1
    else:
        raise ConfigurationError(f"Unknown selection mode {mode!r}.")
    return HighLevelAction(index), next_state, float(log_probs[index])


@dataclass(frozen=True)
class EpisodeBatch:
    """Padded (batch, time) tensors for a set of episodes; `mask` marks real steps."""

    obs: torch.Tensor
    prev_action: torch.Tensor
    action: torch.Tensor
    reward: torch.Tensor
    done: torch.Tensor
    mask: torch.Tensor

    @property
    def n_steps(self) -> float:
        return float(self.mask.sum())


def batch_episodes(
    episodes: list[EpisodeRecord],
    hyper: SacHyper,
    lambda_val: float,
    risk: RiskConfig,
) -> EpisodeBatch:
    """Pad episodes to a common length and attach their shaped rewards, absorbing tail included."""
    length = max(len(episode) for episode in episodes)
    shape = (len(episodes), length)
    obs = torch.zeros((*shape, OBS_SIZE), dtype=nnsub.DTYPE)
    prev_action = torch.zeros((*shape, N_ACTIONS), dtype=nnsub.DTYPE)
    action = torch.zeros(shape, dtype=torch.long)
    reward = torch.zeros(shape, dtype=nnsub.DTYPE)
    done = torch.zeros(shape, dtype=nnsub.DTYPE)
    mask = torch.zeros(shape, dtype=nnsub.DTYPE)
    for row, episode in enumerate(episodes):
        for step, transition in enumerate(episode.transitions):
            obs[row, step] = encode_observation(transition.obs, hyper)
            prev_action[row, step] = encode_action(transition.prev_action)
            action[row, step] = int(transition.action)
            reward[row, step] = shaped_reward(transition, lambda_val, risk)
            done[row, step] = float(transition.done)
            mask[row, step] = 1.0
        if episode.transitions:
            last = len(episode) - 1
            reward[row, last] += terminal_shaping(last, episode.success, lambda_val, risk)
    return EpisodeBatch(obs=obs, prev_action=prev_action, action=action, reward=reward, done=done, mask=mask)


def unroll(store: ParameterStore, hyper: SacHyper, batch: EpisodeBatch) -> torch.Tensor:
    """Hidden states (batch, time, hidden), each row starting from a zero state."""
    features = _trunk_input(store, hyper, batch.obs, batch.prev_action)
    state = LstmState.zeros(hyper.lstm_hidden, batch=features.shape[0])
    hidden = []
    for step in range(features.shape[1]):
        state = nnsub.lstm_step(store, "lstm", features[:, step], state)
        hidden.append(state.hidden)
    return torch.stack(hidden, dim=1)


def policy_log_probs(nets: RecurrentSac, batch: EpisodeBatch) -> torch.Tensor:
    hidden = unroll(nets.actor, nets.hyper, batch)
    logits = _head(nets.actor, "head", nets.hyper, nets.hyper.policy_layers, hidden)
    return torch.log_softmax(logits, dim=-1)


def critic_values(store: ParameterStore, hyper: SacHyper, batch: EpisodeBatch) -> tuple[torch.Tensor, torch.Tensor]:
    hidden = unroll(store, hyper, batch)
    return (
        _head(store, "q1", hyper, hyper.dqn_layers, hidden),
        _head(store, "q2", hyper, hyper.dqn_layers, hidden),
    )


def critic_targets(nets: RecurrentSac, batch: EpisodeBatch) -> torch.Tensor:
    """r_hat + gamma * (1 - done) * sum_a pi(a|h') (min_i Q'_i(h', a) - alpha * log pi(a|h'))."""
    hyper = nets.hyper
    with torch.no_grad():
        q1, q2 = critic_values(nets.target, hyper, batch)
        log_pi = policy_log_probs(nets, batch)
        soft_value = (log_pi.exp() * (torch.minimum(q1, q2) - hyper.alpha * log_pi)).sum(dim=-1)
        next_value = torch.zeros_like(soft_value)
        next_value[:, :-1] = soft_value[:, 1:]
        return batch.reward + hyper.gamma * (1.0 - batch.done) * next_value


def reward_to_go(batch: EpisodeBatch, gamma: float) -> torch.Tensor:
    returns = torch.zeros_like(batch.reward)
    running = torch.zeros(batch.reward.shape[0], dtype=nnsub.DTYPE)
    for step in reversed(range(batch.reward.shape[1])):
        running = (batch.reward[:, step] + gamma * running) * batch.mask[:, step]
        returns[:, step] = running
    return returns


def _masked_mean(values: torch.Tensor, batch: EpisodeBatch) -> torch.Tensor:
    return (values * batch.mask).sum() / batch.mask.sum()


def update_step(
    nets: RecurrentSac,
    buffer: ReplayBuffer,
    hyper: SacHyper,
    lambda_now: float,
    risk: RiskConfig,
    rng: np.random.Generator,
) -> dict[str, Any]:
    """One critic step, one actor step and a soft target update on a sampled batch of episodes."""
    episodes = [episode for episode in buffer.sample(hyper.batch_size, rng) if len(episode) > 0]
    if not episodes:
        logger.warning("Skipping update: sampled batch holds no transitions.")
        return {"skipped": True, "reason": "empty batch"}

    batch = batch_episodes(episodes, hyper, lambda_now, risk)

    targets = critic_targets(nets, batch)
    q1, q2 = critic_values(nets.critic, hyper, batch)
    taken = batch.action.unsqueeze(-1)
    q1_taken = q1.gather(-1, taken).squeeze(-1)
    q2_taken = q2.gather(-1, taken).squeeze(-1)
    critic_loss = _masked_mean((q1_taken - targets) ** 2 + (q2_taken - targets) ** 2, batch)
    nets.critic.zero_grad()
    nnsub.backward(critic_loss)
    nnsub.adam_step(nets.critic, hyper.lr, hyper.betas, hyper.eps)

    log_pi = policy_log_probs(nets, batch)
    pi = log_pi.exp()
    if hyper.primal_estimator == "score_function":
        returns = reward_to_go(batch, hyper.gamma)
        log_pi_taken = log_pi.gather(-1, taken).squeeze(-1)
        actor_loss = -_masked_mean(returns * log_pi_taken, batch)
    else:
        with torch.no_grad():
            q1_now, q2_now = critic_values(nets.critic, hyper, batch)
            min_q = torch.minimum(q1_now, q2_now)
        actor_loss = _masked_mean((pi * (hyper.alpha * log_pi - min_q)).sum(dim=-1), batch)
    nets.actor.zero_grad()
    nnsub.backward(actor_loss)
    nnsub.adam_step(nets.actor, hyper.lr, hyper.betas, hyper.eps)

    nnsub.soft_update(nets.critic, nets.target, hyper.tau_soft)
    nets.updates_done += 1

    critic_value = float(critic_loss.detach())
    actor_value = float(actor_loss.detach())
    if not (np.isfinite(critic_value) and np.isfinite(actor_value)):
        raise ContractViolation(f"Non-finite losses: critic {critic_value}, actor {actor_value}.")
    entropy = float(_masked_mean(-(pi * log_pi).sum(dim=-1), batch).detach())
    return {
        "skipped": False,
        "critic_loss": critic_value,
        "actor_loss": actor_value,
        "q_mean": float(_masked_mean(torch.minimum(q1_taken, q2_taken), batch).detach()),
        "entropy": entropy,
        "n_steps": batch.n_steps,
    }


class RecurrentPlanner:
    """High-level planner backed by a trained actor; carries the LSTM state across decisions."""

    def __init__(
        self,
        nets: RecurrentSac,
        *,
        mode: SelectionMode = "greedy",
        rng: np.random.Generator | None = None,
        name: str = "rsac",
    ) -> None:
        self.nets = nets
        self.mode = mode
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.last_log_prob = 0.0
        self._state = LstmState.zeros(nets.hyper.lstm_hidden)

    def reset(self) -> None:
        self._state = LstmState.zeros(self.nets.hyper.lstm_hidden)
        self.last_log_prob = 0.0

    def decide(self, planner_input: PlannerInput) -> HighLevelAction:
        action, self._state, self.last_log_prob = select_action(
            self.nets, self._state, planner_input, self.mode, self.rng
        )
        return action
