import math

import numpy as np
import pytest
import torch

from src.errors import ConfigurationError, ContractViolation
from src.learning import nnsub
from src.learning.nnsub import LstmState
from src.learning.riskrl import RiskConfig, compute_threshold, terminal_shaping
from src.learning.rsac import (
    EpisodeRecord,
    RecurrentPlanner,
    RecurrentSac,
    ReplayBuffer,
    SacHyper,
    Transition,
    actor_step,
    batch_episodes,
    critic_targets,
    critic_values,
    policy_log_probs,
    reward_to_go,
    select_action,
    unroll,
    update_step,
)
from src.planners.policy import HighLevelAction, PlannerInput
from src.world.belief import PlannerObservation
from src.world.gridworld import Status

M = HighLevelAction.MOVE
L = HighLevelAction.LOCALIZE
TINY = SacHyper(
    dqn_layers=(8,),
    policy_layers=(8,),
    obs_emb=4,
    action_emb=2,
    lstm_hidden=6,
    batch_size=2,
    buffer_capacity=4,
)
INPUT = PlannerInput(PlannerObservation(0.2, 7), M)


def _episode(length: int, *, reward: float = 0.0, action: HighLevelAction = M, success: bool = True) -> EpisodeRecord:
    transitions = tuple(
        Transition(
            obs=PlannerObservation(0.1 * step, length - step),
            prev_action=M,
            action=action,
            base_reward=reward,
            safe_indicator=1,
            done=step == length - 1,
        )
        for step in range(length)
    )
    return EpisodeRecord(transitions, Status.REACHED_GOAL if success else Status.FAILED)


def _fixed_logits(nets: RecurrentSac, move: float, localize: float) -> None:
    last = len(nets.hyper.policy_layers)
    nets.actor.set(f"head.{last}.weight", 0.0)
    nets.actor.set(f"head.{last}.bias", [move, localize])


def test_transition_and_record_validation() -> None:
    with pytest.raises(ValueError):
        Transition(PlannerObservation(0.0, 1), M, M, 0.0, 2, True)
    with pytest.raises(ValueError):
        EpisodeRecord(_episode(2).transitions, Status.ACTIVE)
    first, second = _episode(2).transitions
    with pytest.raises(ValueError):
        EpisodeRecord((second, first), Status.FAILED)

    record = _episode(3, action=L)
    assert (len(record), record.n_localize, record.success) == (3, 3, True)


def test_replay_buffer_drops_oldest() -> None:
    buffer = ReplayBuffer(capacity=2)
    episodes = [_episode(length) for length in (1, 2, 3)]
    for episode in episodes:
        buffer.append(episode)

    assert len(buffer) == 2
    assert buffer.episodes_seen == 3
    sampled = buffer.sample(5, np.random.default_rng(0))
    assert sorted(len(episode) for episode in sampled) == [2, 3]


def test_replay_buffer_samples_without_replacement(rng) -> None:
    buffer = ReplayBuffer(capacity=10)
    for length in range(1, 11):
        buffer.append(_episode(length))

    lengths = [len(episode) for episode in buffer.sample(6, rng)]
    assert len(set(lengths)) == 6
    assert ReplayBuffer(3).sample(4, rng) == []
    with pytest.raises(ConfigurationError):
        ReplayBuffer(0)


def test_sac_hyper_presets_and_metadata() -> None:
    baserl = SacHyper.baserl()

    assert (baserl.lr, baserl.gamma, baserl.alpha, baserl.dqn_layers) == (0.00012, 0.95, 0.25, (64, 64))
    assert SacHyper.riskrl() == SacHyper()
    assert SacHyper.from_metadata(baserl.to_metadata()) == baserl
    with pytest.raises(ConfigurationError):
        SacHyper(gamma=1.0)
    with pytest.raises(ConfigurationError):
        SacHyper(primal_estimator="reinforce")


def test_create_builds_shared_trunk_and_twin_heads() -> None:
    nets = RecurrentSac.create(TINY, seed=3)

    assert "lstm.w_ih" in nets.critic and "q1.0.weight" in nets.critic and "q2.1.bias" in nets.critic
    assert "head.1.weight" in nets.actor and "q1.0.weight" not in nets.actor
    assert nets.target.names() == nets.critic.names()
    assert all(torch.equal(nets.target[name], nets.critic[name]) for name in nets.critic)
    assert nets.critic["lstm.w_ih"].shape == (4 * 6, 4 + 2)


def test_uniform_logits_sample_both_actions_equally() -> None:
    nets = RecurrentSac.create(TINY, seed=1)
    _fixed_logits(nets, 0.0, 0.0)
    rng = np.random.default_rng(21)
    draws = 10_000
    moves = 0
    for _ in range(draws):
        action, _, log_prob = select_action(nets, LstmState.zeros(TINY.lstm_hidden), INPUT, "sample", rng)
        moves += action is M
        assert log_prob == pytest.approx(math.log(0.5))

    assert moves / draws == pytest.approx(0.5, abs=0.02)


def test_greedy_selection_and_ties(rng) -> None:
    nets = RecurrentSac.create(TINY, seed=1)
    state = LstmState.zeros(TINY.lstm_hidden)

    _fixed_logits(nets, 5.0, -5.0)
    assert select_action(nets, state, INPUT, "greedy", rng)[0] is M
    _fixed_logits(nets, -5.0, 5.0)
    assert select_action(nets, state, INPUT, "greedy", rng)[0] is L
    _fixed_logits(nets, 1.0, 1.0)
    assert select_action(nets, state, INPUT, "greedy", rng)[0] is M


def test_non_finite_logits_are_rejected(rng) -> None:
    nets = RecurrentSac.create(TINY, seed=1)
    _fixed_logits(nets, float("nan"), 0.0)

    with pytest.raises(ContractViolation):
        select_action(nets, LstmState.zeros(TINY.lstm_hidden), INPUT, "sample", rng)
    _fixed_logits(nets, 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        select_action(nets, LstmState.zeros(TINY.lstm_hidden), INPUT, "softmax", rng)


def test_checkpoint_round_trip_preserves_decisions(tmp_path) -> None:
    nets = RecurrentSac.create(TINY, seed=5)
    path = nets.save(tmp_path / "riskrl.pt", extra={"kind": "riskrl", "lambda": 0.3})
    loaded = RecurrentSac.load(path)

    assert loaded.hyper == TINY
    assert loaded.metadata["kind"] == "riskrl"
    assert loaded.metadata["lambda"] == 0.3
    state = LstmState.zeros(TINY.lstm_hidden)
    assert torch.equal(actor_step(nets, state, INPUT)[0], actor_step(loaded, state, INPUT)[0])


def test_batch_episodes_pads_and_masks() -> None:
    batch = batch_episodes([_episode(3, reward=-1.0), _episode(1)], TINY, 0.0, RiskConfig())

    assert batch.obs.shape == (2, 3, 2)
    assert batch.mask.tolist() == [[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]]
    assert batch.done.tolist() == [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
    assert batch.reward[0].tolist() == [-1.0, -1.0, -1.0]
    assert batch.obs[0, 0, 1].item() == pytest.approx(3 / TINY.distance_scale)
    assert batch.n_steps == 4.0


def test_batch_episodes_adds_the_absorbing_tail_to_the_last_step() -> None:
    cfg = RiskConfig(c_hat=0.4, gamma=0.9, horizon_T=200)
    bound = compute_threshold(cfg) * (1.0 - cfg.gamma)
    batch = batch_episodes([_episode(2), _episode(3, success=False)], TINY, 1.0, cfg)

    assert batch.reward[0, 0].item() == pytest.approx(1.0 - bound)
    assert batch.reward[0, 1].item() == pytest.approx(1.0 - bound + terminal_shaping(1, True, 1.0, cfg))
    assert batch.reward[1, 1].item() == pytest.approx(1.0 - bound)
    assert batch.reward[1, 2].item() == pytest.approx(1.0 - bound + terminal_shaping(2, False, 1.0, cfg))
    assert batch.reward[0, 1].item() - batch.reward[1, 2].item() > 8.0


def test_critic_targets_stop_at_episode_end() -> None:
    nets = RecurrentSac.create(TINY, seed=2)
    batch = batch_episodes([_episode(1, reward=0.75), _episode(2, reward=0.5)], TINY, 0.0, RiskConfig())
    targets = critic_targets(nets, batch)

    assert targets[0, 0].item() == pytest.approx(0.75)
    assert targets[1, 1].item() == pytest.approx(0.5)
    assert targets[1, 0].item() != pytest.approx(0.5)


def test_reward_to_go() -> None:
    batch = batch_episodes([_episode(3, reward=1.0), _episode(1, reward=2.0)], TINY, 0.0, RiskConfig())
    returns = reward_to_go(batch, 0.5)

    assert returns[0].tolist() == pytest.approx([1.75, 1.5, 1.0])
    assert returns[1].tolist() == pytest.approx([2.0, 0.0, 0.0])


def test_update_step_reports_diagnostics(rng) -> None:
    nets = RecurrentSac.create(TINY, seed=4)
    buffer = ReplayBuffer(TINY.buffer_capacity)
    buffer.append(_episode(4, reward=-1.0, action=L))
    buffer.append(_episode(2))
    actor_before = nets.actor.arrays()
    target_before = nets.target.arrays()

    diagnostics = update_step(nets, buffer, TINY, 1.0, RiskConfig(), rng)

    assert diagnostics["skipped"] is False
    assert np.isfinite(diagnostics["critic_loss"]) and np.isfinite(diagnostics["actor_loss"])
    assert 0.0 <= diagnostics["entropy"] <= math.log(2) + 1e-12
    assert diagnostics["n_steps"] == 6.0
    assert nets.updates_done == 1
    assert any(not np.array_equal(actor_before[name], value) for name, value in nets.actor.arrays().items())
    assert any(not np.array_equal(target_before[name], value) for name, value in nets.target.arrays().items())


def test_update_step_with_score_function_estimator(rng) -> None:
    hyper = SacHyper(**{**TINY.to_metadata(), "primal_estimator": "score_function"})
    nets = RecurrentSac.create(hyper, seed=4)
    buffer = ReplayBuffer(hyper.buffer_capacity)
    buffer.append(_episode(3, reward=-1.0))
    buffer.append(_episode(1))

    diagnostics = update_step(nets, buffer, hyper, 0.5, RiskConfig(), rng)
    assert diagnostics["skipped"] is False
    assert np.isfinite(diagnostics["actor_loss"])


def test_update_step_skips_empty_batches(rng, caplog) -> None:
    nets = RecurrentSac.create(TINY, seed=4)
    buffer = ReplayBuffer(TINY.buffer_capacity)
    buffer.append(EpisodeRecord((), Status.FAILED))

    diagnostics = update_step(nets, buffer, TINY, 1.0, RiskConfig(), rng)
    assert diagnostics["skipped"] is True
    assert nets.updates_done == 0
    assert "Skipping update" in caplog.text


@pytest.mark.slow
def test_critic_learns_terminal_reward(rng) -> None:
    hyper = SacHyper(**{**TINY.to_metadata(), "lr": 1e-2, "tau_soft": 1.0})
    nets = RecurrentSac.create(hyper, seed=6)
    buffer = ReplayBuffer(hyper.buffer_capacity)
    buffer.append(_episode(1, reward=1.0))
    buffer.append(_episode(1, reward=1.0))
    for _ in range(500):
        update_step(nets, buffer, hyper, 0.0, RiskConfig(), rng)

    batch = batch_episodes([_episode(1, reward=1.0)], hyper, 0.0, RiskConfig())
    with torch.no_grad():
        q1, q2 = critic_values(nets.critic, hyper, batch)
    assert q1[0, 0, int(M)].item() == pytest.approx(1.0, abs=0.05)
    assert q2[0, 0, int(M)].item() == pytest.approx(1.0, abs=0.05)


def test_recurrent_planner_carries_and_resets_state() -> None:
    nets = RecurrentSac.create(TINY, seed=9)
    planner = RecurrentPlanner(nets, mode="greedy")
    fresh_logits, _ = actor_step(nets, LstmState.zeros(TINY.lstm_hidden), INPUT)

    planner.decide(INPUT)
    first = planner.last_log_prob
    planner.decide(INPUT)
    assert planner.last_log_prob <= 0.0
    planner.reset()
    assert planner.last_log_prob == 0.0
    planner.decide(INPUT)
    assert planner.last_log_prob == first
    assert first == pytest.approx(float(torch.log_softmax(fresh_logits, dim=-1).max()))


def test_same_seed_builds_identical_networks() -> None:
    first = RecurrentSac.create(TINY, seed=11)
    second = RecurrentSac.create(TINY, seed=11)

    for store, other in ((first.actor, second.actor), (first.critic, second.critic)):
        assert all(torch.equal(store[name], other[name]) for name in store)


def test_unroll_does_not_leak_state_between_episodes() -> None:
    nets = RecurrentSac.create(TINY, seed=8)
    short, long = _episode(2, reward=-1.0, action=L), _episode(4)
    forward = batch_episodes([short, long], TINY, 0.0, RiskConfig())
    reordered = batch_episodes([long, short], TINY, 0.0, RiskConfig())

    with torch.no_grad():
        hidden_forward = unroll(nets.actor, TINY, forward)
        hidden_backward = unroll(nets.actor, TINY, reordered)
    assert torch.allclose(hidden_forward[0, :2], hidden_backward[1, :2], atol=1e-12)
    assert torch.allclose(hidden_forward[1], hidden_backward[0], atol=1e-12)


def test_swapping_twin_critics_leaves_targets_unchanged() -> None:
    nets = RecurrentSac.create(TINY, seed=12)
    nets.critic.set("q1.1.bias", [0.5, -0.5])
    nnsub.soft_update(nets.critic, nets.target, 1.0)
    batch = batch_episodes([_episode(3, reward=0.25), _episode(2)], TINY, 0.0, RiskConfig())
    before = critic_targets(nets, batch)

    arrays = nets.target.arrays()
    for name in nets.target:
        if name.startswith("q1."):
            nets.target.set(name, arrays["q2." + name[3:]])
        elif name.startswith("q2."):
            nets.target.set(name, arrays["q1." + name[3:]])
    assert torch.allclose(critic_targets(nets, batch), before, atol=1e-12)


def test_full_soft_update_copies_the_critic(rng) -> None:
    hyper = SacHyper(**{**TINY.to_metadata(), "tau_soft": 1.0})
    nets = RecurrentSac.create(hyper, seed=13)
    buffer = ReplayBuffer(hyper.buffer_capacity)
    buffer.append(_episode(2, reward=-1.0))
    buffer.append(_episode(3))
    update_step(nets, buffer, hyper, 0.5, RiskConfig(), rng)

    assert all(torch.equal(nets.target[name], nets.critic[name]) for name in nets.critic)


def _gradient_errors(
    net_seed: int, weight_seed: int, rows: int, entry_seed: int = 0
) -> tuple[dict[str, float], dict[str, float], RecurrentSac]:
    nets = RecurrentSac.create(TINY, seed=net_seed)
    batch = batch_episodes([_episode(3, reward=-1.0, action=L), _episode(2)], TINY, 0.5, RiskConfig())
    weights = torch.from_numpy(np.random.default_rng(weight_seed).normal(size=(2, 3, 2))) * batch.mask.unsqueeze(-1)

    def actor_loss() -> torch.Tensor:
        return (policy_log_probs(nets, batch) * weights).sum()

    def critic_loss() -> torch.Tensor:
        q1, q2 = critic_values(nets.critic, TINY, batch)
        return ((q1 - q2.pow(2)) * weights).sum()

    actor_errors = nnsub.gradient_check(
        nets.actor, actor_loss, max_entries=rows, generator=np.random.default_rng(entry_seed)
    )
    critic_errors = nnsub.gradient_check(
        nets.critic, critic_loss, max_entries=rows, generator=np.random.default_rng(entry_seed)
    )
    return actor_errors, critic_errors, nets


def test_actor_and_critic_gradients_match_finite_differences() -> None:
    actor_errors, critic_errors, nets = _gradient_errors(14, 3, 6)

    assert max(actor_errors.values()) < 1e-4
    assert max(critic_errors.values()) < 1e-4
    assert set(critic_errors) == set(nets.critic.names())


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences_across_seeds(seed: int) -> None:
    actor_errors, critic_errors, _ = _gradient_errors(seed, seed + 100, 12, entry_seed=seed)

    assert max(actor_errors.values()) < 1e-3
    assert max(critic_errors.values()) < 1e-3


@pytest.mark.slow
def test_zero_rewards_without_dual_keep_the_policy_uniform(rng) -> None:
    overrides = {"lr": 3e-3, "gamma": 0.5, "tau_soft": 0.05, "batch_size": 4, "buffer_capacity": 4}
    hyper = SacHyper(**{**TINY.to_metadata(), **overrides})
    nets = RecurrentSac.create(hyper, seed=9)
    episodes = [_episode(3), _episode(2, action=L), _episode(4), _episode(3, action=L)]
    buffer = ReplayBuffer(hyper.buffer_capacity)
    for episode in episodes:
        buffer.append(episode)
    for _ in range(2000):
        update_step(nets, buffer, hyper, 0.0, RiskConfig(), rng)

    batch = batch_episodes(episodes, hyper, 0.0, RiskConfig())
    with torch.no_grad():
        move = policy_log_probs(nets, batch)[..., int(M)].exp()
    visited = move[batch.mask.bool()]
    assert visited.min().item() >= 0.48
    assert visited.max().item() <= 0.52
