from pathlib import Path

import numpy as np
import pytest

from stackelberg_assembly import learning
from stackelberg_assembly.assembly_env import EnvConfig
from stackelberg_assembly.errors import ConfigError
from stackelberg_assembly.games import BimatrixGame, verify_stackelberg
from stackelberg_assembly.history import read_jsonl
from stackelberg_assembly.learning import (
    AgentNets,
    Algorithm,
    Batch,
    GreedyPolicy,
    ReplayBuffer,
    StateEncoder,
    TabularQ,
    TabularTransition,
    TrainConfig,
    Transition,
    compute_targets,
    evaluate,
    greedy_pair,
    load_agents,
    select_actions,
    stack_batch,
    tabular_stackelberg_update,
    train,
)
from stackelberg_assembly.neural import QApproximator, network_sizes
from stackelberg_assembly.task_model import EMPTY, complete_subtask, initial_state, is_finished

TINY_TRAIN = TrainConfig(episodes=4, hidden_sizes=(8,), batch_size=4, buffer_capacity=50, target_period=3, log_every=2)


def _linear(matrix) -> QApproximator:
    """One-input linear net whose output for input [1] is the given payoff matrix."""
    flat = np.asarray(matrix, dtype=float).reshape(1, -1)
    return QApproximator((1, flat.shape[1]), [flat], [np.zeros(flat.shape[1])])


def _nets(q_L, q_F, target_L=None, target_F=None) -> AgentNets:
    return AgentNets(
        leader=_linear(q_L),
        follower=_linear(q_F),
        leader_target=_linear(q_L if target_L is None else target_L),
        follower_target=_linear(q_F if target_F is None else target_F),
    )


def _transition(value: int) -> Transition:
    s = np.array([float(value)])
    return Transition(s=s, a_L=0, a_F=0, r_L=float(value), r_F=0.0, s_next=s, done=False)


def test_algorithm_names() -> None:
    assert Algorithm.parse("stackelberg") is Algorithm.STACKELBERG
    assert Algorithm.parse("NASH") is Algorithm.NASH
    assert Algorithm.parse("independent") is Algorithm.INDEPENDENT
    with pytest.raises(ConfigError, match="Unknown algorithm"):
        Algorithm.parse("minimax")


def test_epsilon_schedule() -> None:
    config = TrainConfig(episodes=100)
    assert config.epsilon_at(0) == 1.0
    assert config.epsilon_at(30) == pytest.approx(0.525)
    assert config.epsilon_at(60) == pytest.approx(0.05)
    assert config.epsilon_at(99) == pytest.approx(0.05)


@pytest.mark.parametrize(
    "settings",
    [{"episodes": 0}, {"gamma": 1.0}, {"tau": 1.5}, {"batch_size": 0}, {"learning_rate": 0.0}, {"hidden_sizes": (0,)}],
)
def test_invalid_train_config(settings) -> None:
    with pytest.raises(ConfigError):
        TrainConfig(**settings)


def test_train_config_round_trip_and_unknown_keys() -> None:
    config = TrainConfig(episodes=12, hidden_sizes=(16, 8))
    assert TrainConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ConfigError, match="Unknown"):
        TrainConfig.from_dict({"episodes": 3, "momentum": 0.9})


def test_greedy_pairs_per_algorithm() -> None:
    q_L = np.array([[1.0, 0.0], [2.0, -1.0]])
    q_F = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert greedy_pair(q_L, q_F, Algorithm.STACKELBERG) == (1, 0, False)
    assert greedy_pair(q_L, q_F, Algorithm.INDEPENDENT) == (1, 0, False)
    pennies_L = np.array([[0.0, 1.0], [1.0, 0.0]])
    pennies_F = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert greedy_pair(pennies_L, pennies_F, Algorithm.NASH)[2] is True


def test_greedy_selection_is_the_equilibrium() -> None:
    nets = _nets([[1, 0], [2, -1]], [[0, 1], [1, 0]])
    action = select_actions(nets, np.array([1.0]), 0.0, np.random.default_rng(0))
    assert (action.a_L, action.a_F) == (1, 0)


def test_greedy_actions_are_stackelberg_on_random_networks(task1) -> None:
    rng = np.random.default_rng(31)
    encode = StateEncoder(task1)
    sizes = network_sizes(task1, (16,))
    for _ in range(20):
        nets = AgentNets.initialize(sizes, rng, rng)
        state = initial_state(task1)
        while not is_finished(state, task1):
            s = encode(state)
            action = select_actions(nets, s, 0.0, rng, "sg")
            game = BimatrixGame(learning.forward(nets.leader, s), learning.forward(nets.follower, s))
            assert verify_stackelberg(game, (action.a_L, action.a_F))
            choices = sorted(set(state.frontier) - {EMPTY})
            state = complete_subtask(state, task1, int(rng.choice(choices)))


def test_full_exploration_avoids_the_equilibrium_action() -> None:
    rng = np.random.default_rng(8)
    nets = _nets(rng.normal(size=(5, 5)), rng.normal(size=(5, 5)))
    leader_se, follower_se, _ = greedy_pair(
        learning.forward(nets.leader, np.array([1.0])),
        learning.forward(nets.follower, np.array([1.0])),
        Algorithm.STACKELBERG,
    )
    draws = [select_actions(nets, np.array([1.0]), 1.0, rng) for _ in range(10_000)]
    leader_counts = np.bincount([draw.a_L for draw in draws], minlength=5) / 10_000
    follower_counts = np.bincount([draw.a_F for draw in draws], minlength=5) / 10_000
    assert leader_counts[leader_se] == 0.0
    assert follower_counts[follower_se] == 0.0
    for action in range(5):
        if action != leader_se:
            assert abs(leader_counts[action] - 0.25) <= 0.02
        if action != follower_se:
            assert abs(follower_counts[action] - 0.25) <= 0.02


def test_epsilon_out_of_range() -> None:
    nets = _nets([[0.0]], [[0.0]])
    with pytest.raises(ConfigError):
        select_actions(nets, np.array([1.0]), 1.5, np.random.default_rng(0))


def test_targets_of_terminal_transitions_are_rewards() -> None:
    nets = _nets(np.ones((2, 2)), np.ones((2, 2)))
    batch = Batch(
        s=np.ones((3, 1)),
        a_L=np.zeros(3, int),
        a_F=np.zeros(3, int),
        r_L=np.array([1.0, -0.5, 2.0]),
        r_F=np.array([0.0, -0.5, 2.0]),
        s_next=np.ones((3, 1)),
        done=np.array([True, True, True]),
    )
    for gamma in (0.0, 0.95):
        targets_L, targets_F, _ = compute_targets(nets, batch, gamma, Algorithm.STACKELBERG)
        np.testing.assert_array_equal(targets_L, batch.r_L)
        np.testing.assert_array_equal(targets_F, batch.r_F)


def test_targets_select_with_online_and_value_with_target(monkeypatch) -> None:
    nets = _nets(
        [[1, 0], [2, -1]],
        [[0, 1], [1, 0]],
        target_L=[[0, 1], [2, 3]],
        target_F=[[10, 11], [12, 13]],
    )
    calls: list[int] = []
    original_forward = learning.forward

    def spy(net, states):
        calls.append(id(net))
        return original_forward(net, states)

    monkeypatch.setattr(learning, "forward", spy)
    batch = stack_batch(
        [Transition(s=np.array([1.0]), a_L=0, a_F=1, r_L=0.5, r_F=-0.5, s_next=np.array([1.0]), done=False)]
    )
    targets_L, targets_F, fallbacks = compute_targets(nets, batch, 0.9, Algorithm.STACKELBERG)

    # Online nets pick (1, 0); target nets value that pair.
    assert targets_L[0] == pytest.approx(0.5 + 0.9 * 2)
    assert targets_F[0] == pytest.approx(-0.5 + 0.9 * 12)
    assert fallbacks == 0
    assert set(calls) == {id(nets.leader), id(nets.follower), id(nets.leader_target), id(nets.follower_target)}


def test_nash_targets_count_fallbacks() -> None:
    nets = _nets([[0, 1], [1, 0]], [[1, 0], [0, 1]])
    batch = stack_batch([_transition(1), _transition(1)])
    _, _, fallbacks = compute_targets(nets, batch, 0.9, Algorithm.NASH)
    assert fallbacks == 2


def test_replay_buffer_is_fifo() -> None:
    buffer = ReplayBuffer(3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        buffer.sample(1)
    for value in range(1, 6):
        buffer.push(_transition(value))
    assert len(buffer) == 3
    assert [item.r_L for item in buffer] == [3.0, 4.0, 5.0]
    sample = buffer.sample(50)
    assert len(sample) == 50
    assert {item.r_L for item in sample} <= {3.0, 4.0, 5.0}
    with pytest.raises(ConfigError):
        ReplayBuffer(0, np.random.default_rng(0))


def test_tabular_update_limits() -> None:
    rng = np.random.default_rng(9)
    tables = TabularQ(rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2, 2)))
    transition = TabularTransition(state=0, a_L=1, a_F=0, r_L=3.0, r_F=-1.0, next_state=1)

    unchanged = tabular_stackelberg_update(tables, transition, alpha=0.0, gamma=0.9)
    np.testing.assert_array_equal(unchanged.leader, tables.leader)
    np.testing.assert_array_equal(unchanged.follower, tables.follower)

    terminal = tabular_stackelberg_update(tables, transition._replace(done=True), alpha=1.0, gamma=0.9)
    assert terminal.leader[0, 1, 0] == 3.0
    assert terminal.follower[0, 1, 0] == -1.0

    with pytest.raises(IndexError):
        tabular_stackelberg_update(tables, transition._replace(a_L=2), alpha=0.5, gamma=0.9)


def _se(U_L: np.ndarray, U_F: np.ndarray) -> tuple[int, int]:
    best = None
    for row in range(U_L.shape[0]):
        column = max(range(U_F.shape[1]), key=lambda c: (U_F[row, c], -c))
        if best is None or U_L[row, column] > U_L[best]:
            best = (row, column)
    return best


def test_tabular_update_converges_to_value_iteration() -> None:
    # Two states that alternate regardless of the joint action.
    rewards_L = np.array([[[1.0, 0.0], [2.0, -1.0]], [[3.0, 1.0], [0.0, 2.0]]])
    rewards_F = np.array([[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 2.0]]])
    successor = (1, 0)
    gamma = 0.5

    oracle_L = np.zeros((2, 2, 2))
    oracle_F = np.zeros((2, 2, 2))
    for _ in range(200):
        next_L, next_F = np.empty_like(oracle_L), np.empty_like(oracle_F)
        for state in range(2):
            after = successor[state]
            pair = _se(oracle_L[after], oracle_F[after])
            next_L[state] = rewards_L[state] + gamma * oracle_L[after][pair]
            next_F[state] = rewards_F[state] + gamma * oracle_F[after][pair]
        oracle_L, oracle_F = next_L, next_F

    tables = TabularQ.zeros(2, 2, 2)
    for _ in range(300):
        for state in range(2):
            for a_L in range(2):
                for a_F in range(2):
                    transition = TabularTransition(
                        state=state,
                        a_L=a_L,
                        a_F=a_F,
                        r_L=rewards_L[state, a_L, a_F],
                        r_F=rewards_F[state, a_L, a_F],
                        next_state=successor[state],
                    )
                    tables = tabular_stackelberg_update(tables, transition, alpha=0.5, gamma=gamma)

    assert np.abs(tables.leader - oracle_L).max() < 1e-6
    assert np.abs(tables.follower - oracle_F).max() < 1e-6
    # The closed form for the equilibrium values: (r0 + gamma r1) / (1 - gamma^2).
    assert oracle_L[0][1, 0] == pytest.approx((2.0 + gamma * 3.0) / (1 - gamma**2))


def test_training_is_reproducible(single_task, tmp_path: Path) -> None:
    first = train(single_task, EnvConfig(), TINY_TRAIN, "sg", metrics_path=tmp_path / "a.jsonl")
    second = train(single_task, EnvConfig(), TINY_TRAIN, "sg", metrics_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert [row.stream_row() for row in first.metrics] == [row.stream_row() for row in second.metrics]
    for left, right in zip(first.nets.leader.parameters(), second.nets.leader.parameters()):
        np.testing.assert_array_equal(left, right)
    assert first.train_step == sum(row.completion_steps for row in first.metrics)


def test_training_writes_metrics_and_checkpoints(pair_task, tmp_path: Path) -> None:
    config = TrainConfig(**{**TINY_TRAIN.to_dict(), "checkpoint_every": 2})
    result = train(pair_task, EnvConfig(), config, Algorithm.NASH, run_dir=tmp_path, metrics_path=tmp_path / "metrics.jsonl")

    rows = read_jsonl(tmp_path / "metrics.jsonl")
    assert [row["episode"] for row in rows] == [1, 2, 3, 4]
    assert {"completion_steps", "avg_reward_L", "avg_reward_F", "epsilon", "nash_fallbacks", "loss_L"} <= rows[0].keys()
    assert "wall_time" not in rows[0]
    assert (tmp_path / "checkpoints" / "episode_000002" / "leader.npz").exists()

    nets, (opt_L, _) = load_agents(tmp_path / "checkpoints" / "final")
    for left, right in zip(nets.follower_target.parameters(), result.nets.follower_target.parameters()):
        np.testing.assert_array_equal(left, right)
    assert opt_L.step == result.train_step


def test_evaluate_reports_statistics(single_task) -> None:
    nets = AgentNets.initialize((1 * 2, 4, 4), np.random.default_rng(0), np.random.default_rng(1))
    summary = evaluate(nets, single_task, EnvConfig(deterministic=True), 1, np.random.default_rng(0))
    assert summary.n_episodes == 1
    assert summary.std_steps == 0.0
    assert summary.to_dict()["completion_steps"] == [summary.episodes[0].completion_steps]
    with pytest.raises(ConfigError):
        evaluate(nets, single_task, EnvConfig(), 0)


def test_single_subtask_policy_converges(single_task) -> None:
    config = TrainConfig(
        episodes=500,
        hidden_sizes=(32, 32),
        learning_rate=3e-3,
        batch_size=32,
        target_period=10,
        seed=0,
        log_every=500,
    )
    result = train(single_task, EnvConfig(), config, Algorithm.STACKELBERG)
    policy = GreedyPolicy(result.nets, single_task)
    action = policy(initial_state(single_task))
    assert (action.a_L, action.a_F) == (1, 0)
    summary = evaluate(result.nets, single_task, EnvConfig(deterministic=True), 5, np.random.default_rng(0))
    assert summary.completion_rate == 1.0
    assert summary.mean_steps == 1.0
    assert summary.mean_avg_reward_L == 1.0


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_task1_training_reaches_reported_performance(task1, seed) -> None:
    result = train(task1, EnvConfig(), TrainConfig(seed=seed, log_every=1000), Algorithm.STACKELBERG)
    tail = result.metrics[-100:]
    assert np.mean([row.completion_steps for row in tail]) <= 25
    assert np.mean([row.avg_reward_L for row in tail]) >= 0.5
    assert np.mean([row.avg_reward_F for row in tail]) >= 0.45
