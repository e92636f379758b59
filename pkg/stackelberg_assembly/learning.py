"""Training loops for Stackelberg double deep Q-learning and its Nash / independent baselines.

One loop owns both agents' networks and the replay buffer (centralized training).
Execution is decentralized through a two-phase exchange: the follower shares its
Q-values, the leader commits to its equilibrium action and announces it, and the
follower best-responds to the announced action.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from .assembly_env import EnvConfig, EpisodeRecord, JointAction, rollout, step
from .config import (
    CHECKPOINT_DIR_NAME,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BUFFER_CAPACITY,
    DEFAULT_EPISODES,
    DEFAULT_EVAL_EPISODES,
    DEFAULT_GAMMA,
    DEFAULT_HIDDEN_SIZES,
    DEFAULT_LEARNING_RATE,
    DEFAULT_TARGET_PERIOD,
    DEFAULT_TAU,
    EPSILON_DECAY_FRACTION,
    EPSILON_END,
    EPSILON_START,
)
from .errors import ConfigError
from .games import (
    BimatrixGame,
    batch_independent,
    batch_nash,
    batch_stackelberg,
    follower_best_response,
    independent_actions,
    select_nash,
    stackelberg_equilibrium,
)
from .history import append_jsonl
from .neural import (
    AdamState,
    Checkpoint,
    QApproximator,
    encode_state,
    forward,
    load_checkpoint,
    network_sizes,
    optimizer_step,
    save_checkpoint,
    soft_update,
    td_gradient,
)
from .task_model import AssemblyTask, ChessboardState, initial_state

logger = logging.getLogger(__name__)


class Algorithm(str, Enum):
    STACKELBERG = "sg"
    NASH = "nash"
    INDEPENDENT = "ind"

    @classmethod
    def parse(cls, value: "str | Algorithm") -> "Algorithm":
        aliases = {"stackelberg": cls.STACKELBERG, "independent": cls.INDEPENDENT}
        key = str(value.value if isinstance(value, Algorithm) else value).lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(member.value for member in cls)
            raise ConfigError(f"Unknown algorithm {value!r}; choose one of {choices}.") from None


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = DEFAULT_EPISODES
    max_steps: int | None = None
    gamma: float = DEFAULT_GAMMA
    epsilon_start: float = EPSILON_START
    epsilon_end: float = EPSILON_END
    epsilon_decay_fraction: float = EPSILON_DECAY_FRACTION
    batch_size: int = DEFAULT_BATCH_SIZE
    buffer_capacity: int = DEFAULT_BUFFER_CAPACITY
    learning_rate: float = DEFAULT_LEARNING_RATE
    tau: float = DEFAULT_TAU
    target_period: int = DEFAULT_TARGET_PERIOD
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN_SIZES
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(size) for size in self.hidden_sizes))
        if self.episodes < 1:
            raise ConfigError(f"episodes must be positive, got {self.episodes}.")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be positive, got {self.max_steps}.")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}.")
        for name in ("epsilon_start", "epsilon_end", "tau"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}.")
        if not 0.0 < self.epsilon_decay_fraction <= 1.0:
            raise ConfigError(f"epsilon_decay_fraction must be in (0, 1], got {self.epsilon_decay_fraction}.")
        for name in ("batch_size", "buffer_capacity", "target_period", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}.")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}.")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be non-negative, got {self.checkpoint_every}.")
        if any(size < 1 for size in self.hidden_sizes):
            raise ConfigError(f"hidden_sizes must be positive, got {self.hidden_sizes}.")

    def epsilon_at(self, episode: int) -> float:
        """Linear decay from epsilon_start to epsilon_end, then flat; episode is 0-based."""
        horizon = self.epsilon_decay_fraction * self.episodes
        progress = min(1.0, episode / horizon) if horizon > 0 else 1.0
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * progress

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["hidden_sizes"] = list(self.hidden_sizes)
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "TrainConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown training settings: {', '.join(sorted(unknown))}.")
        return cls(**payload)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a_L: int
    a_F: int
    r_L: float
    r_F: float
    s_next: np.ndarray
    done: bool
    state: ChessboardState | None = None


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, rng: np.random.Generator) -> None:
        if capacity < 1:
            raise ConfigError(f"Replay capacity must be positive, got {capacity}.")
        self.capacity = capacity
        self.rng = rng
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        # Oldest first.
        if len(self._items) < self.capacity:
            return iter(list(self._items))
        return iter(self._items[self._next:] + self._items[: self._next])

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int) -> list[Transition]:
        if not self._items:
            raise ValueError("Cannot sample from an empty replay buffer.")
        indices = self.rng.integers(0, len(self._items), size=batch_size)
        return [self._items[index] for index in indices]


@dataclass
class AgentNets:
    leader: QApproximator
    follower: QApproximator
    leader_target: QApproximator
    follower_target: QApproximator

    @classmethod
    def initialize(cls, sizes: tuple[int, ...], rng_L: np.random.Generator, rng_F: np.random.Generator) -> "AgentNets":
        leader = QApproximator.initialize(sizes, rng_L)
        follower = QApproximator.initialize(sizes, rng_F)
        return cls(leader, follower, leader.copy(), follower.copy())


class StateEncoder:
    """Memoized one-hot encodings; boards repeat a lot within a run."""

    def __init__(self, task: AssemblyTask) -> None:
        self.task = task
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def __call__(self, state: ChessboardState) -> np.ndarray:
        encoding = self._cache.get(state.frontier)
        if encoding is None:
            encoding = encode_state(state, self.task)
            encoding.setflags(write=False)
            self._cache[state.frontier] = encoding
        return encoding


def greedy_pair(q_L: np.ndarray, q_F: np.ndarray, algorithm: Algorithm) -> tuple[int, int, bool]:
    """Equilibrium joint action of one state's bimatrix game; the flag marks a Nash fallback."""
    game = BimatrixGame(q_L, q_F)
    if algorithm is Algorithm.STACKELBERG:
        # Phase 1: the follower's Q-values reach the leader, who commits to its SE row.
        leader_action, _ = stackelberg_equilibrium(game)
        # Phase 2: the leader announces its action and the follower best-responds.
        return leader_action, follower_best_response(game, leader_action), False
    if algorithm is Algorithm.NASH:
        (leader_action, follower_action), fallback = select_nash(game)
        return leader_action, follower_action, fallback
    leader_action, follower_action = independent_actions(game)
    return leader_action, follower_action, False


def _explore(action: int, n_actions: int, epsilon: float, rng: np.random.Generator) -> int:
    """Keep the greedy action w.p. 1 - epsilon, else draw uniformly among the others."""
    if n_actions < 2 or rng.random() >= epsilon:
        return action
    draw = int(rng.integers(n_actions - 1))
    return draw if draw < action else draw + 1


def select_actions(
    nets: AgentNets,
    s: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    algorithm: Algorithm | str = Algorithm.STACKELBERG,
) -> JointAction:
    """Epsilon-greedy equilibrium action from both online networks."""
    joint, _ = _select(nets, s, epsilon, rng, Algorithm.parse(algorithm))
    return joint


def _select(
    nets: AgentNets,
    s: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    algorithm: Algorithm,
) -> tuple[JointAction, bool]:
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must be in [0, 1], got {epsilon}.")
    leader_action, follower_action, fallback = greedy_pair(forward(nets.leader, s), forward(nets.follower, s), algorithm)
    n_actions = nets.leader.n_actions
    # Each agent explores independently of the other.
    joint = JointAction(
        a_L=_explore(leader_action, n_actions, epsilon, rng),
        a_F=_explore(follower_action, n_actions, epsilon, rng),
    )
    return joint, fallback


def _batch_pairs(q_L: np.ndarray, q_F: np.ndarray, algorithm: Algorithm) -> tuple[np.ndarray, np.ndarray, int]:
    if algorithm is Algorithm.STACKELBERG:
        rows, columns = batch_stackelberg(q_L, q_F)
        return rows, columns, 0
    if algorithm is Algorithm.NASH:
        rows, columns, fallback = batch_nash(q_L, q_F)
        return rows, columns, int(fallback.sum())
    rows, columns = batch_independent(q_L, q_F)
    return rows, columns, 0


class Batch(NamedTuple):
    s: np.ndarray
    a_L: np.ndarray
    a_F: np.ndarray
    r_L: np.ndarray
    r_F: np.ndarray
    s_next: np.ndarray
    done: np.ndarray


def stack_batch(transitions: list[Transition]) -> Batch:
    """Stack sampled transitions into arrays."""
    return Batch(
        s=np.stack([item.s for item in transitions]),
        a_L=np.array([item.a_L for item in transitions], dtype=int),
        a_F=np.array([item.a_F for item in transitions], dtype=int),
        r_L=np.array([item.r_L for item in transitions], dtype=float),
        r_F=np.array([item.r_F for item in transitions], dtype=float),
        s_next=np.stack([item.s_next for item in transitions]),
        done=np.array([item.done for item in transitions], dtype=bool),
    )


def compute_targets(
    nets: AgentNets,
    batch: Batch,
    gamma: float,
    algorithm: Algorithm,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Double-Q targets: next actions from the online nets, values from the target nets.

    Returns leader targets, follower targets and the number of Nash fallbacks.
    """
    rows, columns, fallbacks = _batch_pairs(
        forward(nets.leader, batch.s_next), forward(nets.follower, batch.s_next), algorithm
    )
    index = np.arange(len(rows))
    value_L = forward(nets.leader_target, batch.s_next)[index, rows, columns]
    value_F = forward(nets.follower_target, batch.s_next)[index, rows, columns]
    live = ~batch.done
    targets_L = batch.r_L + gamma * np.where(live, value_L, 0.0)
    targets_F = batch.r_F + gamma * np.where(live, value_F, 0.0)
    return targets_L, targets_F, fallbacks


@dataclass
class EpisodeMetrics:
    episode: int
    completion_steps: int
    completed: bool
    reward_L: float
    reward_F: float
    avg_reward_L: float
    avg_reward_F: float
    epsilon: float
    nash_fallbacks: int = 0
    loss_L: float | None = None
    loss_F: float | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def stream_row(self) -> dict[str, Any]:
        """Metrics-log row; wall time stays out so identical seeds give identical files."""
        row = self.to_dict()
        row.pop("wall_time")
        return row


@dataclass
class TrainResult:
    nets: AgentNets
    optimizers: tuple[AdamState, AdamState]
    metrics: list[EpisodeMetrics] = field(default_factory=list)
    train_step: int = 0
    rng_state: dict[str, Any] | None = None


def _run_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(5)
    names = ("init_L", "init_F", "env", "explore", "replay")
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def train(
    task: AssemblyTask,
    env_config: EnvConfig,
    train_config: TrainConfig,
    algorithm: Algorithm | str = Algorithm.STACKELBERG,
    run_dir: Path | None = None,
    metrics_path: Path | None = None,
) -> TrainResult:
    """Run the double deep Q-learning loop for both agents."""
    algorithm = Algorithm.parse(algorithm)
    if train_config.max_steps is not None:
        env_config = replace(env_config, max_steps=train_config.max_steps)

    rngs = _run_rngs(train_config.seed)
    nets = AgentNets.initialize(network_sizes(task, train_config.hidden_sizes), rngs["init_L"], rngs["init_F"])
    opt_L = AdamState.for_network(nets.leader, train_config.learning_rate)
    opt_F = AdamState.for_network(nets.follower, train_config.learning_rate)
    buffer = ReplayBuffer(train_config.buffer_capacity, rngs["replay"])
    encoder = StateEncoder(task)
    result = TrainResult(nets=nets, optimizers=(opt_L, opt_F))

    logger.info(
        "Training %s on %s for %d episodes (seed %d).",
        algorithm.value,
        task.name,
        train_config.episodes,
        train_config.seed,
    )
    train_step = 0
    for episode in range(train_config.episodes):
        started = time.perf_counter()
        epsilon = train_config.epsilon_at(episode)
        state = initial_state(task)
        reward_L = reward_F = 0.0
        fallbacks = 0
        losses_L: list[float] = []
        losses_F: list[float] = []
        done = False

        while not done:
            s = encoder(state)
            action, fallback = _select(nets, s, epsilon, rngs["explore"], algorithm)
            fallbacks += int(fallback)
            outcome = step(state, task, action, env_config, rngs["env"])
            buffer.push(
                Transition(
                    s=s,
                    a_L=action.a_L,
                    a_F=action.a_F,
                    r_L=outcome.r_L,
                    r_F=outcome.r_F,
                    s_next=encoder(outcome.next_state),
                    done=outcome.done,
                    state=state,
                )
            )
            reward_L += outcome.r_L
            reward_F += outcome.r_F

            # One gradient step per agent per environment step.
            batch = stack_batch(buffer.sample(train_config.batch_size))
            targets_L, targets_F, batch_fallbacks = compute_targets(nets, batch, train_config.gamma, algorithm)
            fallbacks += batch_fallbacks
            grads_L, loss_L = td_gradient(nets.leader, batch.s, batch.a_L, batch.a_F, targets_L)
            grads_F, loss_F = td_gradient(nets.follower, batch.s, batch.a_L, batch.a_F, targets_F)
            optimizer_step(nets.leader, grads_L, opt_L)
            optimizer_step(nets.follower, grads_F, opt_F)
            losses_L.append(loss_L)
            losses_F.append(loss_F)

            train_step += 1
            if train_step % train_config.target_period == 0:
                soft_update(nets.leader_target, nets.leader, train_config.tau)
                soft_update(nets.follower_target, nets.follower, train_config.tau)

            state = outcome.next_state
            done = outcome.done

        steps_taken = state.step_index
        metrics = EpisodeMetrics(
            episode=episode + 1,
            completion_steps=steps_taken,
            completed=len(state.completed) == task.n_subtasks,
            reward_L=reward_L,
            reward_F=reward_F,
            avg_reward_L=reward_L / steps_taken,
            avg_reward_F=reward_F / steps_taken,
            epsilon=epsilon,
            nash_fallbacks=fallbacks,
            loss_L=float(np.mean(losses_L)),
            loss_F=float(np.mean(losses_F)),
            wall_time=time.perf_counter() - started,
        )
        result.metrics.append(metrics)
        if metrics_path is not None:
            append_jsonl(metrics_path, [metrics.stream_row()])
        if fallbacks and algorithm is Algorithm.NASH:
            logger.debug("Episode %d used the Stackelberg fallback %d times.", episode + 1, fallbacks)
        if (episode + 1) % train_config.log_every == 0:
            window = result.metrics[-train_config.log_every:]
            logger.info(
                "episode %d: steps %.1f, avg reward L %.3f F %.3f, epsilon %.3f, %.1fs",
                episode + 1,
                np.mean([item.completion_steps for item in window]),
                np.mean([item.avg_reward_L for item in window]),
                np.mean([item.avg_reward_F for item in window]),
                epsilon,
                sum(item.wall_time for item in window),
            )
        if run_dir is not None and train_config.checkpoint_every and (episode + 1) % train_config.checkpoint_every == 0:
            save_agents(run_dir / CHECKPOINT_DIR_NAME / f"episode_{episode + 1:06d}", result, train_step, rngs)

    result.train_step = train_step
    result.rng_state = {name: generator.bit_generator.state for name, generator in rngs.items()}
    if run_dir is not None:
        save_agents(run_dir / CHECKPOINT_DIR_NAME / "final", result, train_step, rngs)
    return result


def save_agents(
    directory: Path,
    result: TrainResult,
    train_step: int,
    rngs: dict[str, np.random.Generator] | None = None,
) -> None:
    """Write leader.npz and follower.npz checkpoints into a directory."""
    rng_state = None if rngs is None else {name: generator.bit_generator.state for name, generator in rngs.items()}
    nets = result.nets
    pairs = (
        ("leader", nets.leader, nets.leader_target, result.optimizers[0]),
        ("follower", nets.follower, nets.follower_target, result.optimizers[1]),
    )
    for name, online, target, optimizer in pairs:
        save_checkpoint(
            directory / f"{name}.npz",
            Checkpoint(online=online, target=target, optimizer=optimizer, rng_state=rng_state, train_step=train_step),
        )


def load_agents(directory: Path) -> tuple[AgentNets, tuple[AdamState, AdamState]]:
    """Networks and optimizer states saved by save_agents."""
    leader = load_checkpoint(directory / "leader.npz")
    follower = load_checkpoint(directory / "follower.npz")
    nets = AgentNets(leader.online, follower.online, leader.target, follower.target)
    return nets, (leader.optimizer, follower.optimizer)


class GreedyPolicy:
    """Epsilon-free equilibrium execution of trained networks."""

    def __init__(self, nets: AgentNets, task: AssemblyTask, algorithm: Algorithm | str = Algorithm.STACKELBERG) -> None:
        self.nets = nets
        self.algorithm = Algorithm.parse(algorithm)
        self.encoder = StateEncoder(task)

    def __call__(self, state: ChessboardState) -> JointAction:
        s = self.encoder(state)
        leader_action, follower_action, _ = greedy_pair(
            forward(self.nets.leader, s), forward(self.nets.follower, s), self.algorithm
        )
        return JointAction(leader_action, follower_action)


@dataclass
class EvalMetrics:
    n_episodes: int
    completion_rate: float
    mean_steps: float
    std_steps: float
    mean_avg_reward_L: float
    std_avg_reward_L: float
    mean_avg_reward_F: float
    std_avg_reward_F: float
    episodes: list[EpisodeRecord] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload.pop("episodes")
        payload["completion_steps"] = [record.completion_steps for record in self.episodes]
        return payload


def summarize_episodes(records: list[EpisodeRecord]) -> EvalMetrics:
    """Completion and averaged-reward statistics over evaluated episodes."""
    steps = np.array([record.completion_steps for record in records], dtype=float)
    avg_L = np.array([record.avg_reward_L for record in records], dtype=float)
    avg_F = np.array([record.avg_reward_F for record in records], dtype=float)
    return EvalMetrics(
        n_episodes=len(records),
        completion_rate=float(np.mean([record.completed for record in records])),
        mean_steps=float(steps.mean()),
        std_steps=float(steps.std()),
        mean_avg_reward_L=float(avg_L.mean()),
        std_avg_reward_L=float(avg_L.std()),
        mean_avg_reward_F=float(avg_F.mean()),
        std_avg_reward_F=float(avg_F.std()),
        episodes=records,
    )


def evaluate(
    nets: AgentNets,
    task: AssemblyTask,
    env_config: EnvConfig,
    n_episodes: int = DEFAULT_EVAL_EPISODES,
    rng: np.random.Generator | None = None,
    algorithm: Algorithm | str = Algorithm.STACKELBERG,
) -> EvalMetrics:
    """Greedy rollouts and their completion-step / averaged-reward statistics."""
    if n_episodes < 1:
        raise ConfigError(f"n_episodes must be positive, got {n_episodes}.")
    rng = rng if rng is not None else np.random.default_rng(0)
    policy = GreedyPolicy(nets, task, algorithm)
    records = [rollout(task, policy, env_config, rng) for _ in range(n_episodes)]
    return summarize_episodes(records)


@dataclass
class TabularQ:
    """Joint-action Q-tables of shape (states, leader actions, follower actions)."""

    leader: np.ndarray
    follower: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_leader: int, n_follower: int) -> "TabularQ":
        shape = (n_states, n_leader, n_follower)
        return cls(np.zeros(shape), np.zeros(shape))


class TabularTransition(NamedTuple):
    state: int
    a_L: int
    a_F: int
    r_L: float
    r_F: float
    next_state: int
    done: bool = False


def tabular_stackelberg_update(
    tables: TabularQ,
    transition: TabularTransition,
    alpha: float,
    gamma: float,
) -> TabularQ:
    """Q(s,a) <- (1 - alpha) Q(s,a) + alpha (r + gamma Q(s', a'_SE)) for both agents."""
    n_states, n_leader, n_follower = tables.leader.shape
    for name, value, bound in (
        ("state", transition.state, n_states),
        ("next_state", transition.next_state, n_states),
        ("a_L", transition.a_L, n_leader),
        ("a_F", transition.a_F, n_follower),
    ):
        if not 0 <= value < bound:
            raise IndexError(f"{name} {value} is outside 0..{bound - 1}.")

    leader = tables.leader.copy()
    follower = tables.follower.copy()
    future_L = future_F = 0.0
    if not transition.done:
        row, column = stackelberg_equilibrium(
            BimatrixGame(tables.leader[transition.next_state], tables.follower[transition.next_state])
        )
        future_L = tables.leader[transition.next_state, row, column]
        future_F = tables.follower[transition.next_state, row, column]

    cell = (transition.state, transition.a_L, transition.a_F)
    leader[cell] = (1 - alpha) * leader[cell] + alpha * (transition.r_L + gamma * future_L)
    follower[cell] = (1 - alpha) * follower[cell] + alpha * (transition.r_F + gamma * future_F)
    return TabularQ(leader, follower)

