"""Two-robot stochastic assembly environment: joint-action step, rewards, transitions, rollouts."""

import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple

import numpy as np

from .config import FOLLOWER_TYPES, JOINT_TYPE, LEADER_TYPES, P_COOPERATIVE, P_INDIVIDUAL, R_COP, R_COST, R_IND
from .errors import ConfigError, TerminalStateError
from .task_model import (
    EMPTY,
    NOOP,
    AssemblyTask,
    ChessboardState,
    complete_subtask,
    default_max_steps,
    initial_state,
    is_finished,
    subtask_at,
)

logger = logging.getLogger(__name__)

# Per-agent outcome tags reported with every step.
COMPLETED = "completed"
FAILED_ROLL = "failed-roll"
WRONG_TYPE = "wrong-type"
CONFLICT = "conflict"
BLOCKED = "blocked"
IDLE = "idle"
JOINT_SUCCESS = "joint-success"
JOINT_FAIL = "joint-fail"


@dataclass(frozen=True)
class EnvConfig:
    p_individual: float = P_INDIVIDUAL
    p_cooperative: float = P_COOPERATIVE
    r_cop: float = R_COP
    r_ind: float = R_IND
    r_cost: float = R_COST
    max_steps: int | None = None
    deterministic: bool = False

    def __post_init__(self) -> None:
        for name in ("p_individual", "p_cooperative"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}.")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1, got {self.max_steps}.")

    @property
    def success_individual(self) -> float:
        return 1.0 if self.deterministic else self.p_individual

    @property
    def success_cooperative(self) -> float:
        return 1.0 if self.deterministic else self.p_cooperative

    def step_budget(self, task: AssemblyTask) -> int:
        return self.max_steps if self.max_steps is not None else default_max_steps(task)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "EnvConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown environment settings: {', '.join(sorted(unknown))}.")
        return cls(**payload)


@dataclass(frozen=True)
class JointAction:
    """Leader and follower actions; 0 is the no-op, 1..n select a column."""

    a_L: int = NOOP
    a_F: int = NOOP


@dataclass(frozen=True)
class StepOutcome:
    r_L: float
    r_F: float
    next_state: ChessboardState
    done: bool
    events: tuple[str, str]


@dataclass(frozen=True)
class StepRecord:
    """One logged interaction round."""

    step: int
    state: ChessboardState
    action: JointAction
    r_L: float
    r_F: float
    next_state: ChessboardState
    done: bool
    events: tuple[str, str]


@dataclass
class EpisodeRecord:
    steps: list[StepRecord] = field(default_factory=list)
    completion_steps: int = 0
    completed: bool = False
    reward_L: float = 0.0
    reward_F: float = 0.0

    @property
    def avg_reward_L(self) -> float:
        return self.reward_L / self.completion_steps if self.completion_steps else 0.0

    @property
    def avg_reward_F(self) -> float:
        return self.reward_F / self.completion_steps if self.completion_steps else 0.0

    def cumulative_rewards(self) -> tuple[list[float], list[float]]:
        """Running totals of both agents' rewards after every step."""
        leader = np.cumsum([step.r_L for step in self.steps]).tolist()
        follower = np.cumsum([step.r_F for step in self.steps]).tolist()
        return leader, follower


Policy = Callable[[ChessboardState], JointAction]


class Scoring(NamedTuple):
    """Rewards and tags of one joint action plus the sub-tasks it attempts (EMPTY if none)."""

    r_L: float
    r_F: float
    tag_L: str
    tag_F: str
    joint: int = EMPTY
    solo_L: int = EMPTY
    solo_F: int = EMPTY


def _can_do_alone(task_type: int, leader: bool) -> bool:
    """Whether one agent may complete a sub-task of this type by itself."""
    return task_type in (LEADER_TYPES if leader else FOLLOWER_TYPES)


def score_actions(
    state: ChessboardState,
    task: AssemblyTask,
    action: JointAction,
    config: EnvConfig,
) -> Scoring:
    """Apply the reward table; rewards depend on (state, action) only."""
    if action.a_L == NOOP and action.a_F == NOOP:
        half = config.r_cost / 2
        return Scoring(half, half, IDLE, IDLE)

    target_L = subtask_at(state, action.a_L)
    target_F = subtask_at(state, action.a_F)

    # Both robots on the same sub-task: cooperation for type 4, a conflict otherwise.
    if target_L != EMPTY and target_L == target_F:
        if task.types[target_L] == JOINT_TYPE:
            return Scoring(config.r_cop, config.r_cop, JOINT_SUCCESS, JOINT_SUCCESS, joint=target_L)
        return Scoring(config.r_cost, config.r_cost, CONFLICT, CONFLICT)

    def solo(chosen: int, target: int, leader: bool) -> tuple[float, str, int]:
        if chosen == NOOP:
            return 0.0, IDLE, EMPTY
        if target == EMPTY:
            return config.r_cost, BLOCKED, EMPTY
        # Wrong-type picks and type-4 sub-tasks attempted alone both cost.
        if not _can_do_alone(task.types[target], leader):
            return config.r_cost, WRONG_TYPE, EMPTY
        return config.r_ind, COMPLETED, target

    r_L, tag_L, solo_L = solo(action.a_L, target_L, leader=True)
    r_F, tag_F, solo_F = solo(action.a_F, target_F, leader=False)
    return Scoring(r_L, r_F, tag_L, tag_F, solo_L=solo_L, solo_F=solo_F)


def step(
    state: ChessboardState,
    task: AssemblyTask,
    action: JointAction,
    config: EnvConfig,
    rng: np.random.Generator,
) -> StepOutcome:
    """Advance the board by one joint interaction round."""
    budget = config.step_budget(task)
    if is_finished(state, task) or state.step_index >= budget:
        raise TerminalStateError(
            f"Cannot step a terminal state (step {state.step_index}, {len(state.completed)}/{task.n_subtasks} done)."
        )

    r_L, r_F, tag_L, tag_F, joint, solo_L, solo_F = score_actions(state, task, action, config)

    finished: list[int] = []
    if joint != EMPTY:
        # One shared roll: the pair acts as a single operation.
        if _roll(config.success_cooperative, rng):
            finished.append(joint)
        else:
            tag_L = tag_F = JOINT_FAIL

    if solo_L != EMPTY:
        if _roll(config.success_individual, rng):
            finished.append(solo_L)
        else:
            tag_L = FAILED_ROLL
    if solo_F != EMPTY:
        if _roll(config.success_individual, rng):
            finished.append(solo_F)
        else:
            tag_F = FAILED_ROLL

    next_state = state
    for subtask_id in finished:
        next_state = complete_subtask(next_state, task, subtask_id)
    next_state = ChessboardState(
        frontier=next_state.frontier,
        completed=next_state.completed,
        step_index=state.step_index + 1,
    )
    done = is_finished(next_state, task) or next_state.step_index >= budget
    return StepOutcome(r_L=r_L, r_F=r_F, next_state=next_state, done=done, events=(tag_L, tag_F))


def _roll(probability: float, rng: np.random.Generator) -> bool:
    # Certain outcomes skip the draw so deterministic runs never touch the rng.
    if probability >= 1.0:
        return True
    if probability <= 0.0:
        return False
    return bool(rng.random() < probability)


def rollout(
    task: AssemblyTask,
    policy: Policy,
    config: EnvConfig,
    rng: np.random.Generator,
) -> EpisodeRecord:
    """Run a policy from the initial board until completion or the step budget."""
    record = EpisodeRecord()
    state = initial_state(task)
    done = False
    while not done:
        action = policy(state)
        outcome = step(state, task, action, config, rng)
        record.steps.append(
            StepRecord(
                step=outcome.next_state.step_index,
                state=state,
                action=action,
                r_L=outcome.r_L,
                r_F=outcome.r_F,
                next_state=outcome.next_state,
                done=outcome.done,
                events=outcome.events,
            )
        )
        record.reward_L += outcome.r_L
        record.reward_F += outcome.r_F
        logger.debug("step %d action %s events %s", outcome.next_state.step_index, action, outcome.events)
        state = outcome.next_state
        done = outcome.done

    record.completion_steps = state.step_index
    record.completed = is_finished(state, task)
    return record
