"""Experiment harness: optimal-schedule oracle, perturbation runs, task generation, multi-seed suites."""

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .assembly_env import EnvConfig, JointAction, Policy, rollout
from .config import (
    EPISODE_LOG_NAME,
    FOLLOWER_TYPES,
    GENERATION_RETRIES,
    JOINT_TYPE,
    LEADER_TYPES,
    METRICS_LOG_NAME,
    ORACLE_STATE_BUDGET,
    RESULTS_LOG_NAME,
    RESULTS_TABLE_NAME,
)
from .errors import ConfigError, GenerationError, SearchBudgetExceeded, TaskValidationError
from .history import append_jsonl, episode_log_rows, read_jsonl
from .learning import AgentNets, Algorithm, EvalMetrics, GreedyPolicy, TrainConfig, evaluate, summarize_episodes, train
from .report import render_results_table
from .task_model import (
    EMPTY,
    NOOP,
    Agent,
    AssemblyTask,
    ChessboardState,
    Placement,
    SubTask,
    compute_frontier,
    load_task,
    save_task,
    validate_task,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerturbationSchedule:
    """(agent, step) pairs at which the agent's action is forced to the no-op; steps are 1-based."""

    events: tuple[tuple[Agent, int], ...] = ()

    def __post_init__(self) -> None:
        normalized = tuple(sorted((Agent(agent), int(step)) for agent, step in self.events))
        for agent, step in normalized:
            if step < 1:
                raise ConfigError(f"Perturbation steps are 1-based; got {agent.value}@{step}.")
        object.__setattr__(self, "events", normalized)

    @classmethod
    def parse(cls, text: str) -> "PerturbationSchedule":
        """Parse 'L:1,L:4,F:6,F:8'."""
        events: list[tuple[Agent, int]] = []
        for part in text.replace(" ", "").split(","):
            if not part:
                continue
            agent, sep, step = part.partition(":")
            if not sep or agent.upper() not in {"L", "F"} or not step.isdigit():
                raise ConfigError(f"Malformed perturbation {part!r}; expected AGENT:STEP such as L:4.")
            events.append((Agent(agent.upper()), int(step)))
        return cls(tuple(events))

    def idle_agents(self, step: int) -> set[Agent]:
        return {agent for agent, scheduled in self.events if scheduled == step}

    def to_text(self) -> str:
        return ",".join(f"{agent.value}:{step}" for agent, step in self.events)


# Perturbations used for the first four tasks; only task1 ships with a layout.
PRESET_PERTURBATIONS = {
    "task1": PerturbationSchedule.parse("L:1,L:4,F:6,F:8"),
    "task2": PerturbationSchedule.parse("L:3,L:7,F:5,F:10"),
    "task3": PerturbationSchedule.parse("L:1,L:2,L:9,F:2,F:7,F:11"),
    "task4": PerturbationSchedule.parse("L:9,L:14,L:15,F:2,F:6"),
}


class PerturbedPolicy:
    """Wraps a policy and overrides scheduled agents' actions with the no-op."""

    def __init__(self, policy: Policy, schedule: PerturbationSchedule) -> None:
        self.policy = policy
        self.schedule = schedule

    def __call__(self, state: ChessboardState) -> JointAction:
        action = self.policy(state)
        idle = self.schedule.idle_agents(state.step_index + 1)
        if not idle:
            return action
        return JointAction(
            a_L=NOOP if Agent.LEADER in idle else action.a_L,
            a_F=NOOP if Agent.FOLLOWER in idle else action.a_F,
        )


@dataclass
class OracleResult:
    steps: int
    schedule: list[tuple[int | None, int | None]]
    states_visited: int


def _moves(task: AssemblyTask, frontier: tuple[int, ...]) -> list[tuple[int | None, int | None, frozenset[int]]]:
    """Productive joint moves under certain success: (leader id, follower id, completed ids)."""
    available = sorted(set(frontier) - {EMPTY})
    leader_options: list[int | None] = [None] + [u for u in available if task.types[u] in LEADER_TYPES]
    follower_options: list[int | None] = [None] + [u for u in available if task.types[u] in FOLLOWER_TYPES]
    moves: list[tuple[int | None, int | None, frozenset[int]]] = []
    for leader in leader_options:
        for follower in follower_options:
            if leader is None and follower is None:
                continue
            if leader is not None and leader == follower:
                continue
            done = frozenset(u for u in (leader, follower) if u is not None)
            moves.append((leader, follower, done))
    for u in available:
        if task.types[u] == JOINT_TYPE:
            moves.append((u, u, frozenset({u})))
    return moves


def optimal_steps_oracle(task: AssemblyTask, budget: int = ORACLE_STATE_BUDGET) -> OracleResult:
    """Minimum joint rounds to finish the task with certain success, by breadth-first search."""
    start: frozenset[int] = frozenset()
    goal = task.all_ids
    parents: dict[frozenset[int], tuple[frozenset[int], int | None, int | None] | None] = {start: None}
    layer = [start]
    depth = 0
    while layer:
        if goal in parents:
            break
        depth += 1
        next_layer: list[frozenset[int]] = []
        for completed in layer:
            frontier = compute_frontier(task, completed)
            for leader, follower, finished in _moves(task, frontier):
                successor = completed | finished
                if successor in parents:
                    continue
                parents[successor] = (completed, leader, follower)
                next_layer.append(successor)
                if len(parents) > budget:
                    raise SearchBudgetExceeded(
                        f"Oracle visited more than {budget} board states on {task.name}; raise the budget."
                    )
        layer = next_layer

    if goal not in parents:
        raise TaskValidationError(f"Task {task.name} cannot be completed.")

    schedule: list[tuple[int | None, int | None]] = []
    node = goal
    while parents[node] is not None:
        previous, leader, follower = parents[node]  # type: ignore[misc]
        schedule.append((leader, follower))
        node = previous
    schedule.reverse()
    logger.debug("Oracle for %s: %d steps, %d states.", task.name, depth, len(parents))
    return OracleResult(steps=len(schedule), schedule=schedule, states_visited=len(parents))


class SchedulePolicy:
    """Replays an oracle schedule as column actions; idles once the schedule is exhausted."""

    def __init__(self, task: AssemblyTask, schedule: list[tuple[int | None, int | None]]) -> None:
        self.task = task
        self.schedule = schedule

    def _column(self, state: ChessboardState, subtask_id: int | None) -> int:
        if subtask_id is None or subtask_id not in state.frontier:
            return NOOP
        return state.frontier.index(subtask_id) + 1

    def __call__(self, state: ChessboardState) -> JointAction:
        if state.step_index >= len(self.schedule):
            return JointAction()
        leader, follower = self.schedule[state.step_index]
        return JointAction(self._column(state, leader), self._column(state, follower))


@dataclass
class PerturbationReport:
    metrics: EvalMetrics
    schedule: PerturbationSchedule
    trajectories: list[dict[str, list[float]]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schedule": self.schedule.to_text(),
            "metrics": self.metrics.to_dict(),
            "trajectories": self.trajectories,
        }


def run_perturbed_eval(
    nets: AgentNets,
    task: AssemblyTask,
    schedule: PerturbationSchedule,
    n_runs: int,
    env_config: EnvConfig | None = None,
    algorithm: Algorithm | str = Algorithm.STACKELBERG,
    seed: int = 0,
) -> PerturbationReport:
    """Greedy rollouts (deterministic environment by default) with scheduled forced no-ops."""
    if n_runs < 1:
        raise ConfigError(f"n_runs must be positive, got {n_runs}.")
    env_config = env_config if env_config is not None else EnvConfig(deterministic=True)
    rng = np.random.default_rng(seed)
    policy = PerturbedPolicy(GreedyPolicy(nets, task, algorithm), schedule)
    records = [rollout(task, policy, env_config, rng) for _ in range(n_runs)]
    trajectories = []
    for record in records:
        leader, follower = record.cumulative_rewards()
        trajectories.append({"leader": leader, "follower": follower})
    return PerturbationReport(metrics=summarize_episodes(records), schedule=schedule, trajectories=trajectories)


# Type proportions of the bracket task: 4 leader-only, 4 follower-only, 8 either, 2 joint.
TASK1_TYPE_MIX = (4 / 18, 4 / 18, 8 / 18, 2 / 18)


@dataclass(frozen=True)
class TaskGenSpec:
    n_columns: int = 4
    n_subtasks: int = 18
    type_weights: tuple[float, float, float, float] = TASK1_TYPE_MIX
    rows: int | None = None
    seed: int = 0
    name: str | None = None
    cross_edge_probability: float = 0.15

    def __post_init__(self) -> None:
        object.__setattr__(self, "type_weights", tuple(float(weight) for weight in self.type_weights))
        if self.n_columns < 1 or self.n_subtasks < 1:
            raise ConfigError("n_columns and n_subtasks must be positive.")
        if len(self.type_weights) != 4 or min(self.type_weights) < 0 or sum(self.type_weights) <= 0:
            raise ConfigError(f"type_weights must be four non-negative numbers with a positive sum, got {self.type_weights}.")
        if self.rows is not None and self.rows < 1:
            raise ConfigError(f"rows must be positive, got {self.rows}.")
        if not 0.0 <= self.cross_edge_probability <= 1.0:
            raise ConfigError(f"cross_edge_probability must be in [0, 1], got {self.cross_edge_probability}.")

    @property
    def task_name(self) -> str:
        return self.name or f"gen{self.n_subtasks}-c{self.n_columns}-s{self.seed}"

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["type_weights"] = list(self.type_weights)
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "TaskGenSpec":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown generator settings: {', '.join(sorted(unknown))}.")
        return cls(**payload)


# Surrogates matching the sub-task counts of reference tasks two to four.
SURROGATE_SPECS = (
    TaskGenSpec(n_columns=4, n_subtasks=18, seed=2, name="surrogate18"),
    TaskGenSpec(n_columns=5, n_subtasks=20, seed=3, name="surrogate20"),
    TaskGenSpec(n_columns=6, n_subtasks=26, seed=4, name="surrogate26"),
)


def _build_candidate(spec: TaskGenSpec, rng: np.random.Generator) -> AssemblyTask | None:
    """One random layout, or None when the blocks do not fit the rows."""
    weights = np.asarray(spec.type_weights) / sum(spec.type_weights)
    heights = [0] * spec.n_columns
    tops: list[int | None] = [None] * spec.n_columns
    subtasks: list[SubTask] = []
    placement: dict[int, Placement] = {}
    edges: set[tuple[int, int]] = set()

    for subtask_id in range(1, spec.n_subtasks + 1):
        task_type = int(rng.choice(4, p=weights)) + 1
        width = 2 if task_type == JOINT_TYPE and spec.n_columns >= 2 else 1
        lo = int(rng.integers(1, spec.n_columns - width + 2))
        row = max(heights[column - 1] for column in range(lo, lo + width))
        if spec.rows is not None and row >= spec.rows:
            # Fall back to the lowest slot of this width.
            lo = min(
                range(1, spec.n_columns - width + 2),
                key=lambda start: max(heights[start - 1 : start - 1 + width]),
            )
            row = max(heights[lo - 1 : lo - 1 + width])
            if row >= spec.rows:
                return None

        # The current top of every covered column precedes the new block.
        for column in range(lo, lo + width):
            top = tops[column - 1]
            if top is not None:
                edges.add((top, subtask_id))
        if subtask_id > 1 and rng.random() < spec.cross_edge_probability:
            covered = set(range(lo, lo + width))
            candidates = [
                other
                for other, place in placement.items()
                if place.row < row and not covered & set(place.columns)
            ]
            if candidates:
                edges.add((int(rng.choice(candidates)), subtask_id))

        for column in range(lo, lo + width):
            heights[column - 1] = row + 1
            tops[column - 1] = subtask_id
        subtasks.append(SubTask(subtask_id, task_type, f"Generated sub-task {subtask_id}"))
        placement[subtask_id] = Placement(row=row, lo=lo, hi=lo + width - 1)

    return AssemblyTask(
        name=spec.task_name,
        n_columns=spec.n_columns,
        subtasks=tuple(subtasks),
        edges=frozenset(edges),
        placement=placement,
    )


def generate_task(spec: TaskGenSpec, path: Path | None = None) -> AssemblyTask:
    """Random valid chessboard task for a spec, identical for identical seeds.

    Validation is enough for feasibility: with no cycle and every lower block in a column
    preceding the one above it, the earliest open sub-task always tops all of its columns.
    """
    rng = np.random.default_rng(spec.seed)
    for attempt in range(GENERATION_RETRIES):
        candidate = _build_candidate(spec, rng)
        if candidate is None:
            continue
        try:
            validate_task(candidate)
        except TaskValidationError as exc:
            logger.debug("Generation attempt %d rejected: %s", attempt + 1, exc)
            continue
        if path is not None:
            save_task(candidate, path)
        return candidate
    raise GenerationError(
        f"No valid task for {spec.n_subtasks} sub-tasks in {spec.n_columns} columns"
        f" (rows={spec.rows}) after {GENERATION_RETRIES} attempts."
    )


@dataclass(frozen=True)
class SuiteConfig:
    tasks: tuple[str, ...] = ("tasks/task1.json",)
    generated: tuple[TaskGenSpec, ...] = ()
    algorithms: tuple[str, ...] = ("sg", "nash", "ind")
    seeds: tuple[int, ...] = (0, 1, 2)
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    eval_episodes: int = 10
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(
            self,
            "generated",
            tuple(spec if isinstance(spec, TaskGenSpec) else TaskGenSpec.from_dict(spec) for spec in self.generated),
        )
        object.__setattr__(self, "algorithms", tuple(Algorithm.parse(name).value for name in self.algorithms))
        object.__setattr__(self, "seeds", tuple(int(seed) for seed in self.seeds))
        if self.eval_episodes < 1:
            raise ConfigError(f"eval_episodes must be positive, got {self.eval_episodes}.")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}.")

    def to_dict(self) -> dict[str, Any]:
        return {
            "tasks": list(self.tasks),
            "generated": [spec.to_dict() for spec in self.generated],
            "algorithms": list(self.algorithms),
            "seeds": list(self.seeds),
            "train": self.train.to_dict(),
            "env": self.env.to_dict(),
            "eval_episodes": self.eval_episodes,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "SuiteConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown suite settings: {', '.join(sorted(unknown))}.")
        values = dict(payload)
        if "train" in values:
            values["train"] = TrainConfig.from_dict(values["train"])
        if "env" in values:
            values["env"] = EnvConfig.from_dict(values["env"])
        return cls(**values)


@dataclass(frozen=True)
class SuiteCell:
    task_path: str
    algorithm: str
    seed: int
    train: TrainConfig
    env: EnvConfig
    eval_episodes: int
    cell_dir: str


def run_cell(cell: SuiteCell) -> list[dict[str, Any]]:
    """Train and evaluate one (task, algorithm, seed) cell; returns its result records."""
    task = load_task(cell.task_path)
    cell_dir = Path(cell.cell_dir)
    for name in (METRICS_LOG_NAME, EPISODE_LOG_NAME, RESULTS_LOG_NAME):
        (cell_dir / name).unlink(missing_ok=True)
    train_config = replace(cell.train, seed=cell.seed)
    result = train(
        task,
        cell.env,
        train_config,
        cell.algorithm,
        run_dir=cell_dir,
        metrics_path=cell_dir / METRICS_LOG_NAME,
    )
    env_config = replace(cell.env, max_steps=train_config.max_steps) if train_config.max_steps else cell.env
    rng = np.random.default_rng(cell.seed)
    stochastic = evaluate(result.nets, task, env_config, cell.eval_episodes, rng, cell.algorithm)
    deterministic = evaluate(
        result.nets, task, replace(env_config, deterministic=True), cell.eval_episodes, rng, cell.algorithm
    )

    log_path = cell_dir / EPISODE_LOG_NAME
    for episode, record in enumerate(stochastic.episodes, start=1):
        append_jsonl(log_path, episode_log_rows(episode, record))

    values = {
        "steps": stochastic.mean_steps,
        "avg_reward_L": stochastic.mean_avg_reward_L,
        "avg_reward_F": stochastic.mean_avg_reward_F,
        "completion_rate": stochastic.completion_rate,
        "det_steps": deterministic.mean_steps,
        "det_completion_rate": deterministic.completion_rate,
    }
    records = [
        {"task": task.name, "algorithm": cell.algorithm, "seed": cell.seed, "metric": metric, "value": value}
        for metric, value in values.items()
    ]
    append_jsonl(cell_dir / RESULTS_LOG_NAME, records)
    logger.info("Finished %s / %s / seed %d: %.1f steps.", task.name, cell.algorithm, cell.seed, stochastic.mean_steps)
    return records


def aggregate_records(records: list[dict[str, Any]]) -> dict[tuple[str, str, str], tuple[float, float]]:
    """Mean and population std across seeds for every (task, algorithm, metric)."""
    grouped: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    for record in records:
        grouped[(record["task"], record["algorithm"], record["metric"])].append(float(record["value"]))
    return {key: (float(np.mean(values)), float(np.std(values))) for key, values in grouped.items()}


@dataclass
class SuiteResult:
    records: list[dict[str, Any]]
    aggregates: dict[tuple[str, str, str], tuple[float, float]]
    table: str


def run_experiment_suite(config: SuiteConfig, output_dir: Path) -> SuiteResult:
    """Train every (task, algorithm, seed) cell, then aggregate their records into a table.

    A rerun into the same output directory replaces the earlier results.
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / RESULTS_LOG_NAME).unlink(missing_ok=True)
    task_paths = [str(path) for path in config.tasks]
    generated_dir = output_dir / "generated_tasks"
    for spec in config.generated:
        path = generated_dir / f"{spec.task_name}.json"
        generate_task(spec, path)
        task_paths.append(str(path))

    cells = [
        SuiteCell(
            task_path=task_path,
            algorithm=algorithm,
            seed=seed,
            train=config.train,
            env=config.env,
            eval_episodes=config.eval_episodes,
            cell_dir=str(output_dir / "cells" / f"{Path(task_path).stem}-{algorithm}-seed{seed}"),
        )
        for task_path in task_paths
        for algorithm in config.algorithms
        for seed in config.seeds
    ]

    if config.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(run_cell, cells))
    else:
        for cell in cells:
            run_cell(cell)

    # Aggregation always reads back the per-cell logs.
    records: list[dict[str, Any]] = []
    for cell in cells:
        records.extend(read_jsonl(Path(cell.cell_dir) / RESULTS_LOG_NAME))
    append_jsonl(output_dir / RESULTS_LOG_NAME, records)
    aggregates = aggregate_records(records)
    table = render_results_table(aggregates)
    (output_dir / RESULTS_TABLE_NAME).parent.mkdir(parents=True, exist_ok=True)
    (output_dir / RESULTS_TABLE_NAME).write_text(table + "\n", encoding="utf-8")
    return SuiteResult(records=records, aggregates=aggregates, table=table)
