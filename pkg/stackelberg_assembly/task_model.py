"""Chessboard representation of decomposed assembly tasks: loading, validation, evolution."""

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, NamedTuple

from .config import (
    FOLLOWER_TYPES,
    JOINT_TYPE,
    LEADER_TYPES,
    STEP_BUDGET_ROUNDING,
    STEPS_PER_SUBTASK,
    SUBTASK_TYPES,
)
from .errors import InvalidActionError, SubtaskUnavailableError, TaskFileError, TaskValidationError

# Frontier sentinel for a column with no available sub-task, and the no-op action.
EMPTY = 0
NOOP = 0


class Agent(str, Enum):
    LEADER = "L"
    FOLLOWER = "F"


# Types each agent can perform, alone or jointly.
PRODUCTIVE_TYPES = {
    Agent.LEADER: LEADER_TYPES | {JOINT_TYPE},
    Agent.FOLLOWER: FOLLOWER_TYPES | {JOINT_TYPE},
}


@dataclass(frozen=True)
class SubTask:
    id: int
    task_type: int
    label: str = ""


@dataclass(frozen=True)
class Placement:
    """Row index (0 = bottom) and inclusive 1-based column range of a sub-task."""

    row: int
    lo: int
    hi: int

    @property
    def columns(self) -> range:
        return range(self.lo, self.hi + 1)


@dataclass(frozen=True, eq=False)
class AssemblyTask:
    name: str
    n_columns: int
    subtasks: tuple[SubTask, ...]
    edges: frozenset[tuple[int, int]]
    placement: Mapping[int, Placement] = field(repr=False)
    max_steps: int | None = None

    @property
    def n_subtasks(self) -> int:
        return len(self.subtasks)

    @property
    def ids(self) -> range:
        return range(1, self.n_subtasks + 1)

    @cached_property
    def types(self) -> dict[int, int]:
        return {subtask.id: subtask.task_type for subtask in self.subtasks}

    @cached_property
    def predecessors(self) -> dict[int, frozenset[int]]:
        preds: dict[int, set[int]] = {subtask.id: set() for subtask in self.subtasks}
        for pred, succ in self.edges:
            preds.setdefault(succ, set()).add(pred)
        return {node: frozenset(values) for node, values in preds.items()}

    @cached_property
    def column_stacks(self) -> tuple[tuple[int, ...], ...]:
        """Sub-task ids of every column ordered bottom-up; index 0 is column 1."""
        stacks: list[list[tuple[int, int]]] = [[] for _ in range(self.n_columns)]
        for subtask_id, place in self.placement.items():
            for column in place.columns:
                if 1 <= column <= self.n_columns:
                    stacks[column - 1].append((place.row, subtask_id))
        return tuple(tuple(subtask_id for _, subtask_id in sorted(stack)) for stack in stacks)

    @cached_property
    def all_ids(self) -> frozenset[int]:
        return frozenset(self.ids)


@dataclass(frozen=True)
class ChessboardState:
    frontier: tuple[int, ...]
    completed: frozenset[int] = frozenset()
    step_index: int = 0


class ActionSet(NamedTuple):
    """The full action space {noop, 1..n} plus the columns productive for an agent."""

    actions: tuple[int, ...]
    productive: frozenset[int]


def _require(condition: bool, message: str, ids: tuple[int, ...] = ()) -> None:
    if not condition:
        raise TaskValidationError(message, ids)


def _as_int(value: Any, what: str) -> int:
    # bool is an int subclass but never a meaningful id or count here.
    if isinstance(value, bool) or not isinstance(value, int):
        raise TaskFileError(f"Expected an integer for {what}, got {value!r}.")
    return value


def normalize_task(payload: Any) -> AssemblyTask:
    """Convert a parsed task document into an AssemblyTask without validating it."""
    if not isinstance(payload, dict):
        raise TaskFileError("Task document must be a JSON object.")

    missing = [key for key in ("name", "n_columns", "subtasks", "edges", "placement") if key not in payload]
    if missing:
        raise TaskFileError(f"Task document is missing fields: {', '.join(missing)}.")

    raw_subtasks = payload["subtasks"]
    raw_edges = payload["edges"]
    raw_placement = payload["placement"]
    if not isinstance(raw_subtasks, list) or not isinstance(raw_edges, list) or not isinstance(raw_placement, list):
        raise TaskFileError("Fields subtasks, edges and placement must be lists.")

    subtasks: list[SubTask] = []
    for entry in raw_subtasks:
        if not isinstance(entry, dict) or "id" not in entry or "type" not in entry:
            raise TaskFileError(f"Malformed sub-task entry: {entry!r}.")
        subtasks.append(
            SubTask(
                id=_as_int(entry["id"], "sub-task id"),
                task_type=_as_int(entry["type"], "sub-task type"),
                label=str(entry.get("label", "")),
            )
        )
    subtasks.sort(key=lambda subtask: subtask.id)

    edges: set[tuple[int, int]] = set()
    for entry in raw_edges:
        if not isinstance(entry, list) or len(entry) != 2:
            raise TaskFileError(f"Malformed edge entry: {entry!r}; expected [pred, succ].")
        edges.add((_as_int(entry[0], "edge source"), _as_int(entry[1], "edge target")))

    placement: dict[int, Placement] = {}
    for entry in raw_placement:
        if not isinstance(entry, dict) or not {"id", "row", "columns"} <= entry.keys():
            raise TaskFileError(f"Malformed placement entry: {entry!r}.")
        columns = entry["columns"]
        if not isinstance(columns, list) or len(columns) != 2:
            raise TaskFileError(f"Placement columns must be [lo, hi], got {columns!r}.")
        subtask_id = _as_int(entry["id"], "placement id")
        if subtask_id in placement:
            raise TaskValidationError(f"Sub-task {subtask_id} is placed more than once.", (subtask_id,))
        placement[subtask_id] = Placement(
            row=_as_int(entry["row"], "placement row"),
            lo=_as_int(columns[0], "placement column"),
            hi=_as_int(columns[1], "placement column"),
        )

    max_steps = payload.get("max_steps")
    return AssemblyTask(
        name=str(payload["name"]),
        n_columns=_as_int(payload["n_columns"], "n_columns"),
        subtasks=tuple(subtasks),
        edges=frozenset(edges),
        placement=placement,
        max_steps=None if max_steps is None else _as_int(max_steps, "max_steps"),
    )


def _find_cycle(task: AssemblyTask) -> tuple[int, ...]:
    """Return one directed cycle as a tuple of ids, or () when the graph is acyclic."""
    indegree = {node: len(preds) for node, preds in task.predecessors.items()}
    successors: dict[int, list[int]] = {node: [] for node in indegree}
    for pred, succ in task.edges:
        successors[pred].append(succ)

    ready = [node for node, degree in indegree.items() if degree == 0]
    while ready:
        node = ready.pop()
        for succ in successors[node]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                ready.append(succ)

    remaining = {node for node, degree in indegree.items() if degree > 0}
    if not remaining:
        return ()

    # Every remaining node keeps a remaining predecessor, so walking back must loop.
    path: list[int] = []
    seen: dict[int, int] = {}
    node = min(remaining)
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = min(pred for pred in task.predecessors[node] if pred in remaining)
    cycle = path[seen[node]:]
    cycle.reverse()
    return tuple(cycle)


def ancestors(task: AssemblyTask) -> dict[int, frozenset[int]]:
    """Transitive predecessors of every sub-task (graph must be acyclic)."""
    result: dict[int, frozenset[int]] = {}

    def visit(node: int) -> frozenset[int]:
        if node not in result:
            collected: set[int] = set()
            for pred in task.predecessors[node]:
                collected.add(pred)
                collected |= visit(pred)
            result[node] = frozenset(collected)
        return result[node]

    for node in task.ids:
        visit(node)
    return result


def validate_task(task: AssemblyTask) -> AssemblyTask:
    """Check every chessboard invariant and return the task unchanged."""
    _require(task.n_columns >= 1, f"n_columns must be positive, got {task.n_columns}.")
    _require(task.n_subtasks >= 1, "A task needs at least one sub-task.")
    _require(task.max_steps is None or task.max_steps >= 1, f"max_steps must be positive, got {task.max_steps}.")

    ids = [subtask.id for subtask in task.subtasks]
    duplicates = tuple(sorted({node for node in ids if ids.count(node) > 1}))
    _require(not duplicates, f"Duplicate sub-task ids: {list(duplicates)}.", duplicates)
    expected = set(range(1, len(ids) + 1))
    strays = tuple(sorted(set(ids) ^ expected))
    _require(not strays, f"Sub-task ids must be exactly 1..{len(ids)}; offending ids: {list(strays)}.", strays)

    bad_types = tuple(subtask.id for subtask in task.subtasks if subtask.task_type not in SUBTASK_TYPES)
    _require(not bad_types, f"Sub-tasks with a type outside 1-4: {list(bad_types)}.", bad_types)

    for pred, succ in sorted(task.edges):
        _require(pred in expected and succ in expected, f"Edge {pred}->{succ} references an unknown sub-task.", (pred, succ))
        _require(pred != succ, f"Sub-task {pred} precedes itself.", (pred,))

    unplaced = tuple(sorted(expected - task.placement.keys()))
    _require(not unplaced, f"Sub-tasks without placement: {list(unplaced)}.", unplaced)
    extra = tuple(sorted(task.placement.keys() - expected))
    _require(not extra, f"Placement for unknown sub-tasks: {list(extra)}.", extra)

    for subtask_id, place in sorted(task.placement.items()):
        _require(place.row >= 0, f"Sub-task {subtask_id} has negative row {place.row}.", (subtask_id,))
        _require(
            1 <= place.lo <= place.hi <= task.n_columns,
            f"Sub-task {subtask_id} columns [{place.lo}, {place.hi}] are not a range within 1..{task.n_columns}.",
            (subtask_id,),
        )

    cycle = _find_cycle(task)
    _require(not cycle, f"Precedence cycle: {' -> '.join(map(str, cycle + cycle[:1]))}.", cycle)

    occupied: dict[tuple[int, int], int] = {}
    for subtask_id, place in sorted(task.placement.items()):
        for column in place.columns:
            other = occupied.setdefault((column, place.row), subtask_id)
            _require(
                other == subtask_id,
                f"Sub-tasks {other} and {subtask_id} share column {column}, row {place.row}.",
                (other, subtask_id),
            )

    for pred, succ in sorted(task.edges):
        shared = set(task.placement[pred].columns) & set(task.placement[succ].columns)
        _require(
            not shared or task.placement[pred].row < task.placement[succ].row,
            f"Edge {pred}->{succ} shares a column but {pred} is not placed below {succ}.",
            (pred, succ),
        )

    lineage = ancestors(task)
    for column_index, stack in enumerate(task.column_stacks, start=1):
        for position, subtask_id in enumerate(stack):
            for below in stack[:position]:
                _require(
                    below in lineage[subtask_id],
                    f"Sub-task {below} sits below {subtask_id} in column {column_index} but does not precede it.",
                    (below, subtask_id),
                )
    return task


def resolve_task_path(path: Path) -> Path:
    """Accept a task path with or without its .json suffix."""
    if path.exists():
        return path
    with_suffix = path.with_suffix(".json")
    if path.suffix != ".json" and with_suffix.exists():
        return with_suffix
    raise TaskFileError(f"Task file not found: {path}")


def load_task(path: Path | str) -> AssemblyTask:
    """Load, normalize and validate a task definition file."""
    resolved = resolve_task_path(Path(path))
    try:
        payload = json.loads(resolved.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TaskFileError(f"Could not parse task file {resolved}: {exc}") from exc
    except OSError as exc:
        raise TaskFileError(f"Could not read task file {resolved}: {exc}") from exc
    return validate_task(normalize_task(payload))


def task_to_dict(task: AssemblyTask) -> dict[str, Any]:
    """Serialize a task into the task-file document shape."""
    payload: dict[str, Any] = {
        "name": task.name,
        "n_columns": task.n_columns,
        "subtasks": [
            {"id": subtask.id, "type": subtask.task_type, "label": subtask.label} for subtask in task.subtasks
        ],
        "edges": [[pred, succ] for pred, succ in sorted(task.edges)],
        "placement": [
            {"id": subtask_id, "row": place.row, "columns": [place.lo, place.hi]}
            for subtask_id, place in sorted(task.placement.items())
        ],
    }
    if task.max_steps is not None:
        payload["max_steps"] = task.max_steps
    return payload


def save_task(task: AssemblyTask, path: Path) -> None:
    """Write a task as indented JSON, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(task_to_dict(task), indent=2) + "\n", encoding="utf-8")


def default_max_steps(task: AssemblyTask) -> int:
    """Step budget: the file's max_steps, else 2.2 steps per sub-task rounded up to a multiple of 10."""
    if task.max_steps is not None:
        return task.max_steps
    # Round before ceil so 2.2 * 50 = 110.00000000000001 does not jump a bucket.
    raw = round(STEPS_PER_SUBTASK * task.n_subtasks / STEP_BUDGET_ROUNDING, 9)
    return max(STEP_BUDGET_ROUNDING, math.ceil(raw) * STEP_BUDGET_ROUNDING)


def compute_frontier(task: AssemblyTask, completed: frozenset[int]) -> tuple[int, ...]:
    """Bottom row of the board: per column, the lowest open sub-task if its predecessors are done."""
    frontier: list[int] = []
    for stack in task.column_stacks:
        entry = EMPTY
        for subtask_id in stack:
            if subtask_id in completed:
                continue
            if task.predecessors[subtask_id] <= completed:
                entry = subtask_id
            break
        frontier.append(entry)
    return tuple(frontier)


def initial_state(task: AssemblyTask) -> ChessboardState:
    """Empty board at step 0 with the starting frontier."""
    return ChessboardState(frontier=compute_frontier(task, frozenset()), completed=frozenset(), step_index=0)


def complete_subtask(state: ChessboardState, task: AssemblyTask, subtask_id: int) -> ChessboardState:
    """Mark a frontier sub-task completed and let successors drop down."""
    if subtask_id == EMPTY or subtask_id not in state.frontier:
        raise SubtaskUnavailableError(
            f"Sub-task {subtask_id} is not available; frontier is {list(state.frontier)}."
        )
    completed = state.completed | {subtask_id}
    # All columns are rescanned so cross-column edges unblock other columns too.
    return ChessboardState(
        frontier=compute_frontier(task, completed),
        completed=completed,
        step_index=state.step_index,
    )


def is_finished(state: ChessboardState, task: AssemblyTask) -> bool:
    """True once every sub-task of the task is completed."""
    return len(state.completed) == task.n_subtasks


def subtask_at(state: ChessboardState, action: int) -> int:
    """Frontier entry selected by an action; EMPTY for the no-op or a blocked column."""
    if not NOOP <= action <= len(state.frontier):
        raise InvalidActionError(f"Action {action} is outside 0..{len(state.frontier)}.")
    if action == NOOP:
        return EMPTY
    return state.frontier[action - 1]


def available_actions(state: ChessboardState, task: AssemblyTask, agent: Agent) -> ActionSet:
    """Full action space plus the columns whose frontier sub-task the agent can work on."""
    actions = tuple(range(task.n_columns + 1))
    allowed = PRODUCTIVE_TYPES[Agent(agent)]
    productive = frozenset(
        column
        for column, subtask_id in enumerate(state.frontier, start=1)
        if subtask_id != EMPTY and task.types[subtask_id] in allowed
    )
    return ActionSet(actions=actions, productive=productive or frozenset({NOOP}))
