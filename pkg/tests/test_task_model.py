import json
from pathlib import Path

import numpy as np
import pytest

from stackelberg_assembly.errors import SubtaskUnavailableError, TaskFileError, TaskValidationError
from stackelberg_assembly.task_model import (
    EMPTY,
    NOOP,
    Agent,
    ChessboardState,
    available_actions,
    complete_subtask,
    default_max_steps,
    initial_state,
    is_finished,
    load_task,
    normalize_task,
    save_task,
    task_to_dict,
    validate_task,
)

from conftest import TASK1_PATH, task_payload


def _complete_all(state, task, ids):
    for subtask_id in ids:
        state = complete_subtask(state, task, subtask_id)
    return state


def test_task1_matches_the_bracket_decomposition(task1) -> None:
    assert task1.n_subtasks == 18
    assert task1.n_columns == 4
    assert len(task1.edges) == 16
    expected = {**dict.fromkeys(range(1, 5), 3), **dict.fromkeys(range(5, 9), 2)}
    expected |= {**dict.fromkeys(range(9, 13), 3), **dict.fromkeys(range(13, 17), 1), 17: 4, 18: 4}
    assert task1.types == expected
    assert task1.placement[17].columns == range(1, 3)
    assert task1.placement[18].columns == range(3, 5)
    assert default_max_steps(task1) == 40


def test_single_subtask_task_is_valid(single_task) -> None:
    assert single_task.n_subtasks == 1
    assert initial_state(single_task).frontier == (1,)


def test_cycle_is_rejected_and_named() -> None:
    payload = task_payload([3, 3], [(0, 1, 1), (0, 2, 2)], edges=[(1, 2), (2, 1)])
    with pytest.raises(TaskValidationError, match="cycle") as excinfo:
        validate_task(normalize_task(payload))
    assert set(excinfo.value.ids) == {1, 2}
    assert "1 -> 2" in str(excinfo.value) or "2 -> 1" in str(excinfo.value)


@pytest.mark.parametrize(
    ("payload", "message"),
    [
        (task_payload([3, 5], [(0, 1, 1), (0, 2, 2)]), "type outside"),
        (task_payload([3, 3], [(0, 1, 1), (0, 1, 1)], edges=[(1, 2)]), "share column"),
        (task_payload([3, 3], [(0, 1, 1), (1, 1, 1)]), "does not precede"),
        (task_payload([3, 3], [(0, 1, 1), (1, 1, 1)], edges=[(2, 1)]), "not placed below"),
        (task_payload([3], [(0, 1, 3)], n_columns=2), "not a range"),
        (task_payload([3], [(0, 1, 1)], edges=[(1, 4)]), "unknown sub-task"),
    ],
)
def test_invariant_violations_are_reported(payload, message) -> None:
    with pytest.raises(TaskValidationError, match=message):
        validate_task(normalize_task(payload))


def test_ids_must_be_contiguous() -> None:
    payload = task_payload([3, 3], [(0, 1, 1), (0, 2, 2)])
    payload["subtasks"][1]["id"] = 3
    payload["placement"][1]["id"] = 3
    with pytest.raises(TaskValidationError) as excinfo:
        validate_task(normalize_task(payload))
    assert set(excinfo.value.ids) == {2, 3}


def test_malformed_documents_raise_task_file_errors(tmp_path: Path) -> None:
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(TaskFileError, match="parse"):
        load_task(broken)
    with pytest.raises(TaskFileError, match="missing fields"):
        normalize_task({"name": "x"})
    with pytest.raises(TaskFileError):
        normalize_task({**task_payload([3], [(0, 1, 1)]), "n_columns": "four"})


def test_missing_file_is_reported(tmp_path: Path) -> None:
    with pytest.raises(TaskFileError, match="not found"):
        load_task(tmp_path / "nowhere")


def test_load_accepts_path_without_suffix() -> None:
    task = load_task(TASK1_PATH.with_suffix(""))
    assert task.name == "task1"


def test_save_and_load_preserve_the_document(task1, tmp_path: Path) -> None:
    path = tmp_path / "copy.json"
    save_task(task1, path)
    assert task_to_dict(load_task(path)) == task_to_dict(task1)
    assert json.loads(path.read_text(encoding="utf-8"))["max_steps"] == 40


@pytest.mark.parametrize(("n_subtasks", "budget"), [(1, 10), (18, 40), (20, 50), (26, 60), (50, 110)])
def test_default_step_budget_rounds_up(make_task, n_subtasks, budget) -> None:
    task = make_task([3] * n_subtasks, [(row, 1, 1) for row in range(n_subtasks)], edges=[(i, i + 1) for i in range(1, n_subtasks)])
    assert default_max_steps(task) == budget


def test_initial_frontier(task1, chain_task) -> None:
    assert initial_state(task1).frontier == (1, 2, 3, 4)
    assert initial_state(chain_task).frontier == (1, EMPTY)


def test_completions_drop_successors_down(task1) -> None:
    state = _complete_all(initial_state(task1), task1, [1, 2])
    assert state.frontier == (9, 10, 3, 4)
    state = _complete_all(state, task1, [9, 10])
    assert state.frontier == (17, 17, 3, 4)
    assert state.step_index == 0


def test_cross_column_edge_unblocks_other_column(chain_task) -> None:
    state = complete_subtask(initial_state(chain_task), chain_task, 1)
    assert state.frontier == (EMPTY, 2)


def test_completing_the_last_subtask_empties_the_board(single_task) -> None:
    state = complete_subtask(initial_state(single_task), single_task, 1)
    assert state.frontier == (EMPTY,)
    assert state.completed == frozenset({1})
    assert is_finished(state, single_task)


def test_completing_an_unavailable_subtask_fails(task1) -> None:
    with pytest.raises(SubtaskUnavailableError):
        complete_subtask(initial_state(task1), task1, 9)
    with pytest.raises(SubtaskUnavailableError):
        complete_subtask(initial_state(task1), task1, EMPTY)


def test_available_actions(task1) -> None:
    start = initial_state(task1)
    leader = available_actions(start, task1, Agent.LEADER)
    assert leader.actions == (0, 1, 2, 3, 4)
    assert leader.productive == frozenset({1, 2, 3, 4})

    follower_only = ChessboardState(frontier=(5, 6, 7, 8))
    assert available_actions(follower_only, task1, Agent.LEADER).productive == frozenset({NOOP})
    assert available_actions(follower_only, task1, Agent.FOLLOWER).productive == frozenset({1, 2, 3, 4})
    assert available_actions(follower_only, task1, "L").actions == (0, 1, 2, 3, 4)

    empty = ChessboardState(frontier=(EMPTY,) * 4)
    assert available_actions(empty, task1, Agent.FOLLOWER).productive == frozenset({NOOP})


def _assert_frontier_invariant(state: ChessboardState, task) -> None:
    for column, (entry, stack) in enumerate(zip(state.frontier, task.column_stacks), start=1):
        open_ids = [subtask_id for subtask_id in stack if subtask_id not in state.completed]
        if entry == EMPTY:
            assert not open_ids or not task.predecessors[open_ids[0]] <= state.completed
            continue
        assert entry == open_ids[0]
        assert task.predecessors[entry] <= state.completed
        assert column in task.placement[entry].columns
        for other in task.placement[entry].columns:
            assert state.frontier[other - 1] == entry


def test_random_trajectories_keep_the_frontier_exact(task1) -> None:
    rng = np.random.default_rng(7)
    for _ in range(200):
        state = initial_state(task1)
        _assert_frontier_invariant(state, task1)
        while not is_finished(state, task1):
            choices = sorted(set(state.frontier) - {EMPTY})
            chosen = int(rng.choice(choices))
            state = complete_subtask(state, task1, chosen)
            _assert_frontier_invariant(state, task1)
            # Completing one sub-task never hides another that was already available.
            assert set(choices) - {chosen} <= set(state.frontier)
        assert state.frontier == (EMPTY,) * 4
