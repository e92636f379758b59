import pytest

from stackelberg_assembly.report import (
    build_table_lines,
    format_mean_std,
    render_board,
    render_eval_summary,
    render_results_table,
)
from stackelberg_assembly.task_model import complete_subtask, initial_state


@pytest.mark.parametrize(
    ("mean", "std", "expected"),
    [(18.9, 3.151, "18.9(3.151)"), (0.792, 0.198, "0.792(0.198)"), (-12.5, 0.0, "-12.5(0.000)"), (0.0, 0.0, "0.000(0.000)")],
)
def test_format_mean_std(mean, std, expected) -> None:
    assert format_mean_std(mean, std) == expected


def test_board_marks_frontier_and_completed_cells(chain_task) -> None:
    start = render_board(chain_task, initial_state(chain_task))
    assert "1*" in start
    assert "2*" not in start

    moved = render_board(chain_task, complete_subtask(initial_state(chain_task), chain_task, 1))
    assert "1*" not in moved
    assert " . " in moved
    assert "2*" in moved
    assert moved.splitlines()[-1].split() == ["c1", "c2"]


def test_board_without_state_has_no_marks(task1) -> None:
    board = render_board(task1)
    assert "*" not in board
    assert "18" in board


def test_table_columns_line_up() -> None:
    lines = build_table_lines("Title", ["A", "Long header"], [["wide cell", "x"]])
    assert lines[1] == "Title"
    assert lines[3].index("|") == lines[5].index("|")


def test_results_table_rows_per_task_and_method() -> None:
    aggregates = {
        ("task1", "sg", "steps"): (18.9, 3.151),
        ("task1", "sg", "avg_reward_L"): (0.792, 0.198),
        ("task1", "ind", "steps"): (31.0, 2.0),
    }
    table = render_results_table(aggregates)
    assert "Validation results" in table
    assert "18.9(3.151)" in table
    assert "0.792(0.198)" in table
    ind_row = next(line for line in table.splitlines() if "IND" in line)
    assert "31.0(2.000)" in ind_row
    assert "-" in ind_row


def test_eval_summary_lists_each_metric() -> None:
    summary = {
        "completion_rate": 1.0,
        "mean_steps": 12.0,
        "std_steps": 0.5,
        "mean_avg_reward_L": 1.2,
        "std_avg_reward_L": 0.1,
        "mean_avg_reward_F": 1.1,
        "std_avg_reward_F": 0.1,
    }
    text = render_eval_summary("task1 / SG", summary)
    assert "completion rate" in text and "1.00" in text
    assert "12.0(0.500)" in text
    assert "1.100(0.100)" in text
