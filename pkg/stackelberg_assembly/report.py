"""Plain-text rendering of boards, evaluation summaries and result tables."""

import shutil
from collections.abc import Mapping, Sequence

from .config import MAX_TABLE_WIDTH
from .task_model import EMPTY, AssemblyTask, ChessboardState


def get_terminal_width() -> int:
    """Get terminal width with a readability cap and safe fallback."""
    return min(MAX_TABLE_WIDTH, shutil.get_terminal_size(fallback=(MAX_TABLE_WIDTH, 24)).columns)


def format_mean_std(mean: float, std: float) -> str:
    """Render as mean(std): 18.9(3.151) for step counts, 0.792(0.198) for rewards."""
    head = f"{mean:.1f}" if abs(mean) >= 10 else f"{mean:.3f}"
    return f"{head}({std:.3f})"


def render_board(task: AssemblyTask, state: ChessboardState | None = None) -> str:
    """Draw the chessboard top row first; completed sub-tasks show as dots, the frontier is starred."""
    completed = state.completed if state is not None else frozenset()
    frontier = set(state.frontier) - {EMPTY} if state is not None else set()
    cell_width = max(4, len(str(task.n_subtasks)) + 3)
    rows = max(place.row for place in task.placement.values()) + 1
    grid = [[" " * cell_width for _ in range(task.n_columns)] for _ in range(rows)]
    for subtask_id, place in task.placement.items():
        if subtask_id in completed:
            text = "."
        else:
            text = f"{subtask_id}{'*' if subtask_id in frontier else ''}"
        for column in place.columns:
            grid[place.row][column - 1] = text.center(cell_width)

    divider = "-" * (cell_width * task.n_columns + task.n_columns + 1)
    lines = [divider]
    for row in reversed(range(rows)):
        lines.append("|" + "|".join(grid[row]) + "|")
    lines.append(divider)
    lines.append(" " + " ".join(f"c{column}".center(cell_width) for column in range(1, task.n_columns + 1)))
    return "\n".join(lines)


def build_table_lines(title: str, header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    """Left-aligned columns framed by dividers, the same frame the summaries use."""
    widths = [len(cell) for cell in header]
    for row in rows:
        widths = [max(width, len(cell)) for width, cell in zip(widths, row)]
    width = min(get_terminal_width(), max(len(title), sum(widths) + 3 * (len(widths) - 1)))
    divider = "=" * width
    lines = [divider, title, divider, " | ".join(cell.ljust(w) for cell, w in zip(header, widths))]
    lines.append("-" * width)
    for row in rows:
        lines.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    lines.append(divider)
    return lines


RESULT_METRICS = (
    ("steps", "Steps"),
    ("avg_reward_L", "Leader reward"),
    ("avg_reward_F", "Follower reward"),
    ("det_steps", "Deterministic steps"),
)


def render_results_table(aggregates: Mapping[tuple[str, str, str], tuple[float, float]]) -> str:
    """One row per (task, algorithm), one column per metric, cells as mean(std) across seeds."""
    cells = sorted({(task, algorithm) for task, algorithm, _ in aggregates})
    header = ["Task", "Method", *(label for _, label in RESULT_METRICS)]
    rows: list[list[str]] = []
    for task, algorithm in cells:
        row = [task, algorithm.upper()]
        for metric, _ in RESULT_METRICS:
            value = aggregates.get((task, algorithm, metric))
            row.append("-" if value is None else format_mean_std(*value))
        rows.append(row)
    return "\n".join(build_table_lines("Validation results (mean(std) over seeds)", header, rows))


def render_eval_summary(title: str, summary: Mapping[str, float]) -> str:
    """Two-column table of the headline evaluation numbers."""
    rows = [
        ["completion rate", f"{summary['completion_rate']:.2f}"],
        ["completion steps", format_mean_std(summary["mean_steps"], summary["std_steps"])],
        ["leader avg reward", format_mean_std(summary["mean_avg_reward_L"], summary["std_avg_reward_L"])],
        ["follower avg reward", format_mean_std(summary["mean_avg_reward_F"], summary["std_avg_reward_F"])],
    ]
    return "\n".join(build_table_lines(title, ["Metric", "Value"], rows))
