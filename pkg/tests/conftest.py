import json
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from stackelberg_assembly.task_model import AssemblyTask, load_task, normalize_task, validate_task

REPO_ROOT = Path(__file__).resolve().parents[1]
TASK1_PATH = REPO_ROOT / "tasks" / "task1.json"


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="Run the long training reproductions.")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def task_payload(
    types: list[int],
    placement: list[tuple[int, int, int]],
    edges: list[tuple[int, int]] = (),
    n_columns: int | None = None,
    name: str = "tiny",
    max_steps: int | None = None,
) -> dict[str, Any]:
    """Task document from per-id types and (row, lo, hi) placements."""
    payload: dict[str, Any] = {
        "name": name,
        "n_columns": n_columns or max(hi for _, _, hi in placement),
        "subtasks": [{"id": index, "type": kind, "label": f"T{index}"} for index, kind in enumerate(types, start=1)],
        "edges": [list(edge) for edge in edges],
        "placement": [
            {"id": index, "row": row, "columns": [lo, hi]} for index, (row, lo, hi) in enumerate(placement, start=1)
        ],
    }
    if max_steps is not None:
        payload["max_steps"] = max_steps
    return payload


@pytest.fixture
def make_task() -> Callable[..., AssemblyTask]:
    def build(*args: Any, **kwargs: Any) -> AssemblyTask:
        return validate_task(normalize_task(task_payload(*args, **kwargs)))

    return build


@pytest.fixture
def write_task(tmp_path: Path) -> Callable[..., Path]:
    def write(filename: str, *args: Any, **kwargs: Any) -> Path:
        path = tmp_path / filename
        path.write_text(json.dumps(task_payload(*args, **kwargs)), encoding="utf-8")
        return path

    return write


@pytest.fixture(scope="session")
def task1() -> AssemblyTask:
    return load_task(TASK1_PATH)


@pytest.fixture
def single_task(make_task: Callable[..., AssemblyTask]) -> AssemblyTask:
    """One type-3 sub-task in one column."""
    return make_task([3], [(0, 1, 1)], name="single")


@pytest.fixture
def pair_task(make_task: Callable[..., AssemblyTask]) -> AssemblyTask:
    """Two independent type-3 sub-tasks side by side."""
    return make_task([3, 3], [(0, 1, 1), (0, 2, 2)], name="pair")


@pytest.fixture
def chain_task(make_task: Callable[..., AssemblyTask]) -> AssemblyTask:
    """Column 2 holds only a successor of column 1."""
    return make_task([3, 3], [(0, 1, 1), (0, 2, 2)], edges=[(1, 2)], name="chain")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
