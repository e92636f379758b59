"""JSON Lines persistence for episode logs, metric streams and result records."""

import json
from collections.abc import Iterable
from pathlib import Path
from typing import Any


def append_jsonl(path: Path, rows: Iterable[dict[str, Any]]) -> int:
    """Append rows in JSONL format and return how many were written."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("a", encoding="utf-8") as file:
        for row in rows:
            # Sorted keys keep identical runs byte-identical on disk.
            file.write(json.dumps(row, sort_keys=True) + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> list[dict[str, Any]]:
    """Read every well-formed JSON object row from a JSONL file."""
    if not path.exists():
        return []

    rows: list[dict[str, Any]] = []
    with path.open("r", encoding="utf-8") as file:
        for raw_line in file:
            line = raw_line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError:
                # Ignore malformed rows, e.g. a line cut off by an interrupted run.
                continue
            if isinstance(payload, dict):
                rows.append(payload)
    return rows


def write_json(path: Path, payload: Any) -> None:
    """Write one JSON document with stable formatting."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def episode_log_rows(episode: int, record: Any) -> list[dict[str, Any]]:
    """Flatten an episode record into one log row per transition."""
    rows: list[dict[str, Any]] = []
    for step in record.steps:
        rows.append(
            {
                "episode": episode,
                "step": step.step,
                "state": list(step.state.frontier),
                "completed": sorted(step.state.completed),
                "action_L": step.action.a_L,
                "action_F": step.action.a_F,
                "reward_L": step.r_L,
                "reward_F": step.r_F,
                "events": list(step.events),
                "next_state": list(step.next_state.frontier),
                "done": step.done,
            }
        )
    return rows
