"""Environment-variable helpers: .env loading, output root and worker defaults."""

import logging
import os
from pathlib import Path

from .config import DEFAULT_OUTPUT_ROOT, DOTENV_PATH, OUTPUT_ROOT_ENV_VAR, WORKERS_ENV_VAR
from .errors import ConfigError

logger = logging.getLogger(__name__)


def _parse_env_line(raw_line: str) -> tuple[str, str] | None:
    line = raw_line.strip()
    if not line or line.startswith("#") or "=" not in line:
        return None
    line = line.removeprefix("export ").lstrip()
    # Split once so values containing '=' are preserved.
    key, value = line.split("=", 1)
    key = key.strip()
    if not key:
        return None
    return key, value.strip().strip("'\"")


def load_env_file(path: Path = DOTENV_PATH) -> list[str]:
    """Apply KEY=VALUE lines from a .env file; variables already exported keep their value.

    Returns the keys that were set from the file.
    """
    if not path.exists():
        return []

    applied: list[str] = []
    with path.open("r", encoding="utf-8") as env_file:
        for raw_line in env_file:
            parsed = _parse_env_line(raw_line)
            if parsed is None:
                continue
            key, value = parsed
            if key in os.environ:
                continue
            os.environ[key] = value
            applied.append(key)
    if applied:
        logger.debug("Loaded %s from %s", ", ".join(applied), path)
    return applied


def get_output_root() -> Path:
    """Return the directory under which run directories are created."""
    value = os.getenv(OUTPUT_ROOT_ENV_VAR)
    if not value:
        return DEFAULT_OUTPUT_ROOT
    return Path(value)


def get_env_int(name: str, default: int) -> int:
    """Integer environment variable, or the default when unset or empty."""
    value = os.getenv(name)
    if not value:
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {value!r}.") from None


def get_default_workers() -> int:
    """Suite worker processes when neither --workers nor the config sets them."""
    return get_env_int(WORKERS_ENV_VAR, 1)
