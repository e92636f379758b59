"""Pure-strategy equilibria of finite bimatrix games built from per-state Q-values.

Rows index leader actions and columns follower actions. Ties are broken
deterministically: by default the lowest index wins, "highest" picks the last.
The batch_* helpers solve a stack of games of shape (B, m, k) at once and agree
with the scalar functions under the default tie-break.
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

logger = logging.getLogger(__name__)

TieBreak = Literal["lowest", "highest"]


@dataclass(frozen=True)
class BimatrixGame:
    U_L: np.ndarray
    U_F: np.ndarray

    def __post_init__(self) -> None:
        U_L = np.atleast_2d(np.asarray(self.U_L, dtype=float))
        U_F = np.atleast_2d(np.asarray(self.U_F, dtype=float))
        if U_L.ndim != 2 or U_L.shape != U_F.shape:
            raise ValueError(f"Payoff matrices must share a 2-D shape, got {U_L.shape} and {U_F.shape}.")
        if not (np.isfinite(U_L).all() and np.isfinite(U_F).all()):
            raise ValueError("Payoff matrices must be finite.")
        object.__setattr__(self, "U_L", U_L)
        object.__setattr__(self, "U_F", U_F)

    @property
    def shape(self) -> tuple[int, int]:
        return self.U_L.shape  # type: ignore[return-value]


def _argmax(values: np.ndarray, tie_break: TieBreak) -> int:
    if tie_break == "lowest":
        return int(np.argmax(values))
    if tie_break == "highest":
        return int(len(values) - 1 - np.argmax(values[::-1]))
    raise ValueError(f"Unknown tie_break {tie_break!r}; use 'lowest' or 'highest'.")


def follower_best_response(game: BimatrixGame, leader_action: int, tie_break: TieBreak = "lowest") -> int:
    """Column maximizing the follower's payoff in the leader's row."""
    return _argmax(game.U_F[leader_action], tie_break)


def stackelberg_equilibrium(game: BimatrixGame, tie_break: TieBreak = "lowest") -> tuple[int, int]:
    """Leader commits to the row maximizing its payoff under the follower's best response."""
    rows = game.shape[0]
    responses = [follower_best_response(game, row, tie_break) for row in range(rows)]
    leader_values = np.array([game.U_L[row, responses[row]] for row in range(rows)])
    row = _argmax(leader_values, tie_break)
    return row, responses[row]


def verify_stackelberg(game: BimatrixGame, pair: tuple[int, int], tie_break: TieBreak = "lowest") -> bool:
    """Check the pure-strategy Stackelberg inequalities for a candidate pair."""
    row, column = pair
    if game.U_F[row, column] < game.U_F[row].max():
        return False
    value = game.U_L[row, column]
    for other in range(game.shape[0]):
        if game.U_L[other, follower_best_response(game, other, tie_break)] > value:
            return False
    return True


def _nash_mask(U_L: np.ndarray, U_F: np.ndarray) -> np.ndarray:
    # Follower best-responds within a row, leader within a column.
    follower_ok = U_F == U_F.max(axis=-1, keepdims=True)
    leader_ok = U_L == U_L.max(axis=-2, keepdims=True)
    return follower_ok & leader_ok


def pure_nash_equilibria(game: BimatrixGame) -> list[tuple[int, int]]:
    """All mutual best-response cells in lexicographic order."""
    rows, columns = np.nonzero(_nash_mask(game.U_L, game.U_F))
    return [(int(row), int(column)) for row, column in zip(rows, columns)]


def select_nash(game: BimatrixGame) -> tuple[tuple[int, int], bool]:
    """Pure Nash pair with the largest joint payoff; falls back to the Stackelberg pair.

    Returns the pair and whether the fallback was used.
    """
    rows, columns, fallback = batch_nash(game.U_L[None], game.U_F[None])
    if fallback[0]:
        logger.debug("No pure Nash equilibrium; using the Stackelberg pair.")
    return (int(rows[0]), int(columns[0])), bool(fallback[0])


def independent_actions(game: BimatrixGame) -> tuple[int, int]:
    """Each agent maximizes its own payoff, optimistic about the other's action."""
    rows, columns = batch_independent(game.U_L[None], game.U_F[None])
    return int(rows[0]), int(columns[0])


def batch_stackelberg(U_L: np.ndarray, U_F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stackelberg pairs of a stack of games, lowest-index tie-break."""
    responses = np.argmax(U_F, axis=-1)  # (B, m)
    leader_values = np.take_along_axis(U_L, responses[..., None], axis=-1)[..., 0]
    rows = np.argmax(leader_values, axis=-1)
    columns = np.take_along_axis(responses, rows[:, None], axis=-1)[:, 0]
    return rows, columns


def batch_nash(U_L: np.ndarray, U_F: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Selected pure Nash pairs of a stack of games plus a mask of Stackelberg fallbacks."""
    batch, rows, columns = U_L.shape
    mask = _nash_mask(U_L, U_F).reshape(batch, rows * columns)
    welfare = np.where(mask, (U_L + U_F).reshape(batch, rows * columns), -np.inf)
    # argmax keeps the first maximal cell, i.e. lexicographic order among welfare ties.
    flat = np.argmax(welfare, axis=-1)
    fallback = ~mask.any(axis=-1)
    nash_rows, nash_columns = np.divmod(flat, columns)
    if fallback.any():
        se_rows, se_columns = batch_stackelberg(U_L[fallback], U_F[fallback])
        nash_rows[fallback] = se_rows
        nash_columns[fallback] = se_columns
    return nash_rows, nash_columns, fallback


def batch_independent(U_L: np.ndarray, U_F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per game, each agent takes the action holding its own best entry, ignoring the other."""
    rows = np.argmax(U_L.max(axis=-1), axis=-1)
    columns = np.argmax(U_F.max(axis=-2), axis=-1)
    return rows, columns
