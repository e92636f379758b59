"""Exception hierarchy shared by every module."""


class AssemblyError(Exception):
    """Base class for all errors raised by this package."""


class TaskFileError(AssemblyError):
    """A task file is missing or cannot be parsed."""


class TaskValidationError(AssemblyError):
    """A task violates one of the chessboard invariants."""

    def __init__(self, message: str, ids: tuple[int, ...] = ()) -> None:
        super().__init__(message)
        self.ids = ids


class SubtaskUnavailableError(AssemblyError):
    """A sub-task was completed while not on the frontier."""


class TerminalStateError(AssemblyError):
    """The environment was stepped from a terminal state."""


class InvalidActionError(AssemblyError, ValueError):
    """An action is neither the no-op nor a column of the board."""


class ConfigError(AssemblyError, ValueError):
    """A configuration value is out of range or unknown."""


class ShapeMismatchError(AssemblyError, ValueError):
    """Array shapes disagree with a network's layer sizes."""


class SearchBudgetExceeded(AssemblyError):
    """The optimal-schedule search visited more states than allowed."""


class GenerationError(AssemblyError):
    """No valid task could be generated for a spec."""
