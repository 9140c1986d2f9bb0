"""Exception hierarchy shared by every module."""

from __future__ import annotations


class QueueNetError(Exception):
    """Base class for all library errors."""


class ConfigError(QueueNetError):
    """A scenario or topology is malformed.

    ``line`` is the 1-based line of the scenario file that caused the
    problem when the error originates from parsed text.
    """

    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DanglingLink(ConfigError):
    pass


class RoutingMassExceeded(ConfigError):
    pass


class EmptyPhase(ConfigError):
    pass


class NegativeWait(QueueNetError):
    pass


class InvalidSplit(QueueNetError):
    pass


class HorizonTooShort(QueueNetError):
    pass


class NonTermination(QueueNetError):
    """The max-green repair loop exceeded its iteration cap (a logic fault)."""


class NotSteady(QueueNetError):
    pass
