"""Exception hierarchy shared by all minigrid layers."""

from __future__ import annotations


class GridError(Exception):
    """Base class for every error raised by minigrid."""


class ModelError(GridError):
    pass


class DuplicateName(ModelError):
    pass


class UnknownAction(ModelError):
    pass


class SelfEdge(ModelError):
    pass


class CycleDetected(ModelError):
    pass


class MalformedEncoding(GridError):
    """Raised when bytes cannot be decoded into a document.

    ``position`` is a byte/character offset when one is known, ``path`` a
    JSON-pointer-like location inside the document for schema errors.
    """

    def __init__(self, message: str, position: int | None = None, path: str | None = None):
        self.position = position
        self.path = path
        where = []
        if position is not None:
            where.append(f"offset {position}")
        if path is not None:
            where.append(f"at {path}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class IllegalTransition(GridError):
    pass


class ConditionUnevaluable(GridError):
    pass


class NotAuthorized(GridError):
    pass


class UnsupportedResource(GridError):
    def __init__(self, dimension: str, detail: str = ""):
        self.dimension = dimension
        super().__init__(f"{dimension}: {detail}" if detail else dimension)


class MissingScript(GridError):
    pass


class UnknownScriptType(GridError):
    pass


class UnknownVsite(GridError):
    pass


class UnknownJob(GridError):
    pass


class FrameError(GridError):
    pass


class Oversize(FrameError):
    pass


class Truncated(FrameError):
    pass


class MalformedPayload(FrameError):
    pass


class PlanError(GridError):
    """Plan document problem, optionally carrying a line/column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column or 0}: {message}"
        super().__init__(message)


class MalformedPlan(PlanError):
    pass


class UndeclaredParameter(PlanError):
    pass


class FileTooLarge(GridError):
    pass


class MissingLocalFile(GridError):
    pass


class OutcomeUnavailable(GridError):
    pass


class ServerUnavailable(GridError):
    """A compute server could not be reached (connection or framing failure)."""


class AllServersUnhealthy(GridError):
    pass
