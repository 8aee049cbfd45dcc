"""Action lifecycle states and the legal transitions between them."""

from __future__ import annotations

from enum import Enum


class CompletionCode(str, Enum):
    SUCCESSFUL = "SUCCESSFUL"
    NOT_SUCCESSFUL = "NOT_SUCCESSFUL"
    NEVER_RUN = "NEVER_RUN"
    NEVER_TAKEN = "NEVER_TAKEN"


class ActionStatus(str, Enum):
    """PENDING, READY, EXECUTING, or one of the four DONE sub-states."""

    PENDING = "PENDING"
    READY = "READY"
    EXECUTING = "EXECUTING"
    SUCCESSFUL = "SUCCESSFUL"
    NOT_SUCCESSFUL = "NOT_SUCCESSFUL"
    NEVER_RUN = "NEVER_RUN"
    NEVER_TAKEN = "NEVER_TAKEN"

    @property
    def done(self) -> bool:
        return self.value in CompletionCode.__members__

    @property
    def code(self) -> CompletionCode | None:
        return CompletionCode(self.value) if self.done else None

    @classmethod
    def done_with(cls, code: CompletionCode) -> ActionStatus:
        return cls(CompletionCode(code).value)

    def __str__(self) -> str:
        return f"DONE({self.value})" if self.done else self.value


_S = ActionStatus
LEGAL_TRANSITIONS: frozenset[tuple[ActionStatus, ActionStatus]] = frozenset(
    {
        (_S.PENDING, _S.READY),
        (_S.READY, _S.EXECUTING),
        (_S.EXECUTING, _S.SUCCESSFUL),
        (_S.EXECUTING, _S.NOT_SUCCESSFUL),
        (_S.PENDING, _S.NEVER_RUN),
        (_S.PENDING, _S.NEVER_TAKEN),
        (_S.READY, _S.NEVER_RUN),  # kill only
    }
)


def is_legal(old: ActionStatus, new: ActionStatus) -> bool:
    return (old, new) in LEGAL_TRANSITIONS


def can_reach(old: ActionStatus, new: ActionStatus) -> bool:
    """Whether ``new`` is reachable from ``old`` by zero or more legal transitions."""
    frontier = {old}
    seen = {old}
    while frontier:
        nxt = {b for a, b in LEGAL_TRANSITIONS if a in frontier} - seen
        seen |= nxt
        frontier = nxt
    return new in seen
