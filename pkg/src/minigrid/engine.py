"""DAG execution with completion-code propagation.

Successors start only once every predecessor finished SUCCESSFUL.  A
NOT_SUCCESSFUL action turns its still-pending transitive successors into
NEVER_RUN; the untaken branch of a conditional becomes NEVER_TAKEN.

:class:`WorkflowEngine` runs leaf actions through an :class:`ActionExecutor`
on a bounded thread pool while a single coordinator (the thread calling
:meth:`WorkflowEngine.run`) owns every status transition.  Composite actions
(conditionals, repeat groups, nested jobs) never reach the executor; the
engine opens a child frame for their selected group and completes them when
that frame is done.
"""

from __future__ import annotations

import copy
import heapq
import queue
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Iterator, NamedTuple, Protocol

from .ajo import (
    AbstractAction,
    AbstractJob,
    ActionGroup,
    ActionId,
    ConditionalAction,
    CopyPortfolioToOutcome,
    ExecuteScriptTask,
    ExitStatusEquals,
    FileExists,
    IterationLessThan,
    RepeatGroup,
    subgroups,
)
from .errors import ConditionUnevaluable, IllegalTransition
from .outcome import OutcomeRecord
from .states import ActionStatus, CompletionCode, is_legal

S = ActionStatus
C = CompletionCode


# -- contracts ----------------------------------------------------------------


@dataclass
class ActionContext:
    """What an executor learns about the action it is asked to perform."""

    action_id: ActionId
    qualname: str
    cancelled: threading.Event = field(default_factory=threading.Event)


class ActionExecutor(Protocol):
    def execute(self, action: AbstractAction, context: ActionContext) -> OutcomeRecord:
        """Perform one leaf action; the record's code must be SUCCESSFUL or NOT_SUCCESSFUL."""


class ConditionContext(Protocol):
    def exit_status(self, action_id: ActionId) -> int | None: ...

    def file_exists(self, path: str) -> bool: ...


class TraceEntry(NamedTuple):
    name: str
    old: ActionStatus
    new: ActionStatus
    timestamp: float


class ExecutionTrace:
    def __init__(self) -> None:
        self.entries: list[TraceEntry] = []

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: TraceEntry) -> None:
        self.entries.append(entry)

    def to_text(self) -> str:
        lines = []
        for e in self.entries:
            stamp = datetime.fromtimestamp(e.timestamp, tz=timezone.utc).isoformat(timespec="microseconds")
            lines.append(f"{stamp} {e.name} {e.old}->{e.new}")
        return "".join(line + "\n" for line in lines)


@dataclass
class RunResult:
    code: CompletionCode
    statuses: dict[str, ActionStatus]
    records: dict[str, OutcomeRecord]
    trace: ExecutionTrace


# -- pure single-group operations ------------------------------------------------


def ready_set(group: ActionGroup, statuses: dict[ActionId, ActionStatus]) -> set[ActionId]:
    """PENDING actions whose predecessors are all DONE(SUCCESSFUL)."""
    preds: dict[ActionId, list[ActionId]] = {aid: [] for aid in group.actions}
    for p, s in group.edges:
        preds[s].append(p)
    return {
        aid for aid, st in statuses.items() if st is S.PENDING and all(statuses[p] is S.SUCCESSFUL for p in preds[aid])
    }


def apply_completion(
    group: ActionGroup,
    statuses: dict[ActionId, ActionStatus],
    action: ActionId,
    code: CompletionCode,
) -> dict[ActionId, ActionStatus]:
    """Finish ``action`` with ``code``; on failure poison pending successors."""
    if statuses.get(action) is not S.EXECUTING:
        raise IllegalTransition(f"{action!r} is {statuses.get(action)}, not EXECUTING")
    if code not in (C.SUCCESSFUL, C.NOT_SUCCESSFUL):
        raise IllegalTransition(f"executors cannot report {code}")
    out = dict(statuses)
    out[action] = S.done_with(code)
    if code is C.NOT_SUCCESSFUL:
        for d in group.descendants(action) - {action}:
            if out[d] is S.PENDING:
                out[d] = S.NEVER_RUN
    return out


def evaluate_condition(cond: Any, ctx: ConditionContext, iteration: int = 0) -> bool:
    if isinstance(cond, IterationLessThan):
        return iteration < cond.bound
    if isinstance(cond, FileExists):
        return bool(ctx.file_exists(cond.uspace_path))
    if isinstance(cond, ExitStatusEquals):
        status = ctx.exit_status(cond.action)
        if status is None:
            raise ConditionUnevaluable(f"no exit status recorded for action {cond.action!r}")
        return status == cond.code
    raise ConditionUnevaluable(f"unknown condition {cond!r}")


def resolve_conditional(action: ConditionalAction, ctx: ConditionContext) -> tuple[str, ActionGroup, ActionGroup]:
    """Return ``(taken_label, taken_group, untaken_group)``."""
    if evaluate_condition(action.condition, ctx):
        return "then", action.then_group, action.else_group
    return "else", action.else_group, action.then_group


def instantiate_body(body: ActionGroup, iteration: int) -> ActionGroup:
    """Fresh copy of a loop body; ids and top-level names get an ``[i]`` suffix."""
    suffix = f"[{iteration}]"
    return _clone_group(body, suffix, top=True)


def _clone_group(group: ActionGroup, suffix: str, top: bool) -> ActionGroup:
    idmap = {aid: aid + suffix for aid in _all_ids(group)}
    return _rebuild(group, idmap, suffix if top else "")


def _all_ids(group: ActionGroup) -> Iterator[ActionId]:
    for aid, action in group.actions.items():
        yield aid
        for _, child in subgroups(action):
            yield from _all_ids(child)


def _rebuild(group: ActionGroup, idmap: dict[str, str], name_suffix: str) -> ActionGroup:
    out = ActionGroup()
    for aid, action in group.actions.items():
        new = copy.copy(action)
        new.id = idmap[aid]
        new.name = action.name + name_suffix
        if isinstance(new, ExecuteScriptTask):
            new.script_portfolio = idmap.get(action.script_portfolio, action.script_portfolio)
        elif isinstance(new, CopyPortfolioToOutcome):
            new.target = idmap.get(action.target, action.target)
        elif isinstance(new, ConditionalAction):
            new.condition = _remap_condition(action.condition, idmap)
            new.then_group = _rebuild(action.then_group, idmap, "")
            new.else_group = _rebuild(action.else_group, idmap, "")
        elif isinstance(new, RepeatGroup):
            new.condition = _remap_condition(action.condition, idmap)
            new.body = _rebuild(action.body, idmap, "")
        elif isinstance(new, AbstractJob):
            new.group = _rebuild(action.group, idmap, "")
        out.actions[new.id] = new
    out.edges = {(idmap[p], idmap[s]) for p, s in group.edges}
    return out


def _remap_condition(cond: Any, idmap: dict[str, str]) -> Any:
    if isinstance(cond, ExitStatusEquals) and cond.action in idmap:
        return ExitStatusEquals(idmap[cond.action], cond.code)
    return cond


def step_repeat(rg: RepeatGroup, iteration: int, ctx: ConditionContext) -> ActionGroup | None:
    """Body instance for ``iteration`` or ``None`` when the loop is finished.

    An exit-status condition that names a body action looks at the previous
    iteration's copy and holds vacuously before the first iteration.
    """
    if iteration >= rg.max_iterations:
        return None
    cond = rg.condition
    if isinstance(cond, ExitStatusEquals) and cond.action in rg.body.actions:
        if iteration > 0:
            prev = ExitStatusEquals(f"{cond.action}[{iteration - 1}]", cond.code)
            if not evaluate_condition(prev, ctx):
                return None
    elif not evaluate_condition(cond, ctx, iteration):
        return None
    return instantiate_body(rg.body, iteration)


# -- the engine -------------------------------------------------------------------


class _Frame:
    def __init__(self, group: ActionGroup, prefix: str, owner: _Node | None, live: bool = True):
        self.group = group
        self.prefix = prefix
        self.owner = owner
        self.live = live
        self.nodes: dict[ActionId, _Node] = {}
        self.preds: dict[ActionId, list[ActionId]] = {aid: [] for aid in group.actions}
        self.succs: dict[ActionId, list[ActionId]] = {aid: [] for aid in group.actions}
        for p, s in group.edges:
            self.preds[s].append(p)
            self.succs[p].append(s)
        self.depths = group.depths()
        self.finished = False
        self.code: CompletionCode | None = None


class _Node:
    def __init__(self, frame: _Frame, aid: ActionId, action: AbstractAction):
        self.frame = frame
        self.aid = aid
        self.action = action
        self.qualname = frame.prefix + action.name
        self.status = S.PENDING
        self.depth = frame.depths[aid]
        self.iteration = 0
        self.kill_signalled = False
        self.dispatched_at: float | None = None
        self.completed_at: float | None = None
        self.log: list[str] = []

    @property
    def composite(self) -> bool:
        return isinstance(self.action, (ConditionalAction, RepeatGroup, AbstractJob))


class WorkflowEngine:
    """Runs one action group to completion.  One engine instance per job run."""

    def __init__(
        self,
        executor: ActionExecutor,
        parallelism: int = 1,
        clock: Callable[[], float] = time.time,
    ):
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.executor = executor
        self.parallelism = parallelism
        self.clock = clock
        self.trace = ExecutionTrace()
        self._lock = threading.Lock()
        self._events: queue.Queue = queue.Queue()
        self._nodes: dict[str, _Node] = {}
        self._records: dict[str, OutcomeRecord] = {}
        self._exit_codes: dict[ActionId, int] = {}
        self._ready: list[tuple[int, str]] = []
        self._inflight = 0
        self._cancel = threading.Event()
        self._kill_requested = False
        self._killed = False
        self._started = False
        self._max_inflight = 0

    # condition context
    def exit_status(self, action_id: ActionId) -> int | None:
        return self._exit_codes.get(action_id)

    def file_exists(self, path: str) -> bool:
        probe = getattr(self.executor, "file_exists", None)
        return bool(probe(path)) if probe else False

    @property
    def max_observed_parallelism(self) -> int:
        return self._max_inflight

    def snapshot(self) -> dict[str, ActionStatus]:
        with self._lock:
            return {qn: n.status for qn, n in self._nodes.items()}

    def kill(self) -> None:
        """Ask the engine to stop: running leaves are signalled, the rest never run."""
        self._kill_requested = True
        self._cancel.set()
        self._events.put(("kill",))

    def run(self, group: ActionGroup) -> RunResult:
        if self._started:
            raise RuntimeError("a WorkflowEngine instance runs exactly one group")
        self._started = True
        root = self._open_frame(group, "", None)
        with ThreadPoolExecutor(max_workers=self.parallelism, thread_name_prefix="action") as pool:
            while True:
                if self._kill_requested and not self._killed:
                    self._do_kill()
                if not root.finished:
                    self._dispatch(pool, root)
                if root.finished and self._inflight == 0:
                    break
                if self._inflight == 0 and not self._ready and not self._kill_requested:
                    raise RuntimeError("workflow engine stalled with unfinished actions")
                event = self._events.get()
                if event[0] == "done":
                    self._on_leaf_done(event[1], event[2])
        assert root.code is not None
        return RunResult(root.code, self.snapshot(), dict(self._records), self.trace)

    # -- transitions

    def _set(self, node: _Node, new: ActionStatus) -> None:
        old = node.status
        if not is_legal(old, new):
            raise IllegalTransition(f"{node.qualname}: {old} -> {new}")
        now = self.clock()
        with self._lock:
            node.status = new
        if new is S.EXECUTING:
            node.dispatched_at = now
        elif new.done:
            node.completed_at = now
        self.trace.append(TraceEntry(node.qualname, old, new, now))

    def _register(self, frame: _Frame) -> None:
        for aid, action in frame.group.actions.items():
            node = _Node(frame, aid, action)
            frame.nodes[aid] = node
            with self._lock:
                self._nodes[node.qualname] = node

    def _open_frame(self, group: ActionGroup, prefix: str, owner: _Node | None) -> _Frame:
        frame = _Frame(group, prefix, owner)
        self._register(frame)
        for aid, node in frame.nodes.items():
            if not frame.preds[aid]:
                self._make_ready(node)
        self._check_frame(frame)
        return frame

    def _make_ready(self, node: _Node) -> None:
        if self._killed:
            self._finish_static(node, S.NEVER_RUN)
            return
        self._set(node, S.READY)
        heapq.heappush(self._ready, (node.depth, node.qualname))

    def _finish_static(self, node: _Node, status: ActionStatus) -> None:
        """Move a not-yet-started action (and everything it statically contains) to a final state."""
        self._set(node, status)
        self._records[node.qualname] = OutcomeRecord(node.qualname, status.code, log=list(node.log))
        if isinstance(node.action, RepeatGroup):
            return
        for label, child in subgroups(node.action):
            prefix = f"{node.qualname}/{label}/" if label else f"{node.qualname}/"
            dead = _Frame(child, prefix, None, live=False)
            self._register(dead)
            for inner in dead.nodes.values():
                self._finish_static(inner, status)

    def _dispatch(self, pool: ThreadPoolExecutor, root: _Frame) -> None:
        while self._ready and self._inflight < self.parallelism and not root.finished:
            _, qn = heapq.heappop(self._ready)
            node = self._nodes[qn]
            if node.status is not S.READY:
                continue
            self._set(node, S.EXECUTING)
            if node.composite:
                self._start_composite(node)
                continue
            ctx = ActionContext(node.aid, node.qualname, self._cancel)
            self._inflight += 1
            self._max_inflight = max(self._max_inflight, self._inflight)
            pool.submit(self._execute_leaf, node, ctx)

    def _execute_leaf(self, node: _Node, ctx: ActionContext) -> None:
        try:
            record = self.executor.execute(node.action, ctx)
            if not isinstance(record, OutcomeRecord):
                raise TypeError(f"executor returned {type(record).__name__}, not OutcomeRecord")
            if record.code not in (C.SUCCESSFUL, C.NOT_SUCCESSFUL):
                record.log.append(f"executor reported reserved code {record.code.value}")
                record.code = C.NOT_SUCCESSFUL
        except Exception:
            record = OutcomeRecord(
                node.qualname, C.NOT_SUCCESSFUL, log=["executor raised:", *traceback.format_exc().splitlines()]
            )
        self._events.put(("done", node, record))

    def _on_leaf_done(self, node: _Node, record: OutcomeRecord) -> None:
        self._inflight -= 1
        record.name = node.qualname
        if node.kill_signalled and record.code is C.SUCCESSFUL:
            record.code = C.NOT_SUCCESSFUL
        if node.kill_signalled:
            record.log.append("killed")
        if record.exit_code is not None:
            self._exit_codes[node.aid] = record.exit_code
        self._records[node.qualname] = record
        self._complete(node, record.code)

    def _complete(self, node: _Node, code: CompletionCode) -> None:
        self._set(node, S.done_with(code))
        if node.composite:
            self._records[node.qualname] = OutcomeRecord(node.qualname, code, log=list(node.log))
        frame = node.frame
        if code is C.NOT_SUCCESSFUL:
            self._poison(frame, node.aid)
        else:
            for s in frame.succs[node.aid]:
                succ = frame.nodes[s]
                if succ.status is S.PENDING and all(frame.nodes[p].status is S.SUCCESSFUL for p in frame.preds[s]):
                    self._make_ready(succ)
        self._check_frame(frame)

    def _poison(self, frame: _Frame, aid: ActionId) -> None:
        stack = list(frame.succs[aid])
        seen: set[ActionId] = set()
        while stack:
            s = stack.pop()
            if s in seen:
                continue
            seen.add(s)
            if frame.nodes[s].status is S.PENDING:
                self._finish_static(frame.nodes[s], S.NEVER_RUN)
            stack.extend(frame.succs[s])

    def _check_frame(self, frame: _Frame) -> None:
        if frame.finished or not frame.live:
            return
        if not all(n.status.done for n in frame.nodes.values()):
            return
        frame.finished = True
        ok = all(n.status is S.SUCCESSFUL for n in frame.nodes.values())
        frame.code = C.SUCCESSFUL if ok else C.NOT_SUCCESSFUL
        if frame.owner is not None:
            self._child_done(frame.owner, frame.code)

    # -- composites

    def _start_composite(self, node: _Node) -> None:
        action = node.action
        if isinstance(action, ConditionalAction):
            try:
                label, taken, untaken = resolve_conditional(action, self)
            except ConditionUnevaluable as exc:
                node.log.append(f"condition unevaluable: {exc}")
                for lbl, child in subgroups(action):
                    self._finish_dead(child, f"{node.qualname}/{lbl}/", S.NEVER_RUN)
                self._complete(node, C.NOT_SUCCESSFUL)
                return
            other = "else" if label == "then" else "then"
            node.log.append(f"took {label} branch")
            self._finish_dead(untaken, f"{node.qualname}/{other}/", S.NEVER_TAKEN)
            self._open_frame(taken, f"{node.qualname}/{label}/", node)
        elif isinstance(action, RepeatGroup):
            self._next_iteration(node)
        elif isinstance(action, AbstractJob):
            self._open_frame(action.group, f"{node.qualname}/", node)

    def _finish_dead(self, group: ActionGroup, prefix: str, status: ActionStatus) -> None:
        dead = _Frame(group, prefix, None, live=False)
        self._register(dead)
        for inner in dead.nodes.values():
            self._finish_static(inner, status)

    def _next_iteration(self, node: _Node) -> None:
        assert isinstance(node.action, RepeatGroup)
        if self._killed:
            node.log.append(f"killed after {node.iteration} iterations")
            self._complete(node, C.NOT_SUCCESSFUL)
            return
        try:
            body = step_repeat(node.action, node.iteration, self)
        except ConditionUnevaluable as exc:
            node.log.append(f"condition unevaluable: {exc}")
            self._complete(node, C.NOT_SUCCESSFUL)
            return
        if body is None:
            node.log.append(f"finished after {node.iteration} iterations")
            self._complete(node, C.SUCCESSFUL)
            return
        self._open_frame(body, f"{node.qualname}/", node)

    def _child_done(self, owner: _Node, code: CompletionCode) -> None:
        if isinstance(owner.action, RepeatGroup) and code is C.SUCCESSFUL:
            owner.iteration += 1
            self._next_iteration(owner)
            return
        if isinstance(owner.action, RepeatGroup):
            owner.log.append(f"iteration {owner.iteration} failed")
        self._complete(owner, code)

    # -- kill

    def _do_kill(self) -> None:
        self._killed = True
        for node in list(self._nodes.values()):
            if node.status is S.EXECUTING and not node.composite:
                node.kill_signalled = True
        for node in list(self._nodes.values()):
            if node.status in (S.PENDING, S.READY) and node.frame.live:
                node.log.append("killed before dispatch")
                self._finish_static(node, S.NEVER_RUN)
        frames = {id(n.frame): n.frame for n in self._nodes.values() if n.frame.live}
        # innermost frames first so owners see finished children
        for frame in sorted(frames.values(), key=lambda f: -f.prefix.count("/")):
            self._check_frame(frame)
