"""Parameter-sweep broker: turns a plan into jobs, wraps them as AJOs and farms them out.

The broker core only talks to :class:`ComputeServer` objects, so it runs
against the in-process :class:`MockComputeServer` as happily as against a
real gateway (:class:`GatewayComputeServer`).
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .ajo import (
    MAX_INLINE_FILE,
    AbstractJob,
    ActionGroup,
    CopyPortfolioToOutcome,
    ExecuteScriptTask,
    IncarnateFiles,
    MakePortfolio,
    ResourceRequest,
    ScriptType,
    is_safe_relpath,
    new_job,
)
from .errors import (
    AllServersUnhealthy,
    FileTooLarge,
    GridError,
    MissingLocalFile,
    OutcomeUnavailable,
    ServerUnavailable,
)
from .outcome import Outcome, OutcomeRecord
from .plan import Execute, PlanDocument, Substitute, enumerate_bindings, substitute
from .states import ActionStatus, CompletionCode
from .vsite import ResourceDescription

log = logging.getLogger(__name__)

SCRIPT_NAME = "plan_script.sh"
ROLE_NAMES = ("inputs", "portfolio", "execute", "results", "save")
ROLE_CHAIN = frozenset(zip(ROLE_NAMES, ROLE_NAMES[1:]))


# -- jobs


class BrokerState(str, Enum):
    UNSUBMITTED = "UNSUBMITTED"
    SUBMITTED = "SUBMITTED"
    ACTIVE = "ACTIVE"
    DONE = "DONE"
    FAILED_SUBMIT = "FAILED_SUBMIT"


@dataclass
class BrokerJob:
    index: int
    bindings: dict[str, str]
    state: BrokerState = BrokerState.UNSUBMITTED
    code: CompletionCode | None = None
    server: str | None = None
    remote_id: str | None = None
    outputs: list[Path] = field(default_factory=list)
    attempts: int = 0
    servers_tried: list[str] = field(default_factory=list)
    poll_failures: int = 0
    next_poll: float = 0.0
    error: str = ""

    @property
    def label(self) -> str:
        return f"DONE({self.code.value})" if self.state is BrokerState.DONE and self.code else self.state.value

    @property
    def finished(self) -> bool:
        return self.state in (BrokerState.DONE, BrokerState.FAILED_SUBMIT)


def enumerate_jobs(plan: PlanDocument) -> list[BrokerJob]:
    return [BrokerJob(i, b) for i, b in enumerate(enumerate_bindings(plan))]


@dataclass(frozen=True)
class StateChange:
    when: float
    index: int
    old: str
    new: str
    server: str | None
    detail: str = ""

    def line(self) -> str:
        where = f" on {self.server}" if self.server else ""
        extra = f" ({self.detail})" if self.detail else ""
        return f"job {self.index}: {self.old} -> {self.new}{where}{extra}"


# -- wrapping


@dataclass
class StagedJob:
    """Server-independent payload of one job: script plus staged input bytes."""

    script: bytes
    inputs: dict[str, bytes]
    results: list[str]


def _read_local(path: Path) -> bytes:
    try:
        size = path.stat().st_size
    except OSError:
        raise MissingLocalFile(f"{path} does not exist") from None
    if size > MAX_INLINE_FILE:
        raise FileTooLarge(f"{path} is {size} bytes; inline staging is limited to {MAX_INLINE_FILE}")
    return path.read_bytes()


def stage(plan: PlanDocument, bindings: dict[str, str]) -> StagedJob:
    """Read, substitute and size-check every input of one parameter point."""
    inputs: dict[str, bytes] = {}
    for cmd in plan.inputs:
        data = _read_local(plan.base_dir / cmd.src)
        inputs[cmd.dest] = substitute(data, bindings) if isinstance(cmd, Substitute) else data
    lines = [substitute(c.command.encode(), bindings) for c in plan.of(Execute)]
    script = b"\n".join(lines) + b"\n"
    if len(script) > MAX_INLINE_FILE:
        raise FileTooLarge("rendered script exceeds the inline staging limit")
    if SCRIPT_NAME in inputs:
        raise GridError(f"{SCRIPT_NAME!r} is reserved for the generated script")
    return StagedJob(script, inputs, [c.src for c in plan.results])


def build_ajo(
    staged: StagedJob,
    name: str,
    vsite: str,
    identity: str,
    script_type: ScriptType = ScriptType.SH,
    resources: ResourceRequest | None = None,
) -> AbstractJob:
    """The five-action chain: inputs -> portfolio -> execute -> results -> save."""
    ajo = new_job(name, vsite, identity)
    inputs = IncarnateFiles("inputs", {SCRIPT_NAME: staged.script, **staged.inputs})
    portfolio = MakePortfolio("portfolio", [SCRIPT_NAME, *staged.inputs])
    ajo.add(inputs)
    ajo.add(portfolio)
    execute = ExecuteScriptTask(
        "execute", script_portfolio=portfolio.id, script_type=script_type, resources=resources or ResourceRequest()
    )
    ajo.add(execute)
    results = MakePortfolio("results", list(staged.results))
    ajo.add(results)
    save = CopyPortfolioToOutcome("save", target=results.id)
    ajo.add(save)
    ajo.add_dependency(inputs, portfolio)
    ajo.add_dependency(portfolio, execute)
    ajo.add_dependency(execute, results)
    ajo.add_dependency(results, save)
    return ajo


def wrap(
    job: BrokerJob, server: ComputeServer, plan: PlanDocument, script_type: ScriptType = ScriptType.SH
) -> AbstractJob:
    return build_ajo(stage(plan, job.bindings), f"sweep-{job.index}", server.vsite, server.identity, script_type)


def role_of(group: ActionGroup, action) -> str | None:
    """Which link of the staging chain an action plays, or None for anything else."""
    if isinstance(action, IncarnateFiles):
        return "inputs"
    if isinstance(action, ExecuteScriptTask):
        return "execute"
    if isinstance(action, CopyPortfolioToOutcome):
        return "save"
    if isinstance(action, MakePortfolio):
        upstream = (group.actions[a] for a in group.ancestors(action.id))
        return "results" if any(isinstance(a, ExecuteScriptTask) for a in upstream) else "portfolio"
    return None


def role_graph(group: ActionGroup) -> set[tuple[str, str]]:
    """Dependency edges projected onto roles (parallel edges collapse)."""
    roles = {aid: role_of(group, a) for aid, a in group.actions.items()}
    return {(roles[p], roles[s]) for p, s in group.edges if roles[p] is not None and roles[s] is not None}


# -- compute servers


@dataclass
class RemoteStatus:
    finished: bool
    code: CompletionCode | None = None


class ComputeServer(Protocol):
    """Anything that can run an AJO for the broker."""

    name: str
    vsite: str
    identity: str

    def probe(self) -> ResourceDescription: ...

    def submit(self, ajo: AbstractJob) -> str: ...

    def poll(self, remote_id: str) -> RemoteStatus: ...

    def retrieve(self, remote_id: str) -> Outcome: ...


class GatewayComputeServer:
    """A vsite reached through a gateway."""

    def __init__(self, name: str, address: str | tuple[str, int], vsite: str, identity: str, timeout: float = 30.0):
        from .gateway import GatewayClient

        self.name, self.vsite, self.identity = name, vsite, identity
        self.address = address
        self.client = GatewayClient(address, timeout=timeout)

    def __repr__(self) -> str:
        return f"GatewayComputeServer({self.name!r}, {self.vsite!r})"

    def _call(self, fn, *args):
        from .gateway import GatewayError

        try:
            return fn(*args)
        except GatewayError as exc:
            if exc.code in ("PROTOCOL", "MALFORMED"):
                raise ServerUnavailable(str(exc)) from None
            raise

    def probe(self) -> ResourceDescription:
        return self._call(self.client.describe, self.vsite)

    def submit(self, ajo: AbstractJob) -> str:
        return self._call(self.client.consign, ajo)

    def poll(self, remote_id: str) -> RemoteStatus:
        st = self._call(self.client.poll, remote_id)
        return RemoteStatus(st.finished, CompletionCode(st.code) if st.code else None)

    def retrieve(self, remote_id: str) -> Outcome:
        return self._call(self.client.outcome, remote_id)

    def close(self) -> None:
        self.client.close()


class MockComputeServer:
    """In-process stand-in that "runs" a job by calling ``handler``.

    ``handler(script, inputs)`` returns ``(exit_code, stdout, files)``.  The
    default echoes the script and produces every requested result file
    holding the script text.  Setting ``down`` makes every call raise
    :class:`ServerUnavailable`; ``polls`` is how many polls a job stays busy.
    """

    def __init__(self, name: str, handler=None, polls: int = 1, vsite: str | None = None, identity: str = "mock"):
        self.name, self.vsite, self.identity = name, vsite or name, identity
        self.handler = handler
        self.polls = polls
        self.down = False
        self.submitted: list[AbstractJob] = []
        self._jobs: dict[str, list] = {}

    def _check(self) -> None:
        if self.down:
            raise ServerUnavailable(f"{self.name} is down")

    def probe(self) -> ResourceDescription:
        self._check()
        return ResourceDescription()

    def submit(self, ajo: AbstractJob) -> str:
        self._check()
        remote_id = f"{self.name}-{len(self.submitted) + 1}"
        self.submitted.append(ajo)
        self._jobs[remote_id] = [ajo, self.polls]
        return remote_id

    def _run(self, ajo: AbstractJob) -> Outcome:
        g = ajo.group
        files = dict(g.by_name("inputs").files)
        script = files.pop(SCRIPT_NAME)
        wanted = g.by_name("results").file_names
        if self.handler is None:
            exit_code, stdout, produced = 0, script, {n: script for n in wanted}
        else:
            exit_code, stdout, produced = self.handler(script, files)
        ok = exit_code == 0 and all(n in produced for n in wanted)
        code = CompletionCode.SUCCESSFUL if ok else CompletionCode.NOT_SUCCESSFUL
        out = Outcome(ajo.job_id, self.vsite, code)
        out.records["execute"] = OutcomeRecord("execute", code, stdout, b"", exit_code=exit_code)
        if ok:
            paths = [f"save/files/{n}" for n in wanted]
            out.files_mapping[g.by_name("save").id] = paths
            out.files = {p: produced[n] for p, n in zip(paths, wanted)}
        out.statuses = {a.name: ActionStatus.done_with(code) for a in g.actions.values()}
        return out

    def poll(self, remote_id: str) -> RemoteStatus:
        self._check()
        entry = self._jobs[remote_id]
        entry[1] -= 1
        if entry[1] > 0:
            return RemoteStatus(False)
        if not isinstance(entry[0], Outcome):
            entry[0] = self._run(entry[0])
        return RemoteStatus(True, entry[0].code)

    def retrieve(self, remote_id: str) -> Outcome:
        self._check()
        entry = self._jobs.get(remote_id)
        if entry is None or not isinstance(entry[0], Outcome):
            raise OutcomeUnavailable(remote_id)
        return entry[0]


@dataclass
class ServerHandle:
    server: ComputeServer
    healthy: bool = True
    resources: ResourceDescription | None = None
    last_probe: float = 0.0

    @property
    def name(self) -> str:
        return self.server.name


# -- scheduling


class SchedulePolicy(str, Enum):
    ROUND_ROBIN = "ROUND_ROBIN"
    LEAST_LOADED = "LEAST_LOADED"


class Scheduler:
    """Chooses a server for each job among the healthy ones."""

    def __init__(self, policy: SchedulePolicy):
        self.policy = SchedulePolicy(policy)
        self._cursor = 0

    def choose(
        self, handles: list[ServerHandle], load: dict[str, int], avoid: Iterable[str] = ()
    ) -> ServerHandle | None:
        healthy = [h for h in handles if h.healthy]
        if not healthy:
            return None
        avoid = set(avoid)
        preferred = [h for h in healthy if h.name not in avoid] or healthy
        if self.policy is SchedulePolicy.LEAST_LOADED:
            return min(preferred, key=lambda h: (load.get(h.name, 0), h.name))
        n = len(handles)
        for step in range(n):
            h = handles[(self._cursor + step) % n]
            if h in preferred:
                self._cursor = (self._cursor + step + 1) % n
                return h
        return preferred[0]  # pragma: no cover - preferred is a subset of handles


# -- the broker


@dataclass
class SweepReport:
    jobs: list[BrokerJob]
    changes: list[StateChange]
    consigns: int
    fatal: str = ""

    @property
    def ok(self) -> bool:
        return not self.fatal and all(
            j.state is BrokerState.DONE and j.code is CompletionCode.SUCCESSFUL for j in self.jobs
        )

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def failures(self) -> list[BrokerJob]:
        return [j for j in self.jobs if not (j.state is BrokerState.DONE and j.code is CompletionCode.SUCCESSFUL)]

    def assignment(self) -> dict[str, list[int]]:
        """First-attempt server of every job, grouped by server."""
        out: dict[str, list[int]] = {}
        for j in self.jobs:
            if j.servers_tried:
                out.setdefault(j.servers_tried[0], []).append(j.index)
        return out


class Broker:
    """Schedules, monitors and collects one sweep.

    All BrokerJob mutation happens on the thread calling :meth:`run`; remote
    calls for a batch (consigns, polls, retrievals) fan out over a thread pool
    and their results are applied back on the owner thread.
    """

    def __init__(
        self,
        plan: PlanDocument,
        servers: list[ComputeServer],
        output_dir: str | os.PathLike,
        policy: SchedulePolicy = SchedulePolicy.ROUND_ROBIN,
        poll_interval: float = 0.5,
        max_attempts: int = 3,
        max_poll_failures: int = 10,
        reprobe_interval: float = 5.0,
        script_type: ScriptType = ScriptType.SH,
        on_change: Callable[[StateChange], None] | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        workers: int = 4,
    ):
        if not servers:
            raise ValueError("a broker needs at least one compute server")
        names = [s.name for s in servers]
        if len(set(names)) != len(names):
            raise ValueError("compute server names must be unique")
        self.plan = plan
        self.handles = [ServerHandle(s) for s in servers]
        self.output_dir = Path(output_dir)
        self.scheduler = Scheduler(policy)
        self.poll_interval = poll_interval
        self.max_attempts = max_attempts
        self.max_poll_failures = max_poll_failures
        self.reprobe_interval = reprobe_interval
        self.script_type = script_type
        self.on_change = on_change
        self.clock = clock
        self.sleep = sleep
        self.jobs = enumerate_jobs(plan)
        self.changes: list[StateChange] = []
        self.consigns = 0
        self.fatal = ""
        self._pool = ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="broker")
        self._staged: dict[int, StagedJob] = {}

    # -- bookkeeping

    def handle(self, name: str) -> ServerHandle:
        return next(h for h in self.handles if h.name == name)

    def load(self) -> dict[str, int]:
        out = {h.name: 0 for h in self.handles}
        for j in self.jobs:
            if j.state in (BrokerState.SUBMITTED, BrokerState.ACTIVE) and j.server:
                out[j.server] += 1
        return out

    def _move(self, job: BrokerJob, state: BrokerState, code: CompletionCode | None = None, detail: str = "") -> None:
        old = job.label
        job.state, job.code = state, code
        change = StateChange(self.clock(), job.index, old, job.label, job.server, detail)
        self.changes.append(change)
        log.info(change.line())
        if self.on_change is not None:
            self.on_change(change)

    def _mark_unhealthy(self, h: ServerHandle, why: str) -> None:
        if h.healthy:
            log.warning("server %s marked unhealthy: %s", h.name, why)
        h.healthy = False
        h.last_probe = self.clock()

    # -- phases

    def _probe(self, handles: list[ServerHandle]) -> None:
        def go(h):
            try:
                return h, h.server.probe(), None
            except (ServerUnavailable, OSError) as exc:
                return h, None, exc
            except GridError as exc:
                return h, None, exc

        for h, desc, exc in self._pool.map(go, handles):
            h.last_probe = self.clock()
            if exc is None:
                if not h.healthy:
                    log.info("server %s is healthy again", h.name)
                h.healthy, h.resources = True, desc
            else:
                self._mark_unhealthy(h, str(exc))

    def _reprobe_due(self) -> None:
        now = self.clock()
        due = [h for h in self.handles if not h.healthy and now - h.last_probe >= self.reprobe_interval]
        if due:
            self._probe(due)

    def _dispatch(self) -> None:
        pending = [j for j in self.jobs if j.state is BrokerState.UNSUBMITTED]
        if not pending:
            return
        if not any(h.healthy for h in self.handles):
            self._probe(self.handles)
        if not any(h.healthy for h in self.handles):
            self.fatal = "all compute servers are unhealthy"
            for j in pending:
                j.error = self.fatal
                self._move(j, BrokerState.FAILED_SUBMIT, detail=self.fatal)
            return
        load = self.load()
        batch = []
        for j in pending:
            h = self.scheduler.choose(self.handles, load, avoid=j.servers_tried)
            load[h.name] += 1
            j.server = h.name
            j.attempts += 1
            j.servers_tried.append(h.name)
            ajo = build_ajo(
                self._staged[j.index], f"sweep-{j.index}", h.server.vsite, h.server.identity, self.script_type
            )
            batch.append((j, h, ajo))
        self.consigns += len(batch)

        def go(item):
            j, h, ajo = item
            try:
                return item, h.server.submit(ajo), None
            except (GridError, OSError) as exc:
                return item, None, exc

        for (j, h, _), remote_id, exc in self._pool.map(go, batch):
            if exc is None:
                j.remote_id, j.poll_failures, j.next_poll = remote_id, 0, self.clock()
                self._move(j, BrokerState.SUBMITTED, detail=f"remote id {remote_id}, attempt {j.attempts}")
                continue
            if isinstance(exc, (ServerUnavailable, OSError)):
                self._mark_unhealthy(h, str(exc))
            j.error = f"{type(exc).__name__}: {exc}"
            log.warning("job %d: consign to %s failed: %s", j.index, h.name, j.error)
            j.server = None
            if j.attempts >= self.max_attempts:
                self._move(j, BrokerState.FAILED_SUBMIT, detail=j.error)

    def _monitor(self) -> None:
        now = self.clock()
        due = [j for j in self.jobs if j.state in (BrokerState.SUBMITTED, BrokerState.ACTIVE) and j.next_poll <= now]
        if not due:
            return

        def go(j):
            h = self.handle(j.server)
            try:
                st = h.server.poll(j.remote_id)
                if not st.finished:
                    return j, st, None, None
                return j, st, h.server.retrieve(j.remote_id), None
            except (GridError, OSError) as exc:
                return j, None, None, exc

        for j, st, outcome, exc in self._pool.map(go, due):
            h = self.handle(j.server)
            if exc is not None:
                self._poll_failed(j, h, exc)
                continue
            j.poll_failures = 0
            if j.state is BrokerState.SUBMITTED:
                self._move(j, BrokerState.ACTIVE)
            if outcome is None:
                j.next_poll = self.clock() + self.poll_interval
                continue
            j.outputs = collect_output(j, outcome, self.output_dir, self.plan)
            self._move(j, BrokerState.DONE, outcome.code, detail=f"{len(j.outputs)} file(s) collected")

    def _poll_failed(self, j: BrokerJob, h: ServerHandle, exc: Exception) -> None:
        if isinstance(exc, (ServerUnavailable, OSError)):
            self._mark_unhealthy(h, str(exc))
        j.poll_failures += 1
        j.error = f"{type(exc).__name__}: {exc}"
        backoff = self.poll_interval * min(2 ** (j.poll_failures - 1), 4)
        j.next_poll = self.clock() + backoff
        if j.poll_failures < self.max_poll_failures:
            return
        others = [x for x in self.handles if x.healthy and x.name != h.name]
        if j.attempts < self.max_attempts and others:
            j.server, j.remote_id = None, None
            self._move(j, BrokerState.UNSUBMITTED, detail=f"requeued after {j.poll_failures} failed polls on {h.name}")
        else:
            self._move(j, BrokerState.DONE, CompletionCode.NOT_SUCCESSFUL, detail=f"{j.poll_failures} failed polls")

    def step(self) -> None:
        self._reprobe_due()
        self._dispatch()
        self._monitor()

    def run(self) -> SweepReport:
        """Drive the sweep to completion and return the report.

        Raises :class:`AllServersUnhealthy` (with ``.report``) if jobs had to
        be abandoned because no server was reachable.
        """
        self._staged = {j.index: stage(self.plan, j.bindings) for j in self.jobs}
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self._probe(self.handles)
        try:
            while not all(j.finished for j in self.jobs):
                self.step()
                if all(j.finished for j in self.jobs):
                    break
                waits = [j.next_poll for j in self.jobs if j.state in (BrokerState.SUBMITTED, BrokerState.ACTIVE)]
                if any(j.state is BrokerState.UNSUBMITTED for j in self.jobs):
                    delay = self.poll_interval if not waits else 0.0
                else:
                    delay = max(0.0, min(waits) - self.clock()) if waits else 0.0
                if delay:
                    self.sleep(min(delay, self.poll_interval * 4))
        finally:
            self._pool.shutdown(wait=True)
        report = SweepReport(self.jobs, self.changes, self.consigns, self.fatal)
        if self.fatal:
            err = AllServersUnhealthy(self.fatal)
            err.report = report
            raise err
        return report


# -- output collection


def collect_output(job: BrokerJob, outcome: Outcome, output_dir: Path, plan: PlanDocument) -> list[Path]:
    """Write ``stdout.<i>``, ``stderr.<i>`` and ``<result>.<i>`` files for one job."""
    if outcome is None:
        raise OutcomeUnavailable(f"job {job.index} has no outcome")
    output_dir.mkdir(parents=True, exist_ok=True)
    record = outcome.records.get("execute")
    written = []
    for stream in ("stdout", "stderr"):
        target = output_dir / f"{stream}.{job.index}"
        target.write_bytes(getattr(record, stream) if record else b"")
        written.append(target)
    local_name = {c.src: c.dest for c in plan.results}
    for paths in outcome.files_mapping.values():
        for p in paths:
            if p not in outcome.files or "/files/" not in p:
                continue
            remote = p.split("/files/", 1)[1]
            name = local_name.get(remote, remote)
            if not is_safe_relpath(name):
                continue
            target = output_dir / f"{name}.{job.index}"
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(outcome.files[p])
            written.append(target)
    return written


# -- configuration


@dataclass
class BrokerConfig:
    servers: list[dict]
    policy: SchedulePolicy = SchedulePolicy.ROUND_ROBIN
    poll_interval: float = 0.5
    output_dir: str = "sweep-output"
    script_type: ScriptType = ScriptType.SH
    max_attempts: int = 3
    max_poll_failures: int = 10
    reprobe_interval: float = 5.0

    def compute_servers(self) -> list[GatewayComputeServer]:
        return [
            GatewayComputeServer(s.get("name", s["vsite"]), s["gateway"], s["vsite"], s["token"]) for s in self.servers
        ]


def load_broker_config(path: str | os.PathLike) -> BrokerConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        servers = doc["servers"]
        for s in servers:
            missing = {"gateway", "vsite", "token"} - s.keys()
            if missing:
                raise KeyError(", ".join(sorted(missing)))
        cfg = BrokerConfig(
            servers=servers,
            policy=SchedulePolicy(doc.get("policy", "ROUND_ROBIN")),
            poll_interval=float(doc.get("poll_interval", 0.5)),
            output_dir=str(path.parent / doc.get("output_dir", "sweep-output")),
            script_type=ScriptType(doc.get("script_type", "SH")),
            max_attempts=int(doc.get("max_attempts", 3)),
            max_poll_failures=int(doc.get("max_poll_failures", 10)),
            reprobe_interval=float(doc.get("reprobe_interval", 5.0)),
        )
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise GridError(f"{path}: invalid broker config: {exc!r}") from None
    if not cfg.servers:
        raise GridError(f"{path}: broker config lists no servers")
    return cfg


__all__ = [
    "Broker",
    "BrokerConfig",
    "BrokerJob",
    "BrokerState",
    "ComputeServer",
    "GatewayComputeServer",
    "MockComputeServer",
    "ROLE_CHAIN",
    "RemoteStatus",
    "SchedulePolicy",
    "Scheduler",
    "StateChange",
    "SweepReport",
    "build_ajo",
    "collect_output",
    "enumerate_jobs",
    "load_broker_config",
    "role_graph",
    "stage",
    "wrap",
]
