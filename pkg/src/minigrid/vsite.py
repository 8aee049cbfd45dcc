"""One virtual site: authorization, incarnation, per-job Uspace, execution, Outcomes."""

from __future__ import annotations

import json
import logging
import os
import shutil
import string
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .ajo import (
    AbstractAction,
    AbstractJob,
    CopyPortfolioToOutcome,
    ExecuteScriptTask,
    ExportFile,
    ImportFile,
    IncarnateFiles,
    KillService,
    MakePortfolio,
    ResourceRequest,
    ScriptType,
    SpoolFile,
    StatusService,
    validate,
    walk,
)
from .engine import ActionContext, WorkflowEngine
from .errors import (
    GridError,
    MissingScript,
    ModelError,
    NotAuthorized,
    UnknownJob,
    UnknownScriptType,
    UnsupportedResource,
)
from .outcome import Outcome, OutcomeRecord, safe_segment
from .states import ActionStatus, CompletionCode
from .tsi import Command, SimulatedTsi, SubprocessTsi, TsiBackend
from .uspace import Uspace, confined

log = logging.getLogger(__name__)

C = CompletionCode


@dataclass
class ResourceDescription:
    max_processors: int = 1
    max_memory: int = 0  # MiB
    max_wall_time: float = 0  # seconds
    software_packages: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        self.software_packages = frozenset(self.software_packages)
        if min(self.max_processors, self.max_memory, self.max_wall_time) < 0:
            raise ValueError("resource limits must be >= 0")

    def to_dict(self) -> dict:
        return {
            "max_processors": self.max_processors,
            "max_memory": self.max_memory,
            "max_wall_time": self.max_wall_time,
            "software_packages": sorted(self.software_packages),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ResourceDescription:
        return cls(
            max_processors=int(doc.get("max_processors", 1)),
            max_memory=doc.get("max_memory", 0),
            max_wall_time=doc.get("max_wall_time", 0),
            software_packages=frozenset(doc.get("software_packages", ())),
        )


def check_resources(req: ResourceRequest, site: ResourceDescription) -> None:
    """Raise :class:`UnsupportedResource` naming the first dimension ``req`` exceeds."""
    if req.processors > site.max_processors:
        raise UnsupportedResource("processors", f"{req.processors} > {site.max_processors}")
    if req.memory > site.max_memory:
        raise UnsupportedResource("memory", f"{req.memory} MiB > {site.max_memory} MiB")
    if req.wall_time > site.max_wall_time:
        raise UnsupportedResource("wall_time", f"{req.wall_time} s > {site.max_wall_time} s")
    missing = req.software_packages - site.software_packages
    if missing:
        raise UnsupportedResource("software_packages", ", ".join(sorted(missing)))


@dataclass
class IncarnationDatabase:
    interpreters: dict[ScriptType, str] = field(default_factory=dict)
    # package name -> environment settings; values may reference $VARS of the base environment
    packages: dict[str, dict[str, str]] = field(default_factory=dict)


def incarnate(
    task: ExecuteScriptTask,
    idb: IncarnationDatabase,
    uspace: Uspace,
    script_files: list[str],
    base_env: dict[str, str] | None = None,
) -> Command:
    """Turn an abstract script task into a site-concrete command."""
    interpreter = idb.interpreters.get(task.script_type)
    if interpreter is None:
        raise UnknownScriptType(f"site has no interpreter for {task.script_type.value}")
    if not script_files or not uspace.exists(script_files[0]):
        raise MissingScript(f"script {script_files[0] if script_files else '<none>'!r} is not in the uspace")
    env = dict(base_env or {})
    for pkg in sorted(task.resources.software_packages):
        for key, value in idb.packages.get(pkg, {}).items():
            env[key] = string.Template(value).safe_substitute(env)
    return Command([interpreter, script_files[0]], uspace.root, env)


class _Slots:
    """Counting slots acquired n at a time; waiting gives up when cancelled."""

    def __init__(self, total: int):
        self.total = max(1, total)
        self.free = self.total
        self._cond = threading.Condition()

    def acquire(self, n: int, cancel: threading.Event) -> bool:
        n = min(max(1, n), self.total)
        with self._cond:
            while self.free < n:
                if cancel.is_set():
                    return False
                self._cond.wait(0.05)
            self.free -= n
            return True

    def release(self, n: int) -> None:
        n = min(max(1, n), self.total)
        with self._cond:
            self.free += n
            self._cond.notify_all()


class ActionPerformer:
    """Executes the leaf actions of one job against its Uspace (the engine's executor)."""

    def __init__(self, vsite: Vsite, job: AbstractJob, uspace: Uspace, store: Path, login: str):
        self.vsite = vsite
        self.job = job
        self.uspace = uspace
        self.store = store
        self.login = login
        self.portfolios: dict[str, list[str]] = {}
        self.files_mapping: dict[str, list[str]] = {}
        self._lock = threading.Lock()

    def file_exists(self, path: str) -> bool:
        return self.uspace.exists(path)

    def execute(self, action: AbstractAction, context: ActionContext) -> OutcomeRecord:
        record = OutcomeRecord(context.qualname, C.SUCCESSFUL)
        try:
            handler = getattr(self, "_do_" + type(action).__name__)
        except AttributeError:
            record.code = C.NOT_SUCCESSFUL
            record.log.append(f"unsupported action {type(action).__name__}")
            return record
        try:
            handler(action, context, record)
        except (OSError, GridError) as exc:
            record.code = C.NOT_SUCCESSFUL
            record.log.append(f"{type(exc).__name__}: {exc}")
        return record

    def _do_IncarnateFiles(self, action: IncarnateFiles, ctx, record) -> None:
        for name, data in action.files.items():
            self.uspace.write(name, data)
            record.log.append(f"incarnated {name} ({len(data)} bytes)")

    def _do_MakePortfolio(self, action: MakePortfolio, ctx, record) -> None:
        # existence is checked lazily, when the portfolio is consumed
        with self._lock:
            self.portfolios[ctx.action_id] = list(action.file_names)
        record.log.append(f"portfolio of {len(action.file_names)} file(s)")

    def _portfolio(self, pid: str) -> list[str]:
        with self._lock:
            if pid not in self.portfolios:
                raise MissingScript(f"portfolio {pid!r} was never made")
            return list(self.portfolios[pid])

    def _do_ExecuteScriptTask(self, action: ExecuteScriptTask, ctx, record) -> None:
        files = self._portfolio(action.script_portfolio)
        command = incarnate(action, self.vsite.idb, self.uspace, files, self.vsite.base_env(self.uspace))
        record.log.append(f"incarnated for login {self.login}: {os.path.basename(command.argv[0])} {command.argv[1]}")
        procs = action.resources.processors
        if not self.vsite.slots.acquire(procs, ctx.cancelled):
            record.code = C.NOT_SUCCESSFUL
            record.log.append("cancelled while waiting for processors")
            return
        try:
            timeout = action.resources.wall_time or None
            result = self.vsite.tsi.run(command, timeout=timeout, cancel=ctx.cancelled)
        finally:
            self.vsite.slots.release(procs)
        record.stdout, record.stderr, record.exit_code = result.stdout, result.stderr, result.exit_code
        if result.timed_out:
            record.log.append(f"wall time of {timeout} s exceeded; killed")
        if result.cancelled:
            record.log.append("signalled by kill")
        record.log.append(f"exit code {result.exit_code}")
        if result.exit_code != 0 or result.timed_out or result.cancelled:
            record.code = C.NOT_SUCCESSFUL

    def _do_CopyPortfolioToOutcome(self, action: CopyPortfolioToOutcome, ctx, record) -> None:
        files = self._portfolio(action.target)
        missing = [f for f in files if not self.uspace.exists(f)]
        if missing:
            record.code = C.NOT_SUCCESSFUL
            record.log.append("missing from uspace: " + ", ".join(missing))
            return
        base = "/".join(safe_segment(p) for p in ctx.qualname.split("/")) + "/files"
        saved = []
        for f in files:
            rel = f"{base}/{f}"
            target = confined(self.store, rel)
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(self.uspace.path(f), target)
            saved.append(rel)
        with self._lock:
            self.files_mapping[ctx.action_id] = saved
        record.log.append(f"saved {len(saved)} file(s) to outcome")

    def _do_ImportFile(self, action: ImportFile, ctx, record) -> None:
        self.uspace.copy_in(confined(self.vsite.xspace_root, action.source), action.dest)
        record.log.append(f"imported {action.source} -> {action.dest}")

    def _do_ExportFile(self, action: ExportFile, ctx, record) -> None:
        target = confined(self.vsite.xspace_root, action.dest)
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(self.uspace.path(action.source), target)
        record.log.append(f"exported {action.source} -> {action.dest}")

    def _do_SpoolFile(self, action: SpoolFile, ctx, record) -> None:
        target = confined(self.vsite.spool_root, f"{safe_segment(self.job.job_id)}/{action.source}")
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(self.uspace.path(action.source), target)
        record.log.append(f"spooled {action.source}")

    def _do_KillService(self, action: KillService, ctx, record) -> None:
        execution = self.vsite.find_execution(action.target_job)
        execution.kill()
        record.log.append(f"kill sent to {action.target_job}")

    def _do_StatusService(self, action: StatusService, ctx, record) -> None:
        execution = self.vsite.find_execution(action.target_job)
        snap = execution.snapshot()
        record.stdout = "".join(f"{k} {v}\n" for k, v in sorted(snap.items())).encode()


class JobExecution:
    """A job running (or finished) on a vsite."""

    def __init__(self, vsite: Vsite, job: AbstractJob, login: str, parallelism: int):
        self.vsite = vsite
        self.job = job
        self.login = login
        self.engine = WorkflowEngine(_Deferred(), parallelism=parallelism, clock=vsite.clock)
        self.outcome: Outcome | None = None
        self.uspace: Uspace | None = None
        self.finalize_problems: list[str] = []
        self.done = threading.Event()
        self._initial = {a.name: ActionStatus.PENDING for a in job.group.actions.values()}
        self._thread = threading.Thread(target=self._run, name=f"job-{job.job_id}", daemon=True)

    @property
    def job_id(self) -> str:
        return self.job.job_id

    def start(self) -> JobExecution:
        self._thread.start()
        return self

    def _run(self) -> None:
        store = self.vsite.outcome_root / safe_segment(self.job_id)
        code = C.NOT_SUCCESSFUL
        result = None
        performer = None
        try:
            self.uspace = Uspace(self.vsite.uspace_root, self.job_id)
            store.mkdir(parents=True, exist_ok=True)
            performer = ActionPerformer(self.vsite, self.job, self.uspace, store, self.login)
            self.engine.executor = performer
            result = self.engine.run(self.job.group)
            code = result.code
        except Exception:
            log.exception("job %s aborted", self.job_id)
        finally:
            if self.uspace is not None:
                self.finalize_problems = self.uspace.finalize()
        self.outcome = _assemble(self.job, self.vsite.name, code, result, performer, store)
        self.done.set()

    def snapshot(self) -> dict[str, ActionStatus]:
        snap = self.engine.snapshot()
        return snap if snap else dict(self._initial)

    def kill(self) -> None:
        self.engine.kill()

    def wait(self, timeout: float | None = None) -> Outcome:
        if not self.done.wait(timeout):
            raise TimeoutError(f"job {self.job_id} still running")
        assert self.outcome is not None
        return self.outcome


class _Deferred:
    def execute(self, action, context):  # replaced before the engine runs
        raise RuntimeError("executor not attached")


def _assemble(job, vsite_name, code, result, performer, store: Path) -> Outcome:
    outcome = Outcome(job.job_id, vsite_name, code)
    if result is None:
        return outcome
    outcome.statuses = dict(result.statuses)
    outcome.records = dict(result.records)
    for qualname, rec in outcome.records.items():
        d = store / Path(*[safe_segment(p) for p in qualname.split("/")])
        try:
            d.mkdir(parents=True, exist_ok=True)
            (d / "stdout").write_bytes(rec.stdout)
            (d / "stderr").write_bytes(rec.stderr)
            (d / "log").write_text("".join(f"{line}\n" for line in rec.log))
        except OSError as exc:
            rec.log.append(f"could not write outcome store: {exc}")
    if performer is not None:
        outcome.files_mapping = dict(performer.files_mapping)
        for paths in outcome.files_mapping.values():
            for rel in paths:
                outcome.files[rel] = (store / rel).read_bytes()
    return outcome


class Vsite:
    """A virtual site with its user database, incarnation database and TSI."""

    def __init__(
        self,
        name: str,
        root: str | os.PathLike | None = None,
        *,
        users: dict[str, str] | None = None,
        idb: IncarnationDatabase | None = None,
        resources: ResourceDescription | None = None,
        tsi: TsiBackend | None = None,
        uspace_root: str | os.PathLike | None = None,
        spool_root: str | os.PathLike | None = None,
        outcome_root: str | os.PathLike | None = None,
        xspace_root: str | os.PathLike | None = None,
        clock: Callable[[], float] = time.time,
    ):
        if not name:
            raise ValueError("vsite name must be non-empty")
        base = Path(root) if root is not None else None

        def _dir(explicit, sub):
            if explicit is None and base is None:
                raise ValueError(f"{sub} needs either an explicit path or a site root")
            d = Path(explicit) if explicit is not None else base / sub
            d.mkdir(parents=True, exist_ok=True)
            return d.resolve()

        self.name = name
        self.udb: dict[str, str] = dict(users or {})
        if any(not login for login in self.udb.values()):
            raise ValueError("logins must be non-empty")
        self.idb = idb or IncarnationDatabase({ScriptType.SH: "/bin/sh"})
        self.resources = resources or ResourceDescription(max_processors=os.cpu_count() or 1)
        self.tsi: TsiBackend = tsi or SubprocessTsi()
        self.uspace_root = _dir(uspace_root, "uspace")
        self.spool_root = _dir(spool_root, "spool")
        self.outcome_root = _dir(outcome_root, "outcomes")
        self.xspace_root = _dir(xspace_root, "xspace")
        if self.uspace_root == self.spool_root:
            raise ValueError("uspace_root and spool_root must differ")
        self.clock = clock
        self.slots = _Slots(self.resources.max_processors)
        self.job_lookup: Callable[[str], JobExecution] | None = None
        self._executions: dict[str, JobExecution] = {}
        self._lock = threading.RLock()

    def __repr__(self) -> str:
        return f"Vsite({self.name!r})"

    # -- site tables

    def authorize(self, identity: str) -> str:
        with self._lock:
            login = self.udb.get(identity) if identity else None
        if not login:
            raise NotAuthorized("identity has no login on this vsite")
        return login

    def add_user(self, identity: str, login: str) -> None:
        if not identity or not login:
            raise ValueError("identity and login must be non-empty")
        with self._lock:
            self.udb[identity] = login

    def describe(self) -> ResourceDescription:
        return self.resources

    def base_env(self, uspace: Uspace) -> dict[str, str]:
        return {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": str(uspace.root),
            "LANG": "C",
        }

    def scan_resources(self, job: AbstractJob) -> None:
        for _, action in walk(job.group):
            if isinstance(action, ExecuteScriptTask):
                check_resources(action.resources, self.resources)

    # -- jobs

    def start(self, job: AbstractJob, parallelism: int = 1) -> JobExecution:
        """Authorize, check and launch ``job`` in the background."""
        problems = validate(job)
        if problems:
            raise ModelError("; ".join(problems))
        login = self.authorize(job.identity)
        self.scan_resources(job)
        execution = JobExecution(self, job, login, parallelism)
        with self._lock:
            if job.job_id in self._executions:
                raise ModelError(f"job id {job.job_id!r} already used on {self.name}")
            self._executions[job.job_id] = execution
        return execution.start()

    def consign_local(self, job: AbstractJob, parallelism: int = 1) -> Outcome:
        return self.start(job, parallelism).wait()

    def find_execution(self, job_id: str) -> JobExecution:
        with self._lock:
            execution = self._executions.get(job_id)
        if execution is None and self.job_lookup is not None:
            return self.job_lookup(job_id)
        if execution is None:
            raise UnknownJob(job_id)
        return execution

    def executions(self) -> list[JobExecution]:
        with self._lock:
            return list(self._executions.values())

    def purge_spool(self, job_id: str | None = None) -> None:
        targets = [self.spool_root / safe_segment(job_id)] if job_id else list(self.spool_root.iterdir())
        for t in targets:
            if t.is_dir():
                shutil.rmtree(t)
            elif t.exists():
                t.unlink()


def load_vsite(path: str | os.PathLike, clock: Callable[[], float] = time.time) -> Vsite:
    """Build a :class:`Vsite` from a JSON site configuration file.

    Relative paths inside the file are resolved against the file's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise GridError(f"{path}: cannot read site config: {exc}") from None
    base = path.parent

    def rel(key):
        value = doc.get(key)
        return (base / value) if value is not None else None

    try:
        tsi_doc = doc.get("tsi", {"kind": "subprocess"})
        if tsi_doc.get("kind", "subprocess") == "simulated":
            tsi: TsiBackend = (
                SimulatedTsi.from_file(base / tsi_doc["responses"]) if "responses" in tsi_doc else SimulatedTsi()
            )
        elif tsi_doc.get("kind", "subprocess") == "subprocess":
            tsi = SubprocessTsi()
        else:
            raise ValueError(f"unknown tsi kind {tsi_doc.get('kind')!r}")
        interpreters = {ScriptType(k): v for k, v in doc.get("interpreters", {"SH": "/bin/sh"}).items()}
        return Vsite(
            doc["name"],
            root=rel("root"),
            users=doc.get("users", {}),
            idb=IncarnationDatabase(interpreters, doc.get("packages", {})),
            resources=ResourceDescription.from_dict(doc.get("resources", {})),
            tsi=tsi,
            uspace_root=rel("uspace_root"),
            spool_root=rel("spool_root"),
            outcome_root=rel("outcome_root"),
            xspace_root=rel("xspace_root"),
            clock=clock,
        )
    except (KeyError, ValueError, TypeError, OSError) as exc:
        raise GridError(f"{path}: invalid site config: {exc!r}") from None
