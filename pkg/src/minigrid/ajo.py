"""Abstract job objects: the work-specification tree and its wire encoding.

An :class:`AbstractJob` owns an :class:`ActionGroup`, a DAG of actions.  Jobs
are themselves actions, so they nest.  Construction is eager about graph
shape (duplicate names, self edges and cycles are rejected as they happen);
everything else is checked by :func:`validate`, which collects violations
instead of raising.

The canonical encoding is compact JSON with sorted keys, actions ordered by
name and byte contents in base64, so equal jobs always encode to identical
bytes.
"""

from __future__ import annotations

import base64
import binascii
import json
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import PurePosixPath
from typing import Any, Iterator, Union

from .errors import (
    CycleDetected,
    DuplicateName,
    MalformedEncoding,
    ModelError,
    SelfEdge,
    UnknownAction,
)

MAX_INLINE_FILE = 4 * 1024 * 1024

ActionId = str


def new_action_id() -> ActionId:
    return uuid.uuid4().hex[:12]


def new_job_id() -> str:
    return "local-" + uuid.uuid4().hex[:12]


def is_safe_relpath(path: Any) -> bool:
    """True if ``path`` is a non-empty relative path that stays under its root."""
    if not isinstance(path, str) or not path or "\x00" in path or "\\" in path:
        return False
    if path.startswith("/") or (len(path) > 1 and path[1] == ":"):
        return False
    parts = PurePosixPath(path).parts
    return bool(parts) and ".." not in parts


class ScriptType(str, Enum):
    SH = "SH"
    CSH = "CSH"


@dataclass
class ResourceRequest:
    processors: int = 1
    memory: int = 0  # MiB
    wall_time: float = 0  # seconds, 0 = unlimited
    software_packages: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        self.software_packages = frozenset(self.software_packages)

    def violations(self) -> list[str]:
        out = []
        if not isinstance(self.processors, int) or self.processors < 1:
            out.append("processors must be >= 1")
        if self.memory < 0:
            out.append("memory must be >= 0")
        if self.wall_time < 0:
            out.append("wall_time must be >= 0")
        return out


# -- conditions ---------------------------------------------------------------


@dataclass(frozen=True)
class ExitStatusEquals:
    action: ActionId
    code: int


@dataclass(frozen=True)
class FileExists:
    uspace_path: str


@dataclass(frozen=True)
class IterationLessThan:
    bound: int


Condition = Union[ExitStatusEquals, FileExists, IterationLessThan]


# -- actions ------------------------------------------------------------------


@dataclass
class AbstractAction:
    name: str
    id: ActionId | None = field(default=None, kw_only=True)


@dataclass
class ExecuteScriptTask(AbstractAction):
    script_portfolio: ActionId = ""
    script_type: ScriptType = ScriptType.SH
    resources: ResourceRequest = field(default_factory=ResourceRequest)


@dataclass
class IncarnateFiles(AbstractAction):
    files: dict[str, bytes] = field(default_factory=dict)

    def add_file(self, file_name: str, content: bytes) -> None:
        self.files[file_name] = bytes(content)


@dataclass
class MakePortfolio(AbstractAction):
    file_names: list[str] = field(default_factory=list)

    def add_file(self, file_name: str) -> None:
        self.file_names.append(file_name)


@dataclass
class CopyPortfolioToOutcome(AbstractAction):
    target: ActionId = ""


@dataclass
class ImportFile(AbstractAction):
    source: str = ""  # site store path
    dest: str = ""  # uspace path


@dataclass
class ExportFile(AbstractAction):
    source: str = ""  # uspace path
    dest: str = ""  # site store path


@dataclass
class SpoolFile(AbstractAction):
    source: str = ""


@dataclass
class KillService(AbstractAction):
    target_job: str = ""


@dataclass
class StatusService(AbstractAction):
    target_job: str = ""


@dataclass
class ConditionalAction(AbstractAction):
    condition: Condition = IterationLessThan(0)
    then_group: ActionGroup = field(default_factory=lambda: ActionGroup())
    else_group: ActionGroup = field(default_factory=lambda: ActionGroup())


@dataclass
class RepeatGroup(AbstractAction):
    body: ActionGroup = field(default_factory=lambda: ActionGroup())
    condition: Condition = IterationLessThan(1)
    max_iterations: int = 1


class ActionGroup:
    """A DAG of actions keyed by generated :data:`ActionId`."""

    def __init__(self) -> None:
        self.actions: dict[ActionId, AbstractAction] = {}
        self.edges: set[tuple[ActionId, ActionId]] = set()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ActionGroup):
            return NotImplemented
        return self.actions == other.actions and self.edges == other.edges

    def __repr__(self) -> str:
        return f"ActionGroup({len(self.actions)} actions, {len(self.edges)} edges)"

    def __len__(self) -> int:
        return len(self.actions)

    def add(self, action: AbstractAction) -> ActionId:
        if any(a.name == action.name for a in self.actions.values()):
            raise DuplicateName(f"an action named {action.name!r} already exists")
        if action.id is None:
            action.id = new_action_id()
        elif action.id in self.actions:
            raise ModelError(f"action id {action.id!r} already in use")
        self.actions[action.id] = action
        return action.id

    def _resolve(self, ref: ActionId | AbstractAction) -> ActionId:
        aid = ref.id if isinstance(ref, AbstractAction) else ref
        if aid not in self.actions:
            raise UnknownAction(f"no action {aid!r} in this group")
        return aid  # type: ignore[return-value]

    def add_dependency(self, pred: ActionId | AbstractAction, succ: ActionId | AbstractAction) -> None:
        p, s = self._resolve(pred), self._resolve(succ)
        if p == s:
            raise SelfEdge(f"{self.actions[p].name!r} cannot depend on itself")
        if p in self.descendants(s):
            raise CycleDetected(f"edge {self.actions[p].name!r} -> {self.actions[s].name!r} closes a cycle")
        self.edges.add((p, s))

    def by_name(self, name: str) -> AbstractAction:
        for action in self.actions.values():
            if action.name == name:
                return action
        raise UnknownAction(name)

    def predecessors(self, aid: ActionId) -> set[ActionId]:
        return {p for p, s in self.edges if s == aid}

    def successors(self, aid: ActionId) -> set[ActionId]:
        return {s for p, s in self.edges if p == aid}

    def descendants(self, aid: ActionId) -> set[ActionId]:
        """``aid`` together with everything reachable from it."""
        succ: dict[ActionId, list[ActionId]] = {}
        for p, s in self.edges:
            succ.setdefault(p, []).append(s)
        seen = {aid}
        stack = [aid]
        while stack:
            for nxt in succ.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def ancestors(self, aid: ActionId) -> set[ActionId]:
        """Strict transitive predecessors of ``aid``."""
        pred: dict[ActionId, list[ActionId]] = {}
        for p, s in self.edges:
            pred.setdefault(s, []).append(p)
        seen: set[ActionId] = set()
        stack = [aid]
        while stack:
            for nxt in pred.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def topological_order(self) -> list[ActionId]:
        """Kahn's algorithm; ties broken by action name.  Raises on cycles."""
        indeg = {aid: 0 for aid in self.actions}
        for _, s in self.edges:
            indeg[s] += 1
        ready = sorted((a for a, d in indeg.items() if d == 0), key=lambda a: self.actions[a].name)
        order = []
        while ready:
            aid = ready.pop(0)
            order.append(aid)
            for s in sorted(self.successors(aid), key=lambda a: self.actions[a].name):
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
            ready.sort(key=lambda a: self.actions[a].name)
        if len(order) != len(self.actions):
            raise CycleDetected("action graph contains a cycle")
        return order

    def depths(self) -> dict[ActionId, int]:
        """Longest-path depth from the sources of the DAG."""
        depth: dict[ActionId, int] = {}
        for aid in self.topological_order():
            preds = self.predecessors(aid)
            depth[aid] = 1 + max((depth[p] for p in preds), default=-1)
        return depth


@dataclass(eq=False)
class AbstractJob(AbstractAction):
    """An action group that can be consigned to a remote site."""

    group: ActionGroup = field(default_factory=ActionGroup)
    job_id: str = field(default_factory=new_job_id)
    target_vsite: str = ""
    identity: str = ""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AbstractJob):
            return NotImplemented
        return (
            self.name == other.name
            and self.id == other.id
            and self.job_id == other.job_id
            and self.target_vsite == other.target_vsite
            and self.identity == other.identity
            and self.group == other.group
        )

    def add(self, action: AbstractAction) -> ActionId:
        return self.group.add(action)

    def add_dependency(self, pred: ActionId | AbstractAction, succ: ActionId | AbstractAction) -> None:
        self.group.add_dependency(pred, succ)


def new_job(name: str, target_vsite: str = "", identity: str = "") -> AbstractJob:
    return AbstractJob(name, target_vsite=target_vsite, identity=identity)


def add_action(group: ActionGroup, action: AbstractAction) -> ActionId:
    return group.add(action)


def add_dependency(group: ActionGroup, pred: ActionId, succ: ActionId) -> None:
    group.add_dependency(pred, succ)


def subgroups(action: AbstractAction) -> list[tuple[str, ActionGroup]]:
    """Child groups owned by a composite action, labelled for qualified names."""
    if isinstance(action, ConditionalAction):
        return [("then", action.then_group), ("else", action.else_group)]
    if isinstance(action, RepeatGroup):
        return [("body", action.body)]
    if isinstance(action, AbstractJob):
        return [("", action.group)]
    return []


def walk(group: ActionGroup) -> Iterator[tuple[ActionGroup, AbstractAction]]:
    """Every action in ``group`` and all nested groups, with its owning group."""
    for action in group.actions.values():
        yield group, action
        for _, child in subgroups(action):
            yield from walk(child)


# -- validation ---------------------------------------------------------------


def validate(job: AbstractJob) -> list[str]:
    """Return a list of human-readable violations; empty means the job is valid.

    Never raises, whatever shape ``job`` has.
    """
    try:
        out: list[str] = []
        if not isinstance(job, AbstractJob):
            return ["not an AbstractJob"]
        if not isinstance(job.name, str) or not job.name:
            out.append("job: empty name")
        seen_ids: set[str] = set()
        _validate_group(job.group, job.name or "<job>", out, seen_ids)
        return out
    except Exception as exc:  # malformed objects of arbitrary shape
        return [f"malformed job: {exc!r}"]


def _validate_group(group: ActionGroup, where: str, out: list[str], seen_ids: set[str]) -> None:
    names: set[str] = set()
    for aid, action in group.actions.items():
        label = f"{where}/{action.name}"
        if not isinstance(action, AbstractAction):
            out.append(f"{where}: {aid!r} is not an action")
            continue
        if not isinstance(action.name, str) or not action.name:
            out.append(f"{where}: action {aid!r} has an empty name")
        elif action.name in names:
            out.append(f"{where}: duplicate action name {action.name!r}")
        names.add(action.name)
        if action.id != aid:
            out.append(f"{label}: id mismatch")
        if aid in seen_ids:
            out.append(f"{label}: action id {aid!r} used more than once in the job")
        seen_ids.add(aid)

    for p, s in group.edges:
        if p not in group.actions or s not in group.actions:
            out.append(f"{where}: edge ({p!r}, {s!r}) references an unknown action")
        elif p == s:
            out.append(f"{where}: self edge on {group.actions[p].name!r}")
    try:
        group.topological_order()
        acyclic = True
    except (CycleDetected, KeyError):
        out.append(f"{where}: dependency graph is not acyclic")
        acyclic = False

    for aid, action in group.actions.items():
        if isinstance(action, AbstractAction):
            _validate_action(group, aid, action, f"{where}/{action.name}", out, seen_ids, acyclic)


def _preceding(group: ActionGroup, aid: ActionId, ref: ActionId, acyclic: bool) -> bool:
    return acyclic and ref in group.actions and ref in group.ancestors(aid)


def _validate_action(
    group: ActionGroup,
    aid: ActionId,
    action: AbstractAction,
    label: str,
    out: list[str],
    seen_ids: set[str],
    acyclic: bool,
) -> None:
    if isinstance(action, ExecuteScriptTask):
        ref = group.actions.get(action.script_portfolio)
        if not isinstance(ref, MakePortfolio) or not _preceding(group, aid, action.script_portfolio, acyclic):
            out.append(f"{label}: dangling portfolio reference")
        elif not ref.file_names:
            out.append(f"{label}: script portfolio is empty")
        if not isinstance(action.script_type, ScriptType):
            out.append(f"{label}: unknown script type {action.script_type!r}")
        out.extend(f"{label}: {v}" for v in action.resources.violations())
    elif isinstance(action, CopyPortfolioToOutcome):
        ref = group.actions.get(action.target)
        if not isinstance(ref, MakePortfolio) or not _preceding(group, aid, action.target, acyclic):
            out.append(f"{label}: dangling portfolio reference")
    elif isinstance(action, IncarnateFiles):
        for fname, content in action.files.items():
            if not is_safe_relpath(fname):
                out.append(f"{label}: unsafe path {fname!r}")
            if not isinstance(content, (bytes, bytearray)):
                out.append(f"{label}: content of {fname!r} is not bytes")
            elif len(content) > MAX_INLINE_FILE:
                out.append(f"{label}: {fname!r} exceeds the {MAX_INLINE_FILE} byte inline limit")
    elif isinstance(action, MakePortfolio):
        for fname in action.file_names:
            if not is_safe_relpath(fname):
                out.append(f"{label}: unsafe path {fname!r}")
    elif isinstance(action, (ImportFile, ExportFile)):
        for p in (action.source, action.dest):
            if not is_safe_relpath(p):
                out.append(f"{label}: unsafe path {p!r}")
    elif isinstance(action, SpoolFile):
        if not is_safe_relpath(action.source):
            out.append(f"{label}: unsafe path {action.source!r}")
    elif isinstance(action, (KillService, StatusService)):
        if not isinstance(action.target_job, str) or not action.target_job:
            out.append(f"{label}: empty target job")
    elif isinstance(action, ConditionalAction):
        _validate_condition(group, aid, action.condition, None, label, out, acyclic)
        _validate_group(action.then_group, f"{label}/then", out, seen_ids)
        _validate_group(action.else_group, f"{label}/else", out, seen_ids)
    elif isinstance(action, RepeatGroup):
        if not isinstance(action.max_iterations, int) or action.max_iterations < 1:
            out.append(f"{label}: max_iterations must be >= 1")
        _validate_condition(group, aid, action.condition, action.body, label, out, acyclic)
        _validate_group(action.body, f"{label}/body", out, seen_ids)
    elif isinstance(action, AbstractJob):
        _validate_group(action.group, label, out, seen_ids)
    else:
        out.append(f"{label}: unsupported action type {type(action).__name__}")


def _validate_condition(
    group: ActionGroup,
    aid: ActionId,
    cond: Any,
    body: ActionGroup | None,
    label: str,
    out: list[str],
    acyclic: bool,
) -> None:
    if isinstance(cond, ExitStatusEquals):
        ref = group.actions.get(cond.action)
        if ref is not None and _preceding(group, aid, cond.action, acyclic):
            pass
        elif body is not None and cond.action in body.actions:
            ref = body.actions[cond.action]
        else:
            out.append(f"{label}: condition references an action that does not precede it")
            return
        if not isinstance(ref, ExecuteScriptTask):
            out.append(f"{label}: exit status condition must reference a script task")
    elif isinstance(cond, FileExists):
        if not is_safe_relpath(cond.uspace_path):
            out.append(f"{label}: unsafe path {cond.uspace_path!r}")
    elif isinstance(cond, IterationLessThan):
        if not isinstance(cond.bound, int) or cond.bound < 0:
            out.append(f"{label}: iteration bound must be >= 0")
    else:
        out.append(f"{label}: unknown condition {cond!r}")


# -- encoding -----------------------------------------------------------------


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def dumps_canonical(doc: Any) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


def condition_to_dict(cond: Condition) -> dict[str, Any]:
    if isinstance(cond, ExitStatusEquals):
        return {"kind": "ExitStatusEquals", "action": cond.action, "code": cond.code}
    if isinstance(cond, FileExists):
        return {"kind": "FileExists", "path": cond.uspace_path}
    return {"kind": "IterationLessThan", "bound": cond.bound}


def group_to_dict(group: ActionGroup) -> dict[str, Any]:
    actions = sorted(group.actions.values(), key=lambda a: a.name)
    name = {aid: a.name for aid, a in group.actions.items()}
    edges = sorted([name[p], name[s]] for p, s in group.edges)
    return {"actions": [action_to_dict(a) for a in actions], "edges": edges}


def action_to_dict(action: AbstractAction) -> dict[str, Any]:
    d: dict[str, Any] = {"kind": type(action).__name__, "id": action.id, "name": action.name}
    if isinstance(action, ExecuteScriptTask):
        r = action.resources
        d.update(
            script_portfolio=action.script_portfolio,
            script_type=action.script_type.value,
            resources={
                "processors": r.processors,
                "memory": r.memory,
                "wall_time": r.wall_time,
                "software_packages": sorted(r.software_packages),
            },
        )
    elif isinstance(action, IncarnateFiles):
        d["files"] = {k: _b64(v) for k, v in action.files.items()}
    elif isinstance(action, MakePortfolio):
        d["file_names"] = list(action.file_names)
    elif isinstance(action, CopyPortfolioToOutcome):
        d["target"] = action.target
    elif isinstance(action, (ImportFile, ExportFile)):
        d.update(source=action.source, dest=action.dest)
    elif isinstance(action, SpoolFile):
        d["source"] = action.source
    elif isinstance(action, (KillService, StatusService)):
        d["target_job"] = action.target_job
    elif isinstance(action, ConditionalAction):
        d.update(
            condition=condition_to_dict(action.condition),
            then_group=group_to_dict(action.then_group),
            else_group=group_to_dict(action.else_group),
        )
    elif isinstance(action, RepeatGroup):
        d.update(
            condition=condition_to_dict(action.condition),
            body=group_to_dict(action.body),
            max_iterations=action.max_iterations,
        )
    elif isinstance(action, AbstractJob):
        d.update(_job_fields(action))
    else:
        raise ModelError(f"cannot encode {type(action).__name__}")
    return d


def _job_fields(job: AbstractJob) -> dict[str, Any]:
    g = group_to_dict(job.group)
    return {
        "job_id": job.job_id,
        "vsite": job.target_vsite,
        "identity": job.identity,
        "actions": g["actions"],
        "edges": g["edges"],
    }


def job_to_dict(job: AbstractJob) -> dict[str, Any]:
    d = _job_fields(job)
    d["name"] = job.name
    if job.id is not None:
        d["id"] = job.id
    return d


def encode(job: AbstractJob) -> bytes:
    return dumps_canonical(job_to_dict(job))


class _Reader:
    """Typed field access over decoded JSON with path-carrying errors."""

    def __init__(self, doc: Any, path: str):
        if not isinstance(doc, dict):
            raise MalformedEncoding("expected an object", path=path)
        self.doc = doc
        self.path = path

    def get(self, key: str, typ: type | tuple[type, ...], default: Any = ...) -> Any:
        if key not in self.doc:
            if default is ...:
                raise MalformedEncoding(f"missing field {key!r}", path=self.path)
            return default
        value = self.doc[key]
        if typ in (int, float, (int, float)) and isinstance(value, bool):
            raise MalformedEncoding(f"field {key!r} has the wrong type", path=f"{self.path}.{key}")
        if not isinstance(value, typ):
            raise MalformedEncoding(f"field {key!r} has the wrong type", path=f"{self.path}.{key}")
        return value

    def sub(self, key: str) -> _Reader:
        return _Reader(self.get(key, dict), f"{self.path}.{key}")


def _unb64(text: Any, path: str) -> bytes:
    if not isinstance(text, str):
        raise MalformedEncoding("expected base64 text", path=path)
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise MalformedEncoding(f"bad base64: {exc}", path=path) from None


def condition_from_dict(r: _Reader) -> Condition:
    kind = r.get("kind", str)
    if kind == "ExitStatusEquals":
        return ExitStatusEquals(r.get("action", str), r.get("code", int))
    if kind == "FileExists":
        return FileExists(r.get("path", str))
    if kind == "IterationLessThan":
        return IterationLessThan(r.get("bound", int))
    raise MalformedEncoding(f"unknown condition kind {kind!r}", path=r.path)


def group_from_dict(r: _Reader, actions_key: str = "actions") -> ActionGroup:
    group = ActionGroup()
    records = r.get(actions_key, list)
    for i, rec in enumerate(records):
        action = action_from_dict(_Reader(rec, f"{r.path}.{actions_key}[{i}]"))
        try:
            group.add(action)
        except ModelError as exc:
            raise MalformedEncoding(str(exc), path=f"{r.path}.{actions_key}[{i}]") from None
    ids = {a.name: aid for aid, a in group.actions.items()}
    for i, edge in enumerate(r.get("edges", list)):
        where = f"{r.path}.edges[{i}]"
        if not (isinstance(edge, list) and len(edge) == 2 and all(isinstance(e, str) for e in edge)):
            raise MalformedEncoding("edge must be a [pred, succ] name pair", path=where)
        if edge[0] not in ids or edge[1] not in ids:
            raise MalformedEncoding("edge references an unknown action", path=where)
        try:
            group.add_dependency(ids[edge[0]], ids[edge[1]])
        except ModelError as exc:
            raise MalformedEncoding(str(exc), path=where) from None
    return group


def action_from_dict(r: _Reader) -> AbstractAction:
    kind = r.get("kind", str)
    name = r.get("name", str)
    aid = r.get("id", str)
    if kind == "ExecuteScriptTask":
        res = r.sub("resources")
        pkgs = res.get("software_packages", list)
        if not all(isinstance(p, str) for p in pkgs):
            raise MalformedEncoding("package names must be strings", path=res.path)
        try:
            stype = ScriptType(r.get("script_type", str))
        except ValueError:
            raise MalformedEncoding("unknown script type", path=f"{r.path}.script_type") from None
        return ExecuteScriptTask(
            name,
            script_portfolio=r.get("script_portfolio", str),
            script_type=stype,
            resources=ResourceRequest(
                processors=res.get("processors", int),
                memory=res.get("memory", (int, float)),
                wall_time=res.get("wall_time", (int, float)),
                software_packages=frozenset(pkgs),
            ),
            id=aid,
        )
    if kind == "IncarnateFiles":
        files = r.get("files", dict)
        return IncarnateFiles(name, files={k: _unb64(v, f"{r.path}.files.{k}") for k, v in files.items()}, id=aid)
    if kind == "MakePortfolio":
        names = r.get("file_names", list)
        if not all(isinstance(n, str) for n in names):
            raise MalformedEncoding("file names must be strings", path=f"{r.path}.file_names")
        return MakePortfolio(name, file_names=list(names), id=aid)
    if kind == "CopyPortfolioToOutcome":
        return CopyPortfolioToOutcome(name, target=r.get("target", str), id=aid)
    if kind == "ImportFile":
        return ImportFile(name, source=r.get("source", str), dest=r.get("dest", str), id=aid)
    if kind == "ExportFile":
        return ExportFile(name, source=r.get("source", str), dest=r.get("dest", str), id=aid)
    if kind == "SpoolFile":
        return SpoolFile(name, source=r.get("source", str), id=aid)
    if kind == "KillService":
        return KillService(name, target_job=r.get("target_job", str), id=aid)
    if kind == "StatusService":
        return StatusService(name, target_job=r.get("target_job", str), id=aid)
    if kind == "ConditionalAction":
        return ConditionalAction(
            name,
            condition=condition_from_dict(r.sub("condition")),
            then_group=group_from_dict(r.sub("then_group")),
            else_group=group_from_dict(r.sub("else_group")),
            id=aid,
        )
    if kind == "RepeatGroup":
        return RepeatGroup(
            name,
            body=group_from_dict(r.sub("body")),
            condition=condition_from_dict(r.sub("condition")),
            max_iterations=r.get("max_iterations", int),
            id=aid,
        )
    if kind == "AbstractJob":
        return _job_from_reader(r, name, aid)
    raise MalformedEncoding(f"unknown action kind {kind!r}", path=f"{r.path}.kind")


def _job_from_reader(r: _Reader, name: str, aid: str | None) -> AbstractJob:
    return AbstractJob(
        name,
        group=group_from_dict(r),
        job_id=r.get("job_id", str),
        target_vsite=r.get("vsite", str),
        identity=r.get("identity", str),
        id=aid,
    )


def load_json(data: bytes) -> Any:
    """Parse JSON bytes, converting every failure into :class:`MalformedEncoding`."""
    if not isinstance(data, (bytes, bytearray)):
        raise MalformedEncoding("expected bytes")
    try:
        text = bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedEncoding(f"invalid UTF-8: {exc.reason}", position=exc.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedEncoding(
            f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", position=exc.pos
        ) from None
    except (RecursionError, ValueError) as exc:
        raise MalformedEncoding(f"invalid JSON: {exc}") from None


def decode(data: bytes) -> AbstractJob:
    doc = load_json(data)
    try:
        r = _Reader(doc, "$")
        return _job_from_reader(r, r.get("name", str), r.get("id", str, None))
    except RecursionError:
        raise MalformedEncoding("document nested too deeply") from None
