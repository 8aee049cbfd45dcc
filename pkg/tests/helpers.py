"""Test doubles, random generators and the brute-force DAG oracle."""

from __future__ import annotations

import random
import threading
import time

from hypothesis import strategies as st

from minigrid.ajo import (
    AbstractJob,
    ActionGroup,
    ConditionalAction,
    CopyPortfolioToOutcome,
    ExecuteScriptTask,
    ExitStatusEquals,
    ExportFile,
    FileExists,
    ImportFile,
    IncarnateFiles,
    IterationLessThan,
    KillService,
    MakePortfolio,
    RepeatGroup,
    ResourceRequest,
    ScriptType,
    SpoolFile,
    StatusService,
)
from minigrid.outcome import OutcomeRecord
from minigrid.states import CompletionCode


class FakeExecutor:
    """Succeeds unless the action's base name is in ``fail``; thread-safe bookkeeping."""

    def __init__(self, fail=(), delay=0.0, files=(), exit_codes=None, raise_on=()):
        self.fail = set(fail)
        self.delay = delay
        self.files = set(files)
        self.exit_codes = dict(exit_codes or {})
        self.raise_on = set(raise_on)
        self.calls: list[str] = []
        self._lock = threading.Lock()
        self.running = 0
        self.max_running = 0

    def file_exists(self, path):
        return path in self.files

    def execute(self, action, context):
        with self._lock:
            self.calls.append(context.qualname)
            self.running += 1
            self.max_running = max(self.max_running, self.running)
        try:
            if self.delay:
                deadline = time.monotonic() + self.delay
                while time.monotonic() < deadline and not context.cancelled.is_set():
                    time.sleep(0.001)
            base = action.name.split("[")[0]
            if base in self.raise_on:
                raise RuntimeError("boom")
            failed = base in self.fail
            code = CompletionCode.NOT_SUCCESSFUL if failed else CompletionCode.SUCCESSFUL
            exit_code = self.exit_codes.get(base, 1 if failed else 0)
            return OutcomeRecord(context.qualname, code, exit_code=exit_code)
        finally:
            with self._lock:
                self.running -= 1


def random_dag(rng: random.Random, n: int, density: float = 0.3) -> tuple[ActionGroup, dict[str, str]]:
    """Random DAG over actions n0..n{n-1}; edges only go forward in a shuffled order."""
    group = ActionGroup()
    order = list(range(n))
    rng.shuffle(order)
    ids = {}
    for i in range(n):
        ids[f"n{i}"] = group.add(IncarnateFiles(f"n{i}"))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < density:
                group.add_dependency(ids[f"n{order[a]}"], ids[f"n{order[b]}"])
    return group, ids


def fixpoint_oracle(group: ActionGroup, failing: set[str]) -> dict[str, str]:
    """An action runs iff all predecessors ran and succeeded; iterate to a fixpoint."""
    names = {aid: a.name for aid, a in group.actions.items()}
    preds = {aid: [p for p, s in group.edges if s == aid] for aid in group.actions}
    result: dict[str, str] = {}
    changed = True
    while changed:
        changed = False
        for aid in group.actions:
            if aid in result:
                continue
            if all(result.get(p) == "SUCCESSFUL" for p in preds[aid]):
                result[aid] = "NOT_SUCCESSFUL" if names[aid] in failing else "SUCCESSFUL"
                changed = True
    return {names[aid]: result.get(aid, "NEVER_RUN") for aid in group.actions}


# -- hypothesis strategies for whole jobs ------------------------------------------

_names = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789 _-", min_size=1, max_size=10)
_relpath = st.lists(
    st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789._-", min_size=1, max_size=8).filter(
        lambda s: s not in (".", "..")
    ),
    min_size=1,
    max_size=3,
).map("/".join)


@st.composite
def groups(draw, depth: int = 0) -> ActionGroup:
    group = ActionGroup()
    n = draw(st.integers(0, 6 if depth == 0 else 3))
    names = draw(st.lists(_names, min_size=n, max_size=n, unique=True))
    portfolios = []
    scripts = []
    for name in names:
        kinds = ["inc", "mp", "imp", "exp", "spool", "svc"]
        if portfolios:
            kinds += ["est", "cpto"]
        if depth < 2:
            kinds += ["cond", "repeat", "job"]
        kind = draw(st.sampled_from(kinds))
        if kind == "inc":
            files = draw(st.dictionaries(_relpath, st.binary(max_size=40), max_size=3))
            action = IncarnateFiles(name, files=files)
        elif kind == "mp":
            action = MakePortfolio(name, file_names=draw(st.lists(_relpath, min_size=1, max_size=3)))
        elif kind == "imp":
            action = ImportFile(name, source=draw(_relpath), dest=draw(_relpath))
        elif kind == "exp":
            action = ExportFile(name, source=draw(_relpath), dest=draw(_relpath))
        elif kind == "spool":
            action = SpoolFile(name, source=draw(_relpath))
        elif kind == "svc":
            cls = draw(st.sampled_from([KillService, StatusService]))
            action = cls(name, target_job=draw(_names))
        elif kind == "est":
            pf = draw(st.sampled_from(portfolios))
            action = ExecuteScriptTask(
                name,
                script_portfolio=pf,
                script_type=draw(st.sampled_from(list(ScriptType))),
                resources=ResourceRequest(
                    processors=draw(st.integers(1, 64)),
                    memory=draw(st.integers(0, 4096)),
                    wall_time=draw(st.integers(0, 3600)),
                    software_packages=frozenset(draw(st.lists(_names, max_size=2))),
                ),
            )
        elif kind == "cpto":
            action = CopyPortfolioToOutcome(name, target=draw(st.sampled_from(portfolios)))
        elif kind == "cond":
            if scripts and draw(st.booleans()):
                cond = ExitStatusEquals(draw(st.sampled_from(scripts)), draw(st.integers(-3, 3)))
            else:
                cond = draw(
                    st.one_of(
                        st.builds(FileExists, _relpath),
                        st.builds(IterationLessThan, st.integers(0, 4)),
                    )
                )
            action = ConditionalAction(
                name,
                condition=cond,
                then_group=draw(groups(depth + 1)),
                else_group=draw(groups(depth + 1)),
            )
        elif kind == "repeat":
            action = RepeatGroup(
                name,
                body=draw(groups(depth + 1)),
                condition=IterationLessThan(draw(st.integers(0, 4))),
                max_iterations=draw(st.integers(1, 5)),
            )
        else:
            action = AbstractJob(name, group=draw(groups(depth + 1)), target_vsite="v", identity="t")
        aid = group.add(action)
        # references must be preceded: wire every earlier portfolio/script into later actions
        if kind in ("est", "cpto"):
            ref = action.script_portfolio if kind == "est" else action.target
            group.add_dependency(ref, aid)
        if kind == "cond" and isinstance(action.condition, ExitStatusEquals):
            group.add_dependency(action.condition.action, aid)
        if kind == "mp":
            portfolios.append(aid)
        if kind == "est":
            scripts.append(aid)
    ids = list(group.actions)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if draw(st.integers(0, 4)) == 0 and (a, b) not in group.edges:
                group.add_dependency(a, b)
    return group


@st.composite
def jobs(draw) -> AbstractJob:
    return AbstractJob(
        draw(_names),
        group=draw(groups()),
        target_vsite=draw(_names),
        identity=draw(_names),
    )
