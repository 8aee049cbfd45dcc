import os
import random

import pytest
from helpers import jobs
from hypothesis import given, settings
from hypothesis import strategies as st

from minigrid import ajo
from minigrid.ajo import (
    MAX_INLINE_FILE,
    AbstractJob,
    ActionGroup,
    ConditionalAction,
    CopyPortfolioToOutcome,
    ExecuteScriptTask,
    ExitStatusEquals,
    FileExists,
    ImportFile,
    IncarnateFiles,
    MakePortfolio,
    RepeatGroup,
    ResourceRequest,
    new_job,
)
from minigrid.errors import CycleDetected, DuplicateName, MalformedEncoding, SelfEdge, UnknownAction
from minigrid.samples import date_hostname_job


def test_new_job_is_empty():
    job = new_job("AJO Example", "vsiteA", "token")
    assert job.name == "AJO Example"
    assert len(job.group.actions) == 0 and len(job.group.edges) == 0
    assert ajo.validate(job) == []


def test_new_job_ids_are_distinct():
    assert new_job("a").job_id != new_job("a").job_id


def test_empty_name_rejected_by_validate():
    assert any("empty name" in v for v in ajo.validate(new_job("")))


def test_add_action_returns_id():
    job = new_job("j")
    aid = job.add(MakePortfolio("p", ["x"]))
    assert aid in job.group.actions and len(job.group) == 1
    assert job.group.edges == set()


def test_duplicate_name():
    g = ActionGroup()
    g.add(IncarnateFiles("script"))
    with pytest.raises(DuplicateName):
        g.add(IncarnateFiles("script"))


def test_nested_job_is_an_action():
    outer = new_job("outer")
    inner = new_job("inner")
    inner.add(IncarnateFiles("f", {"a": b"1"}))
    outer.add(inner)
    assert ajo.validate(outer) == []


def test_dependency_errors():
    g = ActionGroup()
    a = g.add(IncarnateFiles("a"))
    b = g.add(IncarnateFiles("b"))
    g.add_dependency(a, b)
    with pytest.raises(CycleDetected):
        g.add_dependency(b, a)
    with pytest.raises(SelfEdge):
        g.add_dependency(a, a)
    with pytest.raises(UnknownAction):
        g.add_dependency(a, "nope")
    assert g.edges == {(a, b)}


def test_example_job_chain():
    job = date_hostname_job("vsiteA", "t")
    names = {aid: a.name for aid, a in job.group.actions.items()}
    edges = {(names[p], names[s]) for p, s in job.group.edges}
    assert edges == {
        ("Script Files", "AJO Example"),
        ("Required Files", "Required Portfolio"),
        ("AJO Example", "AJO Example Task"),
        ("AJO Example Task", "Result Portfolio"),
        ("Result Portfolio", "Save Results"),
    }
    assert ajo.validate(job) == []


def test_dangling_portfolio_reference():
    job = new_job("j")
    mp = MakePortfolio("mp", ["script"])
    job.add(mp)
    job.add(ExecuteScriptTask("run", script_portfolio=mp.id))  # no edge mp -> run
    assert any("dangling portfolio reference" in v for v in ajo.validate(job))


def test_cpto_must_follow_its_portfolio():
    job = new_job("j")
    mp = MakePortfolio("mp", ["out"])
    cp = CopyPortfolioToOutcome("save", target=mp.id)
    job.add(cp)
    job.add(mp)
    job.add_dependency(cp, mp)
    assert any("dangling" in v for v in ajo.validate(job))


@pytest.mark.parametrize("path", ["/etc/passwd", "../x", "a/../../b", "", "a\\b", "C:/x"])
def test_unsafe_paths_flagged(path):
    job = new_job("j")
    job.add(IncarnateFiles("inc", {path: b""}))
    job.add(MakePortfolio("mp", [path]))
    job.add(ImportFile("imp", source="ok", dest=path))
    violations = ajo.validate(job)
    assert sum("unsafe path" in v for v in violations) == 3


def test_inline_cap():
    job = new_job("j")
    job.add(IncarnateFiles("big", {"f": b"\0" * (MAX_INLINE_FILE + 1)}))
    assert any("inline limit" in v for v in ajo.validate(job))
    job2 = new_job("j")
    job2.add(IncarnateFiles("ok", {"f": b"\0" * MAX_INLINE_FILE}))
    assert ajo.validate(job2) == []


def test_resource_violations():
    job = new_job("j")
    mp = MakePortfolio("mp", ["s"])
    job.add(mp)
    est = ExecuteScriptTask("e", script_portfolio=mp.id, resources=ResourceRequest(processors=0, memory=-1))
    job.add(est)
    job.add_dependency(mp, est)
    v = ajo.validate(job)
    assert any("processors" in x for x in v) and any("memory" in x for x in v)


def test_condition_must_reference_preceding_script():
    job = new_job("j")
    mp = MakePortfolio("mp", ["s"])
    job.add(mp)
    est = ExecuteScriptTask("e", script_portfolio=mp.id)
    job.add(est)
    job.add_dependency(mp, est)
    cond = ConditionalAction("c", condition=ExitStatusEquals(est.id, 0))
    job.add(cond)
    assert any("does not precede" in v for v in ajo.validate(job))
    job.add_dependency(est, cond)
    assert ajo.validate(job) == []


def test_repeat_needs_positive_cap():
    job = new_job("j")
    job.add(RepeatGroup("r", max_iterations=0))
    assert any("max_iterations" in v for v in ajo.validate(job))


def test_validate_never_raises_on_garbage():
    job = new_job("j")
    job.group.actions["bogus"] = "not an action"
    job.group.edges.add(("x", "y"))
    out = ajo.validate(job)
    assert out
    assert ajo.validate("nonsense") == ["not an AbstractJob"]


def test_duplicate_ids_across_nested_groups_flagged():
    job = new_job("j")
    a = IncarnateFiles("a")
    job.add(a)
    cond = ConditionalAction("c", condition=FileExists("x"))
    cond.then_group.add(IncarnateFiles("b", id=a.id))
    job.add(cond)
    assert any("more than once" in v for v in ajo.validate(job))


# -- encoding


def test_example_roundtrip_and_determinism():
    job = date_hostname_job("vsiteA", "t")
    data = ajo.encode(job)
    assert ajo.encode(job) == data
    back = ajo.decode(data)
    assert back == job
    assert ajo.encode(back) == data


def test_encoding_is_insertion_order_independent():
    def build(order):
        job = AbstractJob("j", job_id="fixed")
        acts = {n: IncarnateFiles(n, {n: n.encode()}, id=f"id-{n}") for n in "abc"}
        for n in order:
            job.add(acts[n])
        job.add_dependency("id-a", "id-c")
        return job

    assert ajo.encode(build("abc")) == ajo.encode(build("cba"))


@settings(max_examples=200, deadline=None)
@given(jobs())
def test_roundtrip_random_jobs(job):
    assert ajo.validate(job) == []
    data = ajo.encode(job)
    back = ajo.decode(data)
    assert back == job
    assert ajo.encode(back) == data


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_decode_random_bytes(data):
    try:
        ajo.decode(data)
    except MalformedEncoding:
        pass


def test_decode_corrupt_reports_position():
    data = ajo.encode(date_hostname_job())
    with pytest.raises(MalformedEncoding) as err:
        ajo.decode(data[:50])
    assert err.value.position is not None
    bad = data.replace(b'"kind":"MakePortfolio"', b'"kind":"Nope"', 1)
    with pytest.raises(MalformedEncoding) as err:
        ajo.decode(bad)
    assert err.value.path.startswith("$.actions[")


def test_decode_mutated_encodings_never_crash():
    rng = random.Random(7)
    data = bytearray(ajo.encode(date_hostname_job()))
    for _ in range(500):
        m = bytearray(data)
        for _ in range(rng.randint(1, 4)):
            m[rng.randrange(len(m))] = rng.randrange(256)
        try:
            ajo.decode(bytes(m))
        except MalformedEncoding:
            pass


def test_decode_rejects_cycle_in_document():
    doc = ajo.job_to_dict(date_hostname_job())
    doc["edges"].append(["Save Results", "Script Files"])
    doc["edges"].append(["AJO Example", "Script Files"])
    with pytest.raises(MalformedEncoding):
        ajo.decode(ajo.dumps_canonical(doc))


def test_safe_relpath():
    assert ajo.is_safe_relpath("a/b.txt")
    assert ajo.is_safe_relpath("./a")
    for bad in ("..", "/a", "a/../..", "", None, "a\x00b"):
        assert not ajo.is_safe_relpath(bad)
    # normalization confirms containment for accepted paths
    root = "/uspace/root"
    for p in ("a/b", "./x/y", "z"):
        assert os.path.normpath(os.path.join(root, p)).startswith(root + "/")
