import io
import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest
from test_gateway import chain_job

from minigrid.ajo import decode, encode
from minigrid.cli import main
from minigrid.gateway import GatewayClient
from minigrid.outcome import Outcome
from minigrid.samples import RESULT_SCRIPT
from minigrid.states import ActionStatus as S
from minigrid.tsi import script_hash


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def write_testbed(root: Path, names=("vsiteA", "vsiteB"), tsi=None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for n in names:
        doc = {
            "name": n,
            "root": n,
            "users": {"tok": "alice"},
            "interpreters": {"SH": "/bin/sh", "CSH": "/bin/sh"},
            "resources": {"max_processors": 2, "max_memory": 512, "max_wall_time": 600},
        }
        if tsi:
            (root / f"{n}-tsi.json").write_text(json.dumps(tsi))
            doc["tsi"] = {"kind": "simulated", "responses": f"{n}-tsi.json"}
        (root / f"{n}.json").write_text(json.dumps(doc))
    cfg = root / "testbed.json"
    cfg.write_text(
        json.dumps({"host": "127.0.0.1", "port": 0, "parallelism": 2, "vsites": [f"{n}.json" for n in names]})
    )
    return cfg


class Served:
    """``minigrid serve`` in a child process."""

    def __init__(self, cfg: Path):
        env = dict(os.environ, PYTHONUNBUFFERED="1")
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "minigrid", "serve", "-c", str(cfg)],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            env=env,
        )
        line = self.proc.stdout.readline()
        assert line.startswith("gateway listening on "), line + self.proc.stderr.read()
        self.address = line.split()[3]

    def stop(self, sig=signal.SIGINT, timeout=30) -> tuple[int, str]:
        self.proc.send_signal(sig)
        out, _ = self.proc.communicate(timeout=timeout)
        return self.proc.returncode, out


@pytest.fixture
def served(tmp_path):
    s = Served(write_testbed(tmp_path / "bed"))
    yield s
    if s.proc.poll() is None:
        s.stop()


def test_serve_and_sites(served):
    code, out, _ = run_cli("sites", "-g", served.address)
    assert code == 0 and out.split() == ["vsiteA", "vsiteB"]


def test_serve_bad_config_names_file(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{")
    proc = subprocess.run([sys.executable, "-m", "minigrid", "serve", "-c", str(bad)], capture_output=True, text=True)
    assert proc.returncode != 0 and "broken.json" in proc.stderr
    code, _, err = run_cli("serve", "-c", str(tmp_path / "missing.json"))
    assert code != 0 and "missing.json" in err


def test_submit_example_sync(served, tmp_path):
    ajo = tmp_path / "job.ajo"
    assert run_cli("example", "--token", "tok", "--script-type", "CSH", "-o", str(ajo))[0] == 0
    code, out, _ = run_cli("submit", str(ajo), "--sync", "-g", served.address)
    assert code == 0
    lines = out.splitlines()
    assert "AJO Example Task\tDONE(SUCCESSFUL)" in lines
    assert lines[-1] == "job vsiteA-1\tDONE(SUCCESSFUL)"


def test_async_submit_status_outcome(served, tmp_path):
    ajo = tmp_path / "job.ajo"
    run_cli("example", "--token", "tok", "-o", str(ajo))
    code, out, _ = run_cli("submit", str(ajo), "-g", served.address)
    job_id = out.strip()
    assert code == 0 and job_id.startswith("vsiteA-")
    with GatewayClient(served.address) as c:
        c.wait(job_id)
    code, out, _ = run_cli("status", job_id, "-g", served.address)
    assert code == 0 and out.splitlines()[-1] == f"job {job_id}\tDONE(SUCCESSFUL)"
    code, out, _ = run_cli("outcome", job_id, "-o", str(tmp_path / "res"), "-g", served.address)
    assert code == 0
    assert (tmp_path / "res" / "actions" / "AJO_Example_Task" / "stdout").read_bytes().count(b"\n") >= 2
    saved = list((tmp_path / "res" / "files").rglob("result.txt"))
    assert len(saved) == 1


def test_unknown_job(served):
    code, _, err = run_cli("status", "vsiteA-404", "-g", served.address)
    assert code != 0 and "unknown job" in err


def test_kill_then_outcome_partial(served, tmp_path):
    ajo = tmp_path / "chain.ajo"
    job = chain_job()
    job.target_vsite = "vsiteA"
    ajo.write_bytes(encode(job))
    _, out, _ = run_cli("submit", str(ajo), "-g", served.address)
    job_id = out.strip()
    with GatewayClient(served.address) as c:
        deadline = time.monotonic() + 20
        while c.statuses(job_id).get("two") is not S.EXECUTING:
            assert time.monotonic() < deadline
            time.sleep(0.02)
    code, out, _ = run_cli("kill", job_id, "-g", served.address)
    assert code == 0 and "two\tDONE(NOT_SUCCESSFUL)" in out and "three\tDONE(NEVER_RUN)" in out
    code, out, _ = run_cli("outcome", job_id, "-o", str(tmp_path / "partial"), "-g", served.address)
    assert code == 1  # the job did not succeed
    assert (tmp_path / "partial" / "actions" / "run" / "stdout").read_bytes() == b"one\n"


def test_sigint_kills_active_job(tmp_path):
    bed = tmp_path / "bed"
    served = Served(write_testbed(bed, names=("vsiteA",)))
    job = chain_job()
    job.target_vsite = "vsiteA"
    with GatewayClient(served.address) as c:
        job_id = c.consign(job)
        deadline = time.monotonic() + 20
        while c.statuses(job_id).get("two") is not S.EXECUTING:
            assert time.monotonic() < deadline
            time.sleep(0.02)
    t0 = time.monotonic()
    code, out = served.stop()
    assert code == 0 and time.monotonic() - t0 < 20
    assert "killing running jobs" in out
    assert not any((bed / "vsiteA" / "uspace").iterdir())
    # no orphaned sleep survives the shutdown
    ps = subprocess.run(["ps", "-eo", "args"], capture_output=True, text=True).stdout
    assert "sleep 30" not in ps


def write_broker(root: Path, servers, **extra) -> Path:
    cfg = root / "broker.json"
    doc = {
        "servers": [{"name": n, "gateway": a, "vsite": n, "token": "tok"} for n, a in servers],
        "poll_interval": 0.02,
        "reprobe_interval": 0.1,
        "max_poll_failures": 3,
        **extra,
    }
    cfg.write_text(json.dumps(doc))
    return cfg


def write_plan(root: Path, script="echo $p > result.dat", values=("1", "2", "3")) -> Path:
    plan = root / "plan.xml"
    vals = "".join(f"<value>{v}</value>" for v in values)
    plan.write_text(
        f"<plan>\n  <parameter name='p'>{vals}</parameter>\n"
        "  <copy src='result.dat' dest='result.dat' direction='FROM_NODE'/>\n"
        f"  <execute>{script}</execute>\n</plan>\n"
    )
    return plan


def test_sweep_against_two_vsites(served, tmp_path):
    cfg = write_broker(tmp_path, [("vsiteA", served.address), ("vsiteB", served.address)])
    code, out, _ = run_cli(
        "--deterministic", "sweep", str(write_plan(tmp_path)), "-b", str(cfg), "-o", str(tmp_path / "o")
    )
    assert code == 0, out
    assert sorted(p.name for p in (tmp_path / "o").glob("result.dat.*")) == [
        "result.dat.0",
        "result.dat.1",
        "result.dat.2",
    ]
    assert all(line.startswith("[   0.000] job ") for line in out.splitlines()[:-1])
    assert out.splitlines()[-1].startswith("3/3 job(s) successful")


def test_sweep_with_one_server_down(served, tmp_path):
    dead = "127.0.0.1:1"
    cfg = write_broker(tmp_path, [("vsiteA", served.address), ("vsiteB", dead)])
    code, out, _ = run_cli("sweep", str(write_plan(tmp_path)), "-b", str(cfg), "-o", str(tmp_path / "o"))
    assert code == 0, out
    assert len(list((tmp_path / "o").glob("result.dat.*"))) == 3


def test_sweep_failing_script(served, tmp_path):
    cfg = write_broker(tmp_path, [("vsiteA", served.address)])
    code, out, _ = run_cli(
        "sweep", str(write_plan(tmp_path, script="exit 1")), "-b", str(cfg), "-o", str(tmp_path / "o")
    )
    assert code == 1
    assert sum(line.startswith("failed: job") for line in out.splitlines()) == 3


def test_sweep_all_servers_down(tmp_path):
    cfg = write_broker(tmp_path, [("vsiteA", "127.0.0.1:1")])
    code, out, _ = run_cli("sweep", str(write_plan(tmp_path)), "-b", str(cfg), "-o", str(tmp_path / "o"))
    assert code == 1 and "unhealthy" in out


def test_run_local_deterministic(tmp_path):
    tsi = {script_hash(RESULT_SCRIPT): {"stdout": "Mon\nhost\n", "files": {"result.txt": "r\n"}}}
    cfg = write_testbed(tmp_path / "bed", names=("vsiteA",), tsi=tsi)
    ajo = tmp_path / "job.ajo"
    run_cli("example", "--token", "tok", "-o", str(ajo))
    outs = []
    for i in range(2):
        code, _, _ = run_cli(
            "--deterministic", "run", str(ajo), "-s", str(cfg.parent / "vsiteA.json"), "-o", str(tmp_path / f"o{i}")
        )
        assert code == 0
        outs.append((tmp_path / f"o{i}").read_bytes())
    assert outs[0] == outs[1]
    assert Outcome.decode(outs[0]).job_id == decode(ajo.read_bytes()).job_id


def test_purge_spool(tmp_path):
    cfg = write_testbed(tmp_path / "bed", names=("vsiteA",))
    spool = tmp_path / "bed" / "vsiteA" / "spool"
    (spool / "job-1").mkdir(parents=True)
    (spool / "job-1" / "f").write_text("x")
    code, out, _ = run_cli("purge-spool", "-c", str(cfg))
    assert code == 0 and not any(spool.iterdir())
