"""Command-line front end: ``minigrid <command> ...``.

Every command exits 0 exactly when the operation it wraps fully succeeded.
The log level comes from ``MINIGRID_LOG`` (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path
from typing import Callable, Sequence, TextIO

from . import __version__
from .ajo import ScriptType, decode, encode
from .broker import Broker, SchedulePolicy, StateChange, load_broker_config
from .errors import AllServersUnhealthy, GridError
from .gateway import GatewayClient, GatewayError, load_gateway
from .outcome import Outcome
from .plan import load_plan
from .samples import date_hostname_job
from .states import ActionStatus, CompletionCode
from .vsite import load_vsite

log = logging.getLogger("minigrid")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Out:
    """Line printer with optional wall-clock prefix (zeroed when deterministic)."""

    def __init__(self, stream: TextIO, deterministic: bool):
        self.stream = stream
        self.clock: Callable[[], float] = (lambda: 0.0) if deterministic else time.time
        self.t0 = self.clock()

    def __call__(self, line: str = "") -> None:
        print(line, file=self.stream, flush=True)

    def stamped(self, line: str) -> None:
        self(f"[{self.clock() - self.t0:8.3f}] {line}")


def _status_lines(statuses: dict[str, ActionStatus]) -> list[str]:
    return [f"{name}\t{status}" for name, status in sorted(statuses.items())]


def _finish(out: _Out, outcome: Outcome) -> int:
    for line in _status_lines(outcome.statuses):
        out(line)
    out(f"job {outcome.job_id}\tDONE({outcome.code.value})")
    return EXIT_OK if outcome.code is CompletionCode.SUCCESSFUL else EXIT_FAIL


# -- commands


def cmd_serve(args, out: _Out) -> int:
    clock = (lambda: 0.0) if args.deterministic else time.time
    gw, host, port = load_gateway(args.config, clock=clock)
    if args.port is not None:
        port = args.port
    try:
        host, port = gw.serve(host, port)
    except OSError as exc:
        raise GridError(f"cannot listen on {host}:{port}: {exc.strerror}") from None
    stop = threading.Event()
    previous = {s: signal.signal(s, lambda *_: stop.set()) for s in (signal.SIGINT, signal.SIGTERM)}
    out(f"gateway listening on {host}:{port} vsites={','.join(sorted(gw.vsites))}")
    try:
        stop.wait()
    finally:
        out("shutting down; killing running jobs")
        gw.shutdown(kill_jobs=True)
        for s, h in previous.items():
            signal.signal(s, h)
    return EXIT_OK


def cmd_run(args, out: _Out) -> int:
    clock = (lambda: 0.0) if args.deterministic else time.time
    site = load_vsite(args.site, clock=clock)
    job = decode(Path(args.ajo).read_bytes())
    job.target_vsite = job.target_vsite or site.name
    outcome = site.consign_local(job, parallelism=args.parallelism)
    if args.output:
        Path(args.output).write_bytes(outcome.encode())
    return _finish(out, outcome)


def cmd_submit(args, out: _Out) -> int:
    job = decode(Path(args.ajo).read_bytes())
    with GatewayClient(args.gateway) as client:
        if not args.sync:
            out(client.consign(job))
            return EXIT_OK
        return _finish(out, client.consign_synchronous(job))


def cmd_status(args, out: _Out) -> int:
    with GatewayClient(args.gateway) as client:
        st = client.poll(args.job_id)
    for line in _status_lines({k: ActionStatus(v) for k, v in st.statuses.items()}):
        out(line)
    out(f"job {st.job_id}\t{f'DONE({st.code})' if st.finished else 'RUNNING'}")
    return EXIT_OK


def cmd_outcome(args, out: _Out) -> int:
    with GatewayClient(args.gateway) as client:
        outcome = client.outcome(args.job_id)
    written = outcome.write_to(args.output)
    (Path(args.output) / "outcome.json").write_bytes(outcome.encode())
    out(f"wrote {len(written) + 1} file(s) to {args.output}")
    return _finish(out, outcome)


def cmd_kill(args, out: _Out) -> int:
    with GatewayClient(args.gateway) as client:
        st = client.kill(args.job_id)
    for line in _status_lines({k: ActionStatus(v) for k, v in st.statuses.items()}):
        out(line)
    out(f"job {st.job_id}\tDONE({st.code})")
    return EXIT_OK


def cmd_sites(args, out: _Out) -> int:
    with GatewayClient(args.gateway) as client:
        for name in client.list_vsites():
            out(name)
    return EXIT_OK


def cmd_sweep(args, out: _Out) -> int:
    cfg = load_broker_config(args.broker)
    plan = load_plan(args.plan)
    output_dir = args.output or cfg.output_dir

    def progress(change: StateChange) -> None:
        out.stamped(change.line())

    broker = Broker(
        plan,
        cfg.compute_servers(),
        output_dir,
        policy=SchedulePolicy(args.policy or cfg.policy),
        poll_interval=cfg.poll_interval if args.poll_interval is None else args.poll_interval,
        max_attempts=cfg.max_attempts,
        max_poll_failures=cfg.max_poll_failures,
        reprobe_interval=cfg.reprobe_interval,
        script_type=cfg.script_type,
        on_change=progress,
    )
    try:
        report = broker.run()
    except AllServersUnhealthy as exc:
        report = exc.report
        out(f"error: {exc}")
    ok = sum(1 for j in report.jobs if j not in report.failures())
    out(f"{ok}/{len(report.jobs)} job(s) successful; {report.consigns} consign(s); outputs in {output_dir}")
    for j in report.failures():
        out(f"failed: job {j.index} {j.bindings} {j.label} {j.error}".rstrip())
    return report.exit_code


def cmd_purge_spool(args, out: _Out) -> int:
    gw, _, _ = load_gateway(args.config)
    for name, site in sorted(gw.vsites.items()):
        site.purge_spool(args.job)
        out(f"purged spool of {name}" + (f" for {args.job}" if args.job else ""))
    return EXIT_OK


def cmd_example(args, out: _Out) -> int:
    job = date_hostname_job(args.vsite, args.token, ScriptType(args.script_type))
    data = encode(job)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        out(data.decode())
    return EXIT_OK


# -- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minigrid", description="Miniature grid middleware and sweep broker.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--deterministic", action="store_true", help="zero all timestamps for reproducible transcripts")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    def gw(sp):
        sp.add_argument("-g", "--gateway", required=True, help="gateway address host:port")

    sp = add("serve", help="run a gateway and its vsites until interrupted")
    sp.add_argument("-c", "--config", required=True, help="gateway/testbed config (JSON)")
    sp.add_argument("--port", type=int, help="override the configured port")
    sp.set_defaults(fn=cmd_serve)

    sp = add("submit", help="consign an AJO file")
    sp.add_argument("ajo", help="encoded AJO file")
    sp.add_argument("--sync", action="store_true", help="wait for the outcome")
    sp.add_argument("--async", dest="sync", action="store_false", help="return the job id at once (default)")
    gw(sp)
    sp.set_defaults(fn=cmd_submit)

    sp = add("status", help="show per-action statuses of a job")
    sp.add_argument("job_id")
    gw(sp)
    sp.set_defaults(fn=cmd_status)

    sp = add("outcome", help="fetch a finished job's outcome into a directory")
    sp.add_argument("job_id")
    sp.add_argument("-o", "--output", required=True)
    gw(sp)
    sp.set_defaults(fn=cmd_outcome)

    sp = add("kill", help="kill a job")
    sp.add_argument("job_id")
    gw(sp)
    sp.set_defaults(fn=cmd_kill)

    sp = add("sites", help="list the vsites behind a gateway")
    gw(sp)
    sp.set_defaults(fn=cmd_sites)

    sp = add("sweep", help="run a parameter-sweep plan through the broker")
    sp.add_argument("plan")
    sp.add_argument("-b", "--broker", required=True, help="broker config (JSON)")
    sp.add_argument("-o", "--output", help="output directory (overrides the config)")
    sp.add_argument("--policy", choices=[p.value for p in SchedulePolicy])
    sp.add_argument("--poll-interval", type=float)
    sp.set_defaults(fn=cmd_sweep)

    sp = add("run", help="execute an AJO on a local vsite without a gateway")
    sp.add_argument("ajo")
    sp.add_argument("-s", "--site", required=True, help="vsite config (JSON)")
    sp.add_argument("-o", "--output", help="write the encoded outcome here")
    sp.add_argument("-p", "--parallelism", type=int, default=1)
    sp.set_defaults(fn=cmd_run)

    sp = add("purge-spool", help="delete spooled files of every vsite in a config")
    sp.add_argument("-c", "--config", required=True)
    sp.add_argument("--job", help="only this job's spool directory")
    sp.set_defaults(fn=cmd_purge_spool)

    sp = add("example", help="write the date/hostname example AJO")
    sp.add_argument("--vsite", default="vsiteA")
    sp.add_argument("--token", default="")
    sp.add_argument("--script-type", default="SH", choices=[t.value for t in ScriptType])
    sp.add_argument("-o", "--output")
    sp.set_defaults(fn=cmd_example)
    return p


def main(argv: Sequence[str] | None = None, stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    level = os.environ.get("MINIGRID_LOG", "WARNING").upper()
    fmt = (
        "%(levelname)s %(name)s: %(message)s"
        if args.deterministic
        else "%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format=fmt, stream=stderr)
    out = _Out(stdout, args.deterministic)
    try:
        return args.fn(args, out)
    except GatewayError as exc:
        msg = {"UNKNOWN_JOB": "unknown job", "UNKNOWN_VSITE": "unknown vsite"}.get(exc.code, exc.code.lower())
        print(f"error: {msg}: {exc}", file=stderr)
        return EXIT_FAIL
    except (GridError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
