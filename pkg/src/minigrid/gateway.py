"""The single network entry point of a site: routing, job registry, TCP server and client."""

from __future__ import annotations

import itertools
import json
import logging
import os
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import protocol as P
from .ajo import AbstractJob, decode
from .errors import (
    FrameError,
    GridError,
    MalformedEncoding,
    ModelError,
    NotAuthorized,
    ServerUnavailable,
    UnknownJob,
    UnknownVsite,
    UnsupportedResource,
)
from .outcome import Outcome
from .states import ActionStatus, CompletionCode
from .vsite import JobExecution, ResourceDescription, Vsite, load_vsite

log = logging.getLogger(__name__)

KILL_WAIT = 30.0


@dataclass
class JobEntry:
    job_id: str
    vsite: str
    submitted: float
    execution: JobExecution


class GatewayError(GridError):
    """An Error reply received from a gateway."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class Gateway:
    """Routes protocol requests to vsites and owns the job registry.

    :meth:`handle` is the transport-free core; :meth:`serve` puts it behind
    a threaded TCP listener (one thread per connection, so a synchronous
    consign never blocks the accept loop).
    """

    def __init__(self, vsites: list[Vsite], parallelism: int = 2, clock: Callable[[], float] = time.time):
        self.vsites: dict[str, Vsite] = {}
        for v in vsites:
            if v.name in self.vsites:
                raise ValueError(f"duplicate vsite name {v.name!r}")
            self.vsites[v.name] = v
            v.job_lookup = self._lookup_execution
        self.parallelism = parallelism
        self.clock = clock
        self._registry: dict[str, JobEntry] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)
        self._server: _Server | None = None
        self._shutdown_lock = threading.Lock()
        self._thread: threading.Thread | None = None

    # -- core operations

    def route(self, name: str) -> Vsite:
        try:
            return self.vsites[name]
        except KeyError:
            raise UnknownVsite(name) from None

    def entry(self, job_id: str) -> JobEntry:
        with self._lock:
            entry = self._registry.get(job_id)
        if entry is None:
            raise UnknownJob(job_id)
        return entry

    def _lookup_execution(self, job_id: str) -> JobExecution:
        return self.entry(job_id).execution

    def jobs(self) -> list[str]:
        with self._lock:
            return list(self._registry)

    def consign(self, job: AbstractJob, sync: bool = False) -> str | Outcome:
        vsite = self.route(job.target_vsite)
        job.job_id = f"{vsite.name}-{next(self._counter)}"
        execution = vsite.start(job, self.parallelism)
        with self._lock:
            self._registry[job.job_id] = JobEntry(job.job_id, vsite.name, self.clock(), execution)
        log.info("consigned %s to %s (%s)", job.job_id, vsite.name, "sync" if sync else "async")
        return execution.wait() if sync else job.job_id

    def status(self, job_id: str) -> P.StatusReply:
        execution = self.entry(job_id).execution
        finished = execution.done.is_set()
        snap = execution.outcome.statuses if finished and execution.outcome else execution.snapshot()
        code = execution.outcome.code.value if finished and execution.outcome else None
        return P.StatusReply(job_id, {k: v.value for k, v in snap.items()}, finished, code)

    def kill(self, job_id: str, wait: float = KILL_WAIT) -> P.StatusReply:
        execution = self.entry(job_id).execution
        if not execution.done.is_set():
            execution.kill()
            execution.done.wait(wait)
        return self.status(job_id)

    def outcome(self, job_id: str) -> Outcome:
        execution = self.entry(job_id).execution
        if not execution.done.is_set() or execution.outcome is None:
            raise GatewayError("NOT_FINISHED", f"job {job_id} is still running")
        return execution.outcome

    def handle(self, msg: P.Message) -> P.Message:
        """Answer one request.  Never raises; failures become Error replies."""
        try:
            return self._dispatch(msg)
        except NotAuthorized as exc:
            return P.Error("NOT_AUTHORIZED", str(exc))
        except UnknownVsite as exc:
            return P.Error("UNKNOWN_VSITE", f"unknown vsite {exc}")
        except UnknownJob as exc:
            return P.Error("UNKNOWN_JOB", f"unknown job {exc}")
        except UnsupportedResource as exc:
            return P.Error("UNSUPPORTED_RESOURCE", str(exc))
        except (MalformedEncoding, ModelError) as exc:
            return P.Error("INVALID_AJO", str(exc))
        except GatewayError as exc:
            return P.Error(exc.code, str(exc))
        except Exception as exc:
            log.exception("internal error handling %s", type(msg).__name__)
            return P.Error("INTERNAL", repr(exc))

    def _dispatch(self, msg: P.Message) -> P.Message:
        if isinstance(msg, P.Consign):
            if msg.mode not in ("SYNC", "ASYNC"):
                raise GatewayError("BAD_REQUEST", f"unknown consign mode {msg.mode!r}")
            result = self.consign(decode(msg.ajo), sync=msg.mode == "SYNC")
            if isinstance(result, Outcome):
                return P.OutcomeReply(result.job_id, result.encode())
            return P.Consigned(result)
        if isinstance(msg, P.Poll):
            return self.status(msg.job_id)
        if isinstance(msg, P.RetrieveOutcome):
            return P.OutcomeReply(msg.job_id, self.outcome(msg.job_id).encode())
        if isinstance(msg, P.Kill):
            return self.kill(msg.job_id)
        if isinstance(msg, P.ListVsites):
            return P.VsiteList(sorted(self.vsites))
        if isinstance(msg, P.DescribeResources):
            return P.ResourceReply(msg.vsite, self.route(msg.vsite).describe().to_dict())
        raise GatewayError("BAD_REQUEST", f"{type(msg).__name__} is not a request")

    # -- network

    def serve(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Start listening in a background thread; returns the bound address."""
        self._server = _Server((host, port), _Handler, self)
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,), name="gateway", daemon=True)
        self._thread.start()
        return self.address

    @property
    def address(self) -> tuple[str, int]:
        assert self._server is not None, "gateway is not serving"
        host, port = self._server.server_address[:2]
        return host, port

    def shutdown(self, kill_jobs: bool = True) -> None:
        with self._shutdown_lock:
            server, self._server = self._server, None
        if server is not None:
            server.shutdown()
            server.close_connections()
            server.server_close()
        if kill_jobs:
            for job_id in self.jobs():
                self.kill(job_id)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, handler, gateway: Gateway):
        self.gateway = gateway
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        super().__init__(address, handler)

    def track(self, sock: socket.socket, add: bool) -> None:
        with self._conns_lock:
            (self._conns.add if add else self._conns.discard)(sock)

    def close_connections(self) -> None:
        with self._conns_lock:
            for s in list(self._conns):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: _Server = self.server  # type: ignore[assignment]
        sock: socket.socket = self.request
        server.track(sock, True)
        decoder = P.FrameDecoder()
        try:
            while True:
                data = sock.recv(65536)
                if not data:
                    decoder.eof()
                    return
                for payload in decoder.feed(data):
                    try:
                        request = P.decode_message(payload)
                    except P.MalformedPayload as exc:
                        sock.sendall(P.frame_encode(P.Error("MALFORMED", str(exc))))
                        return
                    reply = server.gateway.handle(request)
                    sock.sendall(P.frame_encode(reply))
        except FrameError as exc:
            try:
                sock.sendall(P.frame_encode(P.Error("MALFORMED", str(exc))))
            except OSError:
                pass
        except OSError:
            pass
        finally:
            server.track(sock, False)


def parse_address(address: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {address!r}")
    return host, int(port)


class GatewayClient:
    """Blocking client; one TCP connection, requests answered in order."""

    def __init__(self, address: str | tuple[str, int], timeout: float | None = 60.0):
        self.address = parse_address(address)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._file = None
        self._lock = threading.Lock()

    def __enter__(self) -> GatewayClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._file.close()
                self._sock.close()
            finally:
                self._sock = self._file = None

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise ServerUnavailable(f"cannot reach gateway {self.address[0]}:{self.address[1]}: {exc}") from None
        self._file = self._sock.makefile("rb")

    def request(self, msg: P.Message) -> P.Message:
        with self._lock:
            if self._sock is None:
                self._connect()
            try:
                self._sock.sendall(P.frame_encode(msg))
                payload = P.read_frame(self._file)
                if payload is None:
                    raise ServerUnavailable("gateway closed the connection")
                return P.decode_message(payload)
            except (OSError, FrameError) as exc:
                self.close()
                if isinstance(exc, ServerUnavailable):
                    raise
                raise ServerUnavailable(f"connection to gateway failed: {exc}") from None

    def _call(self, msg: P.Message, expect: type) -> P.Message:
        reply = self.request(msg)
        if isinstance(reply, P.Error):
            raise GatewayError(reply.code, reply.message)
        if not isinstance(reply, expect):
            raise GatewayError("PROTOCOL", f"expected {expect.__name__}, got {type(reply).__name__}")
        return reply

    def consign(self, job: AbstractJob, sync: bool = False) -> str | Outcome:
        from .ajo import encode

        mode = "SYNC" if sync else "ASYNC"
        reply = self._call(P.Consign(encode(job), mode), P.OutcomeReply if sync else P.Consigned)
        if sync:
            return Outcome.decode(reply.outcome)
        return reply.job_id

    def consign_synchronous(self, job: AbstractJob) -> Outcome:
        return self.consign(job, sync=True)  # type: ignore[return-value]

    def poll(self, job_id: str) -> P.StatusReply:
        return self._call(P.Poll(job_id), P.StatusReply)

    def statuses(self, job_id: str) -> dict[str, ActionStatus]:
        return {k: ActionStatus(v) for k, v in self.poll(job_id).statuses.items()}

    def outcome(self, job_id: str) -> Outcome:
        return Outcome.decode(self._call(P.RetrieveOutcome(job_id), P.OutcomeReply).outcome)

    def kill(self, job_id: str) -> P.StatusReply:
        return self._call(P.Kill(job_id), P.StatusReply)

    def list_vsites(self) -> list[str]:
        return list(self._call(P.ListVsites(), P.VsiteList).names)

    def describe(self, vsite: str) -> ResourceDescription:
        return ResourceDescription.from_dict(self._call(P.DescribeResources(vsite), P.ResourceReply).resources)

    def wait(self, job_id: str, interval: float = 0.05, timeout: float = 60.0) -> P.StatusReply:
        deadline = time.monotonic() + timeout
        while True:
            st = self.poll(job_id)
            if st.finished:
                return st
            if time.monotonic() > deadline:
                raise TimeoutError(f"job {job_id} did not finish in {timeout} s")
            time.sleep(interval)


def load_gateway(path: str | os.PathLike, clock: Callable[[], float] = time.time) -> tuple[Gateway, str, int]:
    """Build a gateway from its JSON config; returns ``(gateway, host, port)``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        vsite_paths = [path.parent / p for p in doc["vsites"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise GridError(f"{path}: invalid gateway config: {exc!r}") from None
    vsites = [load_vsite(p, clock=clock) for p in vsite_paths]
    gw = Gateway(vsites, parallelism=int(doc.get("parallelism", 2)), clock=clock)
    return gw, doc.get("host", "127.0.0.1"), int(doc.get("port", 0))


__all__ = [
    "CompletionCode",
    "Gateway",
    "GatewayClient",
    "GatewayError",
    "JobEntry",
    "load_gateway",
    "parse_address",
]
