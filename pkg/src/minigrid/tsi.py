"""Target-system interfaces: the layer that actually runs incarnated commands."""

from __future__ import annotations

import hashlib
import json
import os
import signal
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .ajo import is_safe_relpath


@dataclass
class Command:
    argv: list[str]
    cwd: Path
    env: dict[str, str] = field(default_factory=dict)


@dataclass
class TsiResult:
    exit_code: int
    stdout: bytes = b""
    stderr: bytes = b""
    timed_out: bool = False
    cancelled: bool = False


class TsiBackend(Protocol):
    def run(
        self, command: Command, timeout: float | None = None, cancel: threading.Event | None = None
    ) -> TsiResult: ...


class SubprocessTsi:
    """Runs commands as real OS processes in their own session.

    The whole process group is killed on timeout or cancellation so that
    grandchildren (``sleep`` under ``sh``) do not keep the pipes open.
    """

    kind = "subprocess"

    def __init__(self, poll_interval: float = 0.02):
        self.poll_interval = poll_interval

    def run(self, command: Command, timeout: float | None = None, cancel: threading.Event | None = None) -> TsiResult:
        proc = subprocess.Popen(
            command.argv,
            cwd=command.cwd,
            env=command.env or None,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
        deadline = time.monotonic() + timeout if timeout else None
        timed_out = cancelled = False
        while True:
            try:
                out, err = proc.communicate(timeout=self.poll_interval)
                break
            except subprocess.TimeoutExpired:
                if cancel is not None and cancel.is_set():
                    cancelled = True
                elif deadline is not None and time.monotonic() >= deadline:
                    timed_out = True
                else:
                    continue
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
                out, err = proc.communicate()
                break
        return TsiResult(proc.returncode, out, err, timed_out=timed_out, cancelled=cancelled)


@dataclass
class ScriptedResponse:
    exit_code: int = 0
    stdout: bytes = b""
    stderr: bytes = b""
    delay: float = 0.0
    files: dict[str, bytes] = field(default_factory=dict)


def script_hash(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


class SimulatedTsi:
    """Deterministic backend answering from a table keyed by script-content hash.

    The script is the last argv element, read relative to the working
    directory.  Unknown scripts get ``default``.  A response may also create
    files in the working directory.
    """

    kind = "simulated"

    def __init__(self, responses: dict[str, ScriptedResponse] | None = None, default: ScriptedResponse | None = None):
        self.responses = dict(responses or {})
        self.default = default or ScriptedResponse()

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> SimulatedTsi:
        doc = json.loads(Path(path).read_text())
        default = doc.pop("default", None)
        return cls(
            {k: _response(v) for k, v in doc.items()},
            _response(default) if default is not None else None,
        )

    def run(self, command: Command, timeout: float | None = None, cancel: threading.Event | None = None) -> TsiResult:
        script = Path(command.cwd) / command.argv[-1]
        try:
            content = script.read_bytes()
        except OSError as exc:
            return TsiResult(127, b"", f"cannot read script: {exc.strerror}\n".encode())
        resp = self.responses.get(script_hash(content), self.default)
        if resp.delay:
            wait = min(resp.delay, timeout) if timeout else resp.delay
            if cancel is not None and cancel.wait(wait):
                return TsiResult(-signal.SIGKILL, b"", b"", cancelled=True)
            if cancel is None:
                time.sleep(wait)
            if timeout and resp.delay > timeout:
                return TsiResult(-signal.SIGKILL, b"", b"", timed_out=True)
        for name, data in resp.files.items():
            if is_safe_relpath(name):
                target = Path(command.cwd) / name
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
        return TsiResult(resp.exit_code, resp.stdout, resp.stderr)


def _response(doc: dict) -> ScriptedResponse:
    return ScriptedResponse(
        exit_code=int(doc.get("exit_code", 0)),
        stdout=doc.get("stdout", "").encode(),
        stderr=doc.get("stderr", "").encode(),
        delay=float(doc.get("delay", 0.0)),
        files={k: v.encode() for k, v in doc.get("files", {}).items()},
    )
