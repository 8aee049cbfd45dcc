"""Per-action results and the job-level Outcome that travels back to clients."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .ajo import _b64, _Reader, _unb64, dumps_canonical, is_safe_relpath, load_json
from .errors import MalformedEncoding
from .states import ActionStatus, CompletionCode


@dataclass
class OutcomeRecord:
    name: str
    code: CompletionCode
    stdout: bytes = b""
    stderr: bytes = b""
    log: list[str] = field(default_factory=list)
    exit_code: int | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "code": self.code.value,
            "stdout": _b64(self.stdout),
            "stderr": _b64(self.stderr),
            "log": list(self.log),
            "exit_code": self.exit_code,
        }

    @classmethod
    def from_dict(cls, r: _Reader) -> OutcomeRecord:
        log = r.get("log", list)
        if not all(isinstance(line, str) for line in log):
            raise MalformedEncoding("log lines must be strings", path=f"{r.path}.log")
        exit_code = r.doc.get("exit_code")
        if exit_code is not None and (not isinstance(exit_code, int) or isinstance(exit_code, bool)):
            raise MalformedEncoding("exit_code must be an integer", path=f"{r.path}.exit_code")
        return cls(
            name=r.get("name", str),
            code=_enum(CompletionCode, r.get("code", str), f"{r.path}.code"),
            stdout=_unb64(r.get("stdout", str), f"{r.path}.stdout"),
            stderr=_unb64(r.get("stderr", str), f"{r.path}.stderr"),
            log=list(log),
            exit_code=exit_code,
        )


def _enum(cls, value, path):
    try:
        return cls(value)
    except ValueError:
        raise MalformedEncoding(f"unknown {cls.__name__} {value!r}", path=path) from None


@dataclass
class Outcome:
    """Everything a client gets back for one job.

    ``files_mapping`` maps the id of each CopyPortfolioToOutcome action to the
    outcome-store paths it saved; ``files`` carries those files' bytes.
    """

    job_id: str
    vsite: str
    code: CompletionCode
    statuses: dict[str, ActionStatus] = field(default_factory=dict)
    records: dict[str, OutcomeRecord] = field(default_factory=dict)
    files_mapping: dict[str, list[str]] = field(default_factory=dict)
    files: dict[str, bytes] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "vsite": self.vsite,
            "code": self.code.value,
            "statuses": {k: v.value for k, v in self.statuses.items()},
            "records": {k: v.to_dict() for k, v in self.records.items()},
            "files_mapping": {k: list(v) for k, v in self.files_mapping.items()},
            "files": {k: _b64(v) for k, v in self.files.items()},
        }

    @classmethod
    def from_dict(cls, doc: object, path: str = "$") -> Outcome:
        r = _Reader(doc, path)
        statuses = {k: _enum(ActionStatus, v, f"{path}.statuses.{k}") for k, v in r.get("statuses", dict).items()}
        records = {
            k: OutcomeRecord.from_dict(_Reader(v, f"{path}.records.{k}")) for k, v in r.get("records", dict).items()
        }
        mapping: dict[str, list[str]] = {}
        for k, v in r.get("files_mapping", dict).items():
            if not isinstance(v, list) or not all(isinstance(p, str) for p in v):
                raise MalformedEncoding("file list expected", path=f"{path}.files_mapping.{k}")
            mapping[k] = list(v)
        files = {k: _unb64(v, f"{path}.files.{k}") for k, v in r.get("files", dict).items()}
        return cls(
            job_id=r.get("job_id", str),
            vsite=r.get("vsite", str),
            code=_enum(CompletionCode, r.get("code", str), f"{path}.code"),
            statuses=statuses,
            records=records,
            files_mapping=mapping,
            files=files,
        )

    def encode(self) -> bytes:
        return dumps_canonical(self.to_dict())

    @classmethod
    def decode(cls, data: bytes) -> Outcome:
        return cls.from_dict(load_json(data))

    def saved_files(self, cpto_id: str) -> list[tuple[str, bytes]]:
        """(path, content) for every file saved by one CopyPortfolioToOutcome action."""
        return [(p, self.files[p]) for p in self.files_mapping.get(cpto_id, []) if p in self.files]

    def write_to(self, directory: str | os.PathLike) -> list[Path]:
        """Write per-action stdout/stderr/log plus all saved files under ``directory``."""
        root = Path(directory)
        written = []
        for qualname, rec in self.records.items():
            d = root / "actions" / _segment_path(qualname)
            d.mkdir(parents=True, exist_ok=True)
            for fname, data in (("stdout", rec.stdout), ("stderr", rec.stderr)):
                (d / fname).write_bytes(data)
                written.append(d / fname)
            (d / "log").write_text("".join(f"{line}\n" for line in rec.log))
            (d / "status").write_text(f"{self.statuses.get(qualname, rec.code).value}\n")
        for relpath, data in self.files.items():
            if not is_safe_relpath(relpath):
                continue
            target = root / "files" / relpath
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            written.append(target)
        return written


def safe_segment(name: str) -> str:
    """Map an arbitrary action name to one harmless path component."""
    out = "".join(c if c.isalnum() or c in "-_.[]" else "_" for c in name)
    if out in ("", ".", ".."):
        out = "_" + out
    return out


def _segment_path(qualname: str) -> Path:
    return Path(*[safe_segment(part) for part in qualname.split("/")])
