"""Per-job working directories."""

from __future__ import annotations

import shutil
from enum import Enum
from pathlib import Path

from .ajo import is_safe_relpath
from .errors import GridError
from .outcome import safe_segment


class PathEscape(GridError):
    """A relative path resolved outside the directory it must stay in."""


def confined(root: Path, relpath: str) -> Path:
    """Join ``relpath`` onto ``root``, refusing anything that escapes it (symlinks included)."""
    if not is_safe_relpath(relpath):
        raise PathEscape(f"unsafe path {relpath!r}")
    root = Path(root).resolve()
    target = (root / relpath).resolve()
    if target != root and root not in target.parents:
        raise PathEscape(f"{relpath!r} escapes its root")
    return target


class UspaceState(str, Enum):
    OPEN = "OPEN"
    FINALIZED = "FINALIZED"


class Uspace:
    """The directory a job's actions see; removed when the job finishes."""

    def __init__(self, parent: str | Path, job_id: str):
        self.job_id = job_id
        self.root = Path(parent).resolve() / safe_segment(job_id)
        self.root.mkdir(parents=True, exist_ok=False)
        self.state = UspaceState.OPEN
        self.files: set[str] = set()

    def path(self, relpath: str) -> Path:
        return confined(self.root, relpath)

    def exists(self, relpath: str) -> bool:
        try:
            return self.path(relpath).is_file()
        except PathEscape:
            return False

    def write(self, relpath: str, data: bytes) -> Path:
        self._check_open()
        target = self.path(relpath)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        self.files.add(relpath)
        return target

    def read(self, relpath: str) -> bytes:
        return self.path(relpath).read_bytes()

    def copy_in(self, source: Path, relpath: str) -> Path:
        self._check_open()
        target = self.path(relpath)
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source, target)
        self.files.add(relpath)
        return target

    def _check_open(self) -> None:
        if self.state is not UspaceState.OPEN:
            raise GridError(f"uspace of {self.job_id} is finalized")

    def finalize(self) -> list[str]:
        """Remove the directory tree.  Idempotent; returns problems instead of raising."""
        if self.state is UspaceState.FINALIZED:
            return []
        problems: list[str] = []
        shutil.rmtree(self.root, onerror=lambda fn, p, exc: problems.append(f"{fn.__name__} {p}: {exc[1]}"))
        self.state = UspaceState.FINALIZED
        return problems
