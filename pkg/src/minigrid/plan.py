"""Parameter-sweep plan documents: parsing, enumeration and placeholder substitution.

A plan is a small XML dialect::

    <plan>
      <parameter name="p"><value>1</value><value>2</value></parameter>
      <substitute src="input.tmpl" dest="input.txt"/>
      <copy src="data.bin" dest="data.bin" direction="TO_NODE"/>
      <copy src="result.dat" dest="result.dat" direction="FROM_NODE"/>
      <execute>./model input.txt</execute>
    </plan>

Only this subset is accepted.  Parsing is done by expat, which already gives
line/column positions for well-formedness errors; everything above it
(vocabulary, attributes, placement of text) is checked here.
"""

from __future__ import annotations

import itertools
import re
import xml.parsers.expat
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .ajo import is_safe_relpath
from .errors import MalformedPlan, UndeclaredParameter

PLACEHOLDER = re.compile(rb"\$(\$|[A-Za-z_][A-Za-z0-9_]*)")
NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class Direction(str, Enum):
    TO_NODE = "TO_NODE"
    FROM_NODE = "FROM_NODE"


@dataclass(frozen=True)
class Parameter:
    name: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class Substitute:
    src: str
    dest: str
    line: int = 0


@dataclass(frozen=True)
class Copy:
    src: str
    dest: str
    direction: Direction
    line: int = 0


@dataclass(frozen=True)
class Execute:
    command: str
    line: int = 0


PlanCommand = Substitute | Copy | Execute


@dataclass
class PlanDocument:
    parameters: list[Parameter] = field(default_factory=list)
    commands: list[PlanCommand] = field(default_factory=list)
    base_dir: Path = field(default_factory=Path)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.parameters]

    def of(self, kind: type) -> list:
        return [c for c in self.commands if isinstance(c, kind)]

    @property
    def inputs(self) -> list[Substitute | Copy]:
        """Everything staged onto the node, in document order."""
        return [
            c
            for c in self.commands
            if isinstance(c, Substitute) or (isinstance(c, Copy) and c.direction is Direction.TO_NODE)
        ]

    @property
    def results(self) -> list[Copy]:
        return [c for c in self.commands if isinstance(c, Copy) and c.direction is Direction.FROM_NODE]


# -- substitution


def placeholders(template: bytes) -> list[tuple[str, int, int]]:
    """``(name, line, column)`` of every ``$name`` in ``template`` (escapes excluded)."""
    out = []
    for m in PLACEHOLDER.finditer(template):
        if m.group(1) == b"$":
            continue
        line = template.count(b"\n", 0, m.start()) + 1
        column = m.start() - (template.rfind(b"\n", 0, m.start()) + 1) + 1
        out.append((m.group(1).decode(), line, column))
    return out


def substitute(template: bytes, bindings: dict[str, str]) -> bytes:
    """Replace each ``$name`` by its binding; ``$$`` yields a literal ``$``."""

    def repl(m: re.Match) -> bytes:
        key = m.group(1)
        if key == b"$":
            return b"$"
        name = key.decode()
        if name not in bindings:
            line = template.count(b"\n", 0, m.start()) + 1
            column = m.start() - (template.rfind(b"\n", 0, m.start()) + 1) + 1
            raise UndeclaredParameter(f"${name} has no binding", line, column)
        return str(bindings[name]).encode()

    return PLACEHOLDER.sub(repl, template)


def check_declared(template: bytes, declared: set[str], where: str, line_offset: int = 0) -> None:
    for name, line, column in placeholders(template):
        if name not in declared:
            raise UndeclaredParameter(f"{where}: ${name} is not a declared parameter", line + line_offset, column)


# -- enumeration


def enumerate_bindings(plan: PlanDocument) -> list[dict[str, str]]:
    """Cartesian product of the parameter values, last parameter varying fastest."""
    names = plan.names
    return [dict(zip(names, combo)) for combo in itertools.product(*(p.values for p in plan.parameters))]


# -- parsing

_ATTRS = {
    "plan": (set(), set()),
    "parameter": ({"name"}, set()),
    "value": (set(), set()),
    "substitute": ({"src", "dest"}, set()),
    "copy": ({"src", "dest", "direction"}, set()),
    "execute": (set(), set()),
}
_PARENT = {
    "plan": None,
    "parameter": "plan",
    "value": "parameter",
    "substitute": "plan",
    "copy": "plan",
    "execute": "plan",
}
_TEXT_HOLDERS = {"value", "execute"}


class _Builder:
    def __init__(self, parser, base_dir: Path):
        self.p = parser
        self.plan = PlanDocument(base_dir=base_dir)
        self.stack: list[str] = []
        self.text: list[str] = []
        self.values: list[str] = []
        self.param_name = ""
        self.start_line = 0
        self.seen_root = False

    def fail(self, message: str, cls=MalformedPlan):
        raise cls(message, self.p.CurrentLineNumber, self.p.CurrentColumnNumber + 1)

    def start(self, tag: str, attrs: dict[str, str]) -> None:
        if tag not in _ATTRS:
            self.fail(f"unknown element <{tag}>")
        parent = self.stack[-1] if self.stack else None
        if parent != _PARENT[tag]:
            where = f"inside <{parent}>" if parent else "at top level"
            self.fail(f"<{tag}> is not allowed {where}")
        if tag == "plan":
            if self.seen_root:
                self.fail("only one <plan> element is allowed")
            self.seen_root = True
        required, optional = _ATTRS[tag]
        missing = required - attrs.keys()
        extra = attrs.keys() - required - optional
        if missing:
            self.fail(f"<{tag}> is missing attribute(s) {', '.join(sorted(missing))}")
        if extra:
            self.fail(f"<{tag}> does not take attribute(s) {', '.join(sorted(extra))}")
        line = self.p.CurrentLineNumber
        if tag == "parameter":
            name = attrs["name"]
            if not NAME.match(name):
                self.fail(f"parameter name {name!r} is not an identifier")
            if name in self.plan.names:
                self.fail(f"parameter {name!r} declared twice")
            self.param_name, self.values = name, []
        elif tag == "substitute":
            self._check_dest(attrs["dest"])
            self.plan.commands.append(Substitute(attrs["src"], attrs["dest"], line))
        elif tag == "copy":
            try:
                direction = Direction(attrs["direction"])
            except ValueError:
                self.fail(f"copy direction must be TO_NODE or FROM_NODE, not {attrs['direction']!r}")
            node_side = attrs["dest"] if direction is Direction.TO_NODE else attrs["src"]
            self._check_dest(node_side)
            if direction is Direction.FROM_NODE and not is_safe_relpath(attrs["dest"]):
                self.fail(f"local result name {attrs['dest']!r} must be a relative path")
            self.plan.commands.append(Copy(attrs["src"], attrs["dest"], direction, line))
        self.stack.append(tag)
        self.text = []
        self.start_line = line

    def _check_dest(self, name: str) -> None:
        if not is_safe_relpath(name):
            self.fail(f"node file name {name!r} must be a relative path inside the job directory")

    def end(self, tag: str) -> None:
        self.stack.pop()
        body = "".join(self.text)
        if tag == "value":
            self.values.append(body.strip())
        elif tag == "parameter":
            if not self.values:
                self.fail(f"parameter {self.param_name!r} has no values")
            self.plan.parameters.append(Parameter(self.param_name, tuple(self.values)))
        elif tag == "execute":
            command = body.strip()
            if not command:
                self.fail("empty <execute>")
            self.plan.commands.append(Execute(command, self.start_line))
        self.text = []

    def chars(self, data: str) -> None:
        if self.stack and self.stack[-1] in _TEXT_HOLDERS:
            self.text.append(data)
        elif data.strip():
            self.fail(f"unexpected text {data.strip()[:20]!r}")

    def doctype(self, *args) -> None:
        self.fail("DOCTYPE declarations are not accepted")


def parse_plan(text: str | bytes, base_dir: str | Path = ".") -> PlanDocument:
    """Parse and validate a plan; errors carry line and column."""
    parser = xml.parsers.expat.ParserCreate()
    b = _Builder(parser, Path(base_dir))
    parser.StartElementHandler = b.start
    parser.EndElementHandler = b.end
    parser.CharacterDataHandler = b.chars
    parser.StartDoctypeDeclHandler = b.doctype
    parser.EntityDeclHandler = b.doctype
    try:
        parser.Parse(text.encode() if isinstance(text, str) else text, True)
    except xml.parsers.expat.ExpatError as exc:
        raise MalformedPlan(xml.parsers.expat.ErrorString(exc.code), exc.lineno, exc.offset + 1) from None
    plan = b.plan
    if not b.seen_root:
        raise MalformedPlan("document has no <plan> element", 1, 1)
    if not plan.of(Execute):
        raise MalformedPlan("plan has no <execute> command", parser.CurrentLineNumber, 1)
    _check_names(plan)
    declared = set(plan.names)
    for cmd in plan.of(Execute):
        check_declared(cmd.command.encode(), declared, "execute", cmd.line - 1)
    for cmd in plan.of(Substitute):
        path = plan.base_dir / cmd.src
        if path.is_file():
            check_declared(path.read_bytes(), declared, str(cmd.src))
    return plan


def _check_names(plan: PlanDocument) -> None:
    seen: dict[str, int] = {}
    for cmd in plan.inputs:
        if cmd.dest in seen:
            raise MalformedPlan(f"node file {cmd.dest!r} is staged twice", cmd.line, 1)
        seen[cmd.dest] = cmd.line
    local: dict[str, int] = {}
    for cmd in plan.results:
        if cmd.dest in local:
            raise MalformedPlan(f"result name {cmd.dest!r} is used twice", cmd.line, 1)
        local[cmd.dest] = cmd.line


def load_plan(path: str | Path) -> PlanDocument:
    path = Path(path)
    try:
        return parse_plan(path.read_bytes(), path.parent)
    except (MalformedPlan, UndeclaredParameter) as exc:
        err = type(exc)(f"{path}: {exc}")
        err.line, err.column = exc.line, exc.column
        raise err from None
