"""Wire protocol: length-prefixed frames carrying canonical-JSON messages.

A frame is a 4-byte big-endian payload length followed by the payload.  The
payload is one JSON object whose ``type`` field names the message variant;
byte-valued fields are base64 text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from typing import Any, BinaryIO, ClassVar

from .ajo import _b64, _Reader, _unb64, dumps_canonical, load_json
from .errors import MalformedEncoding, MalformedPayload, Oversize, Truncated

HEADER = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024


class Message:
    TYPE: ClassVar[str]
    BYTES_FIELDS: ClassVar[tuple[str, ...]] = ()


_REGISTRY: dict[str, type[Message]] = {}


def _message(cls):
    cls = dataclass(cls)
    _REGISTRY[cls.TYPE] = cls
    return cls


# requests


@_message
class Consign(Message):
    TYPE = "Consign"
    BYTES_FIELDS = ("ajo",)
    ajo: bytes
    mode: str = "ASYNC"  # or "SYNC"


@_message
class Poll(Message):
    TYPE = "Poll"
    job_id: str


@_message
class RetrieveOutcome(Message):
    TYPE = "RetrieveOutcome"
    job_id: str


@_message
class Kill(Message):
    TYPE = "Kill"
    job_id: str


@_message
class ListVsites(Message):
    TYPE = "ListVsites"


@_message
class DescribeResources(Message):
    TYPE = "DescribeResources"
    vsite: str


# replies


@_message
class Consigned(Message):
    TYPE = "Consigned"
    job_id: str


@_message
class OutcomeReply(Message):
    TYPE = "OutcomeReply"
    BYTES_FIELDS = ("outcome",)
    job_id: str
    outcome: bytes


@_message
class StatusReply(Message):
    TYPE = "StatusReply"
    job_id: str
    statuses: dict = field(default_factory=dict)
    finished: bool = False
    code: str | None = None


@_message
class VsiteList(Message):
    TYPE = "VsiteList"
    names: list = field(default_factory=list)


@_message
class ResourceReply(Message):
    TYPE = "ResourceReply"
    vsite: str
    resources: dict = field(default_factory=dict)


@_message
class Error(Message):
    TYPE = "Error"
    code: str
    message: str = ""


_FIELD_TYPES = {"str": str, "dict": dict, "list": list, "bool": bool, "bytes": str}


def encode_message(msg: Message) -> bytes:
    doc: dict[str, Any] = {"type": msg.TYPE}
    for f in fields(msg):
        value = getattr(msg, f.name)
        doc[f.name] = _b64(value) if f.name in msg.BYTES_FIELDS else value
    return dumps_canonical(doc)


def decode_message(payload: bytes) -> Message:
    """Parse one payload; every failure is a :class:`MalformedPayload`."""
    try:
        r = _Reader(load_json(payload), "$")
        cls = _REGISTRY.get(r.get("type", str))
        if cls is None:
            raise MalformedEncoding(f"unknown message type {r.doc['type']!r}", path="$.type")
        kwargs = {}
        for f in fields(cls):
            if f.name in cls.BYTES_FIELDS:
                kwargs[f.name] = _unb64(r.get(f.name, str), f"$.{f.name}")
                continue
            typ = f.type if isinstance(f.type, str) else f.type.__name__
            if typ == "str | None":
                value = r.doc.get(f.name)
                if value is not None and not isinstance(value, str):
                    raise MalformedEncoding(f"field {f.name!r} has the wrong type", path=f"$.{f.name}")
                kwargs[f.name] = value
            else:
                kwargs[f.name] = r.get(f.name, _FIELD_TYPES[typ])
        return cls(**kwargs)
    except MalformedEncoding as exc:
        raise MalformedPayload(str(exc)) from None


def pack_frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise Oversize(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(payload)) + payload


def frame_encode(msg: Message) -> bytes:
    return pack_frame(encode_message(msg))


class FrameDecoder:
    """Incremental frame parser tolerant of arbitrarily split or merged reads."""

    def __init__(self, max_size: int = MAX_FRAME):
        self.max_size = max_size
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            (length,) = HEADER.unpack_from(self._buf)
            if length > self.max_size:
                raise Oversize(f"frame announces {length} bytes, limit is {self.max_size}")
            if len(self._buf) < HEADER.size + length:
                break
            out.append(bytes(self._buf[HEADER.size : HEADER.size + length]))
            del self._buf[: HEADER.size + length]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)

    def eof(self) -> None:
        if self._buf:
            raise Truncated(f"connection closed with {len(self._buf)} bytes of an unfinished frame")


def read_frame(stream: BinaryIO, max_size: int = MAX_FRAME) -> bytes | None:
    """Read one frame payload from a blocking stream; ``None`` on clean EOF."""
    header = _read_exact(stream, HEADER.size, allow_eof=True)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > max_size:
        raise Oversize(f"frame announces {length} bytes, limit is {max_size}")
    payload = _read_exact(stream, length, allow_eof=False)
    assert payload is not None
    return payload


def _read_exact(stream: BinaryIO, n: int, allow_eof: bool) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if allow_eof and not buf:
                return None
            raise Truncated(f"stream ended after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def frame_decode(data: bytes) -> list[Message]:
    """Decode a complete byte string holding zero or more frames."""
    dec = FrameDecoder()
    payloads = dec.feed(data)
    dec.eof()
    return [decode_message(p) for p in payloads]
