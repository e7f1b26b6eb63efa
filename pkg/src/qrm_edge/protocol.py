"""Newline-delimited JSON codec for node <-> collector traffic.

Every message is one UTF-8 JSON object on one line, terminated by a single
LF, with a ``"type"`` discriminator first and the remaining fields in the
fixed order of ``FIELDS``. Reals are rounded to 6 decimal places. The schema
is closed: unknown or missing fields are rejected, which is what keeps frame
data or any other payload off the wire. See ``docs/protocol.md``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Union

from .domain import DomainError, ReconfigCommand, TelemetrySample

MAX_LINE_BYTES = 1024
DEFAULT_PORT = 7171
MAX_TEXT = 64
MAX_LABELS = 64


class ProtocolError(ValueError):
    """Base class for every rejected line.

    ``line`` holds the offending bytes when the error came out of a
    :class:`LineReader`.
    """

    line: bytes = b""


class FramingError(ProtocolError):
    """Line truncated or over-long; the reader resynchronises at the next LF."""


class MessageTooLarge(ProtocolError):
    pass


class MalformedMessage(ProtocolError):
    """Not a JSON object."""


class UnknownMessageType(ProtocolError):
    pass


class UnknownField(ProtocolError):
    pass


class MissingField(ProtocolError):
    pass


class InvalidValue(ProtocolError):
    """Wrong type or out-of-range value."""


@dataclass(frozen=True)
class Hello:
    node_id: str
    capacity_wh: float
    initial_mode: int
    class_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        if not self.capacity_wh > 0:
            raise DomainError(f"capacity must be > 0, got {self.capacity_wh}")
        if self.initial_mode < 0:
            raise DomainError(f"negative initial mode {self.initial_mode}")
        if len(self.class_labels) > MAX_LABELS:
            raise DomainError(f"more than {MAX_LABELS} class labels")


@dataclass(frozen=True)
class Ack:
    command_id: int
    node_id: str

    def __post_init__(self):
        if self.command_id < 0:
            raise DomainError(f"negative command id {self.command_id}")


@dataclass(frozen=True)
class Bye:
    node_id: str
    reason: str


WireMessage = Union[Hello, TelemetrySample, ReconfigCommand, Ack, Bye]

# field kinds: s = text, i = integer, f = real, L = list of text
FIELDS: dict[str, tuple[tuple[str, str], ...]] = {
    "hello": (("node_id", "s"), ("capacity_wh", "f"), ("initial_mode", "i"), ("class_labels", "L")),
    "telemetry": (
        ("node_id", "s"), ("timestamp_ms", "f"), ("mode", "i"), ("gpu_power_w", "f"),
        ("device_power_w", "f"), ("temperature_c", "f"), ("fps", "f"), ("battery_pct", "f"),
        ("label", "s"), ("confidence", "f"),
    ),
    "reconfig": (("command_id", "i"), ("node_id", "s"), ("target_mode", "i"), ("issued_at_ms", "f")),
    "ack": (("command_id", "i"), ("node_id", "s")),
    "bye": (("node_id", "s"), ("reason", "s")),
}
TYPES: dict[str, type] = {
    "hello": Hello, "telemetry": TelemetrySample, "reconfig": ReconfigCommand, "ack": Ack, "bye": Bye,
}
TAGS = {cls: tag for tag, cls in TYPES.items()}

_dumps_str = json.JSONEncoder(ensure_ascii=False).encode


def _real(x: float) -> str:
    # "%.6f" is correctly rounded, so float(_real(x)) == round(x, 6)
    s = "%.6f" % x
    if "n" in s:
        raise InvalidValue(f"non-finite number {x}")
    s = s.rstrip("0")
    if s[-1] == ".":
        s += "0"
    return "0.0" if s == "-0.0" else s


def quantize(x: float) -> float:
    """``x`` at the 6-decimal resolution used on the wire."""
    return float("%.6f" % x)


@lru_cache(maxsize=4096)
def _text(s: str) -> str:
    if not isinstance(s, str):
        raise InvalidValue(f"expected text, got {type(s).__name__}")
    if len(s) > MAX_TEXT:
        raise InvalidValue(f"text field longer than {MAX_TEXT} characters")
    return _dumps_str(s)


def _render(kind: str, value) -> str:
    if kind == "f":
        return _real(value)
    if kind == "i":
        return str(int(value))
    if kind == "s":
        return _text(value)
    return "[" + ",".join(_text(v) for v in value) + "]"


def encode(message: WireMessage) -> bytes:
    """Serialise ``message`` as one LF-terminated line.

    Raises:
        MessageTooLarge: if the line exceeds ``MAX_LINE_BYTES``.
    """
    tag = TAGS.get(type(message))
    if tag is None:
        raise UnknownMessageType(f"cannot encode {type(message).__name__}")
    body = ",".join(f'"{name}":{_render(kind, getattr(message, name))}' for name, kind in FIELDS[tag])
    line = f'{{"type":"{tag}",{body}}}\n'.encode()
    if len(line) > MAX_LINE_BYTES:
        raise MessageTooLarge(f"{tag} message is {len(line)} bytes (limit {MAX_LINE_BYTES})")
    return line


@lru_cache(maxsize=1024)
def _telemetry_middle(mode: int, gpu_w: float, device_w: float, temp_c: float, fps: float) -> str:
    return (f'"mode":{int(mode)},"gpu_power_w":{_real(gpu_w)},"device_power_w":{_real(device_w)},'
            f'"temperature_c":{_real(temp_c)},"fps":{_real(fps)}')


@lru_cache(maxsize=4096)
def _telemetry_tail(label: str, confidence: float) -> str:
    return f'"label":{_text(label)},"confidence":{_real(confidence)}}}\n'


def encode_telemetry(s: TelemetrySample) -> bytes:
    """Hot-path equivalent of ``encode`` for telemetry samples."""
    node_id, timestamp_ms, mode, gpu_w, device_w, temp_c, fps, pct, label, conf = s
    line = (
        f'{{"type":"telemetry","node_id":{_text(node_id)},"timestamp_ms":{_real(timestamp_ms)},'
        f'{_telemetry_middle(mode, gpu_w, device_w, temp_c, fps)},"battery_pct":{_real(pct)},'
        f'{_telemetry_tail(label, conf)}'
    ).encode()
    if len(line) > MAX_LINE_BYTES:
        raise MessageTooLarge(f"telemetry message is {len(line)} bytes (limit {MAX_LINE_BYTES})")
    return line


def _check(kind: str, name: str, value):
    if kind == "f":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidValue(f"{name}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise InvalidValue(f"{name}: non-finite number")
        return value
    if kind == "i":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidValue(f"{name}: expected an integer, got {value!r}")
        return value
    if kind == "s":
        if not isinstance(value, str):
            raise InvalidValue(f"{name}: expected text, got {type(value).__name__}")
        if len(value) > MAX_TEXT:
            raise InvalidValue(f"{name}: longer than {MAX_TEXT} characters")
        return value
    if not isinstance(value, list) or len(value) > MAX_LABELS:
        raise InvalidValue(f"{name}: expected a list of at most {MAX_LABELS} labels")
    return tuple(_check("s", name, v) for v in value)


def decode(line: bytes | str) -> WireMessage:
    """Parse and strictly validate one line (trailing LF optional).

    Raises a distinct :class:`ProtocolError` subclass per failure kind.
    """
    if isinstance(line, str):
        line = line.encode()
    if len(line) > MAX_LINE_BYTES:
        raise MessageTooLarge(f"line is {len(line)} bytes (limit {MAX_LINE_BYTES})")
    if line.endswith(b"\n"):
        line = line[:-1]
    if b"\n" in line:
        raise FramingError("embedded LF inside one message")
    try:
        obj = json.loads(line)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedMessage(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedMessage("message is not a JSON object")
    tag = obj.pop("type", None)
    if tag not in FIELDS:
        raise UnknownMessageType(f"unknown message type {tag!r}")
    spec = FIELDS[tag]
    names = {name for name, _ in spec}
    extra = obj.keys() - names
    if extra:
        raise UnknownField(f"{tag}: unknown field(s) {sorted(extra)}")
    missing = names - obj.keys()
    if missing:
        raise MissingField(f"{tag}: missing field(s) {sorted(missing)}")
    kwargs = {name: _check(kind, name, obj[name]) for name, kind in spec}
    try:
        return TYPES[tag](**kwargs)
    except DomainError as exc:
        raise InvalidValue(f"{tag}: {exc}") from None


class LineReader:
    """Incremental framer: feed stream chunks, get one result per line.

    Results are decoded messages or :class:`ProtocolError` instances, so one
    bad line never takes down the lines after it.
    """

    def __init__(self, limit: int = MAX_LINE_BYTES):
        self.limit = limit
        self._buf = bytearray()
        self._discarding = False

    def feed(self, chunk: bytes) -> list[WireMessage | ProtocolError]:
        out: list[WireMessage | ProtocolError] = []
        self._buf += chunk
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                if not self._discarding and len(self._buf) > self.limit:
                    out.append(FramingError(f"line exceeds {self.limit} bytes; skipping to next LF"))
                    self._discarding = True
                if self._discarding:
                    self._buf.clear()
                return out
            line = bytes(self._buf[: nl + 1])
            del self._buf[: nl + 1]
            if self._discarding:
                self._discarding = False
                continue
            try:
                out.append(decode(line))
            except ProtocolError as exc:
                exc.line = line
                out.append(exc)

    def close(self) -> list[ProtocolError]:
        """Report a trailing partial line as a framing error."""
        leftover = bool(self._buf) and not self._discarding
        self._buf.clear()
        self._discarding = False
        return [FramingError("truncated line at end of stream")] if leftover else []


def iter_messages(chunks: Iterable[bytes]) -> Iterator[WireMessage | ProtocolError]:
    reader = LineReader()
    for chunk in chunks:
        yield from reader.feed(chunk)
    yield from reader.close()
