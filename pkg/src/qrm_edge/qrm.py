"""Quality and resource management: the collector's decision engine.

The :class:`Collector` is transport-free. A driver hands it every inbound
message together with the collector clock (``recv_ms``) and gets back the
messages to send. Every message in either direction goes through the
append-only :class:`MonitoringLog` first, and :func:`summarize` rebuilds the
per-node outcome from that log alone.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, Mapping

from .domain import ModeProfile, Policy, ReconfigCommand, TelemetrySample, band_index, validate_policy
from .energy import format_duration
from .metrics import MetricsError, TimedSegment, time_weighted_f1
from .protocol import Ack, Bye, Hello, WireMessage, decode, encode, encode_telemetry

log = logging.getLogger(__name__)


def decide(battery_pct: float, current_mode: int, policy: Policy, pending: bool) -> int | None:
    """Mode the node should switch to, or ``None`` to leave it alone.

    Only moves towards lower bands: a target whose band sits above the first
    band that uses ``current_mode`` is refused, and nothing is issued while
    a command is still unacknowledged.
    """
    if pending:
        return None
    idx = band_index(policy, battery_pct)
    target = policy.bands[idx].mode
    if target == current_mode:
        return None
    current_idx = next((i for i, b in enumerate(policy.bands) if b.mode == current_mode), -1)
    if idx < current_idx:
        return None
    return target


def encode_message(message: WireMessage) -> bytes:
    if type(message) is TelemetrySample:
        return encode_telemetry(message)
    return encode(message)


class MonitoringLog:
    """Append-only NDJSON record of all traffic, one entry per line.

    Entries carry a gapless ``seq``, the collector clock ``recv_ms``, the
    wall clock ``wall_time`` (the only field that differs between identical
    runs), the direction, and the message object exactly as sent on the wire.
    Lines that failed to decode are kept as an escaped ``raw`` string with
    an ``error``.
    """

    def __init__(self, sink: BinaryIO | None = None, wall_clock: Callable[[], float] = time.time):
        self.sink = sink
        self.seq = 0
        self.wall_clock = wall_clock
        self.listeners: list[Callable[[int, float, str, object], None]] = []

    def append(self, direction: str, recv_ms: float, message: WireMessage | None,
               line: bytes | None = None, error: str | None = None) -> int:
        """Record one message; ``line`` is its wire form, encoded here if omitted."""
        self.seq += 1
        if self.sink is not None:
            if line is None:
                line = encode_message(message)
            if line.endswith(b"\n"):
                line = line[:-1]
            if error is None:
                self.sink.write(_ENTRY % (self.seq, recv_ms, self.wall_clock(), direction.encode(), line))
            else:
                raw = json.dumps(line.decode(errors="replace")).encode()
                self.sink.write(_REJECTED % (self.seq, recv_ms, self.wall_clock(), direction.encode(),
                                             raw, json.dumps(error).encode()))
        for listener in self.listeners:
            listener(self.seq, recv_ms, direction, message if error is None else None)
        return self.seq


_ENTRY = b'{"seq":%d,"recv_ms":%r,"wall_time":%.6f,"direction":"%s","message":%s}\n'
_REJECTED = b'{"seq":%d,"recv_ms":%r,"wall_time":%.6f,"direction":"%s","raw":%s,"error":%s}\n'


def read_log(path: str | Path) -> Iterable[tuple[int, float, str, WireMessage | None]]:
    """Yield ``(seq, recv_ms, direction, message)``; rejected lines give ``None``."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            entry = json.loads(line)
            msg = entry.get("message")
            message = decode(json.dumps(msg, separators=(",", ":"))) if msg is not None else None
            yield entry["seq"], entry["recv_ms"], entry["direction"], message


def strip_wall_clock(text: str) -> str:
    """Log text with the ``wall_time`` values blanked, for run-to-run diffs."""
    out = []
    for line in text.splitlines(keepends=True):
        head, sep, rest = line.partition('"wall_time":')
        if sep:
            rest = rest[rest.index(","):]
        out.append(head + sep + rest)
    return "".join(out)


@dataclass
class NodeRecord:
    node_id: str
    policy: Policy
    capacity_wh: float
    class_labels: tuple[str, ...]
    mode: int
    reported_mode: int
    last_sample: TelemetrySample | None = None
    last_command_id: int = 0
    pending: ReconfigCommand | None = None
    closed: bool = False
    power_times: list[float] = field(default_factory=list)
    power_values: list[float] = field(default_factory=list)
    quiet_band: tuple[float, float, int] | None = None

    def average_power_w(self, window_ms: float) -> float | None:
        """Mean reported device power over the trailing ``window_ms``."""
        if not self.power_times:
            return None
        start = bisect.bisect_right(self.power_times, self.power_times[-1] - window_ms)
        values = self.power_values[start:]
        return sum(values) / len(values)

    def trim_window(self, window_ms: float) -> None:
        start = bisect.bisect_right(self.power_times, self.power_times[-1] - window_ms)
        del self.power_times[:start], self.power_values[:start]


class Collector:
    """Registry of nodes plus the reconfiguration policy in force for each."""

    def __init__(self, policies: Mapping[str, Policy], default_policy: Policy | None,
                 profiles: Mapping[int, ModeProfile], monitoring_log: MonitoringLog | None = None,
                 retry_timeout_s: float = 5.0, energy_window_s: float = 60.0):
        self.policies = dict(policies)
        self.default_policy = default_policy
        self.profiles = dict(profiles)
        for p in [*self.policies.values(), *([default_policy] if default_policy else [])]:
            validate_policy(p, self.profiles.keys())
        self.log = monitoring_log or MonitoringLog()
        self.retry_timeout_ms = 1000.0 * retry_timeout_s
        self.energy_window_ms = 1000.0 * energy_window_s
        self.nodes: dict[str, NodeRecord] = {}
        self.rejected = 0

    def policy_for(self, node_id: str) -> Policy:
        policy = self.policies.get(node_id, self.default_policy)
        if policy is None:
            raise KeyError(f"no policy configured for node {node_id!r}")
        return policy

    def handle(self, message: WireMessage, recv_ms: float, line: bytes | None = None) -> list[WireMessage]:
        """Process one inbound message; return outbound messages (already logged).

        ``line`` is the raw wire form when the message came off a socket; it is
        only needed for the log file and is re-encoded there when omitted.
        """
        kind = type(message)
        if kind is TelemetrySample:
            node = self.nodes.get(message.node_id)
            if node is None or node.closed:
                self.reject(line or encode_telemetry(message), recv_ms,
                            f"telemetry from unregistered node {message.node_id!r}")
                return []
            self.log.append("in", recv_ms, message, line)
            return self._send(self._ingest(node, message), recv_ms)
        if kind is Hello:
            self.log.append("in", recv_ms, message, line)
            self.register(message)
            return []
        if kind is Ack:
            self.log.append("in", recv_ms, message, line)
            self._ack(message)
            return []
        if kind is Bye:
            self.log.append("in", recv_ms, message, line)
            node = self.nodes.get(message.node_id)
            if node is not None:
                node.closed = True
            return []
        self.reject(line or repr(message).encode(), recv_ms, f"unexpected inbound {kind.__name__}")
        return []

    def reject(self, line: bytes | None, recv_ms: float, reason: str) -> None:
        self.rejected += 1
        log.warning("rejected line: %s", reason)
        self.log.append("in", recv_ms, None, line or b"", error=reason)

    def register(self, hello: Hello) -> NodeRecord:
        node = NodeRecord(hello.node_id, self.policy_for(hello.node_id), hello.capacity_wh,
                          hello.class_labels, hello.initial_mode, hello.initial_mode)
        self.nodes[hello.node_id] = node
        return node

    def ingest(self, sample: TelemetrySample) -> list[ReconfigCommand]:
        """Update the registry from ``sample`` and return commands to issue.

        Raises:
            KeyError: for a node that never said hello.
        """
        node = self.nodes.get(sample.node_id)
        if node is None:
            raise KeyError(f"telemetry from unregistered node {sample.node_id!r}")
        return self._ingest(node, sample)

    def _ingest(self, node: NodeRecord, sample: TelemetrySample) -> list[ReconfigCommand]:
        node.last_sample = sample
        node.reported_mode = sample.mode
        node.power_times.append(sample.timestamp_ms)
        node.power_values.append(sample.device_power_w)
        if len(node.power_times) > 4096:
            node.trim_window(self.energy_window_ms)
        pct = sample.battery_pct
        if pct <= 0.0:
            return []
        pending = node.pending
        if pending is not None:
            if sample.timestamp_ms - pending.issued_at_ms < self.retry_timeout_ms:
                return []
            log.info("node %s: command %d unacknowledged, retrying", node.node_id, pending.command_id)
            node.pending = None
        # same band and same mode as a previous no-op decision: nothing to do
        quiet = node.quiet_band
        if quiet is not None and quiet[0] < pct <= quiet[1] and quiet[2] == node.mode:
            return []
        target = decide(pct, node.mode, node.policy, False)
        if target is None:
            band = node.policy.bands[band_index(node.policy, pct)]
            node.quiet_band = (band.lower_pct, band.upper_pct, node.mode)
            return []
        node.last_command_id += 1
        cmd = ReconfigCommand(node.last_command_id, node.node_id, target, sample.timestamp_ms)
        node.pending = cmd
        return [cmd]

    def _ack(self, ack: Ack) -> None:
        node = self.nodes.get(ack.node_id)
        if node is None or node.pending is None or node.pending.command_id != ack.command_id:
            return
        node.mode = node.pending.target_mode
        node.pending = None

    def _send(self, messages: list[WireMessage], recv_ms: float) -> list[WireMessage]:
        for m in messages:
            self.log.append("out", recv_ms, m)
        return messages


# -- summaries --------------------------------------------------------------

@dataclass
class CommandRecord:
    command_id: int
    issued_at_ms: float
    target_mode: int
    battery_pct: float | None
    acked: bool = False


@dataclass
class NodeSummary:
    node_id: str
    initial_mode: int
    hello_ms: float
    bye_ms: float | None = None
    bye_reason: str | None = None
    label_seconds: dict[str, float] = field(default_factory=dict)
    mode_segments: list[tuple[int, float, float]] = field(default_factory=list)
    _closed_segments: list[tuple[int, float, float]] = field(default_factory=list)
    commands: list[CommandRecord] = field(default_factory=list)
    telemetry_count: int = 0
    last_ms: float | None = None
    last_battery_pct: float | None = None
    weighted_f1_pct: float | None = None
    _seg_mode: int = 0
    _seg_start: float = 0.0
    _prev_ms: float | None = None
    _label: str = ""
    _label_since: float = 0.0

    def _close_label(self, t: float) -> None:
        if self._label:
            seconds = (t - self._label_since) / 1000.0
            self.label_seconds[self._label] = self.label_seconds.get(self._label, 0.0) + seconds
        self._label_since = t

    @property
    def end_ms(self) -> float:
        if self.bye_ms is not None:
            return self.bye_ms
        return self.last_ms if self.last_ms is not None else self.hello_ms

    @property
    def working_time_s(self) -> float:
        return (self.end_ms - self.hello_ms) / 1000.0 if self.telemetry_count else 0.0

    @property
    def command_count(self) -> int:
        return len(self.commands)


class SummaryBuilder:
    """Folds log entries into per-node summaries; attach live or replay."""

    def __init__(self, profiles: Mapping[int, ModeProfile] | None = None):
        self.profiles = dict(profiles or {})
        self.nodes: dict[str, NodeSummary] = {}
        self.rejected = 0

    def observe(self, seq: int, recv_ms: float, direction: str, message) -> None:
        if message is None:
            self.rejected += 1
            return
        kind = type(message)
        if kind is TelemetrySample:
            s = self.nodes.get(message.node_id)
            if s is None:
                return
            # collector clock throughout, so real-time runs stay self-consistent
            t = recv_ms
            if message.label != s._label:
                s._close_label(t)
                s._label = message.label
            if message.mode != s._seg_mode:
                boundary = s._prev_ms if s._prev_ms is not None else t
                s._closed_segments.append((s._seg_mode, s._seg_start, boundary))
                s._seg_mode, s._seg_start = message.mode, boundary
            s._prev_ms = t
            s.telemetry_count += 1
            s.last_ms = t
            s.last_battery_pct = message.battery_pct
        elif kind is ReconfigCommand:
            s = self.nodes.get(message.node_id)
            if s is not None:
                s.commands.append(CommandRecord(message.command_id, message.issued_at_ms,
                                                message.target_mode, s.last_battery_pct))
        elif kind is Ack:
            s = self.nodes.get(message.node_id)
            if s is not None:
                for c in s.commands:
                    if c.command_id == message.command_id:
                        c.acked = True
        elif kind is Hello:
            self.nodes[message.node_id] = NodeSummary(message.node_id, message.initial_mode, recv_ms,
                                                      _seg_mode=message.initial_mode, _seg_start=recv_ms)
        elif kind is Bye:
            s = self.nodes.get(message.node_id)
            if s is not None:
                s.bye_ms, s.bye_reason = recv_ms, message.reason
                s._close_label(recv_ms)
                s._label = ""

    def finish(self) -> dict[str, NodeSummary]:
        """Close open mode segments and compute realised weighted F1."""
        for s in self.nodes.values():
            if s._label and s.last_ms is not None:
                s._close_label(s.last_ms)
                s._label = ""
            segments = list(s._closed_segments)
            if s.telemetry_count:
                segments.append((s._seg_mode, s._seg_start, s.end_ms))
            s.mode_segments = segments
            if self.profiles and s.working_time_s > 0:
                try:
                    s.weighted_f1_pct = time_weighted_f1(
                        TimedSegment((end - start) / 1000.0, self.profiles[mode].f1_pct)
                        for mode, start, end in segments if mode in self.profiles)
                except MetricsError:
                    s.weighted_f1_pct = None
        return self.nodes


def summarize(entries: Iterable[tuple[int, float, str, WireMessage | None]],
              profiles: Mapping[int, ModeProfile] | None = None) -> dict[str, NodeSummary]:
    """Per-node outcome of a (closed) monitoring log."""
    builder = SummaryBuilder(profiles)
    for entry in entries:
        builder.observe(*entry)
    return builder.finish()


def summary_text(summaries: Mapping[str, NodeSummary]) -> str:
    lines = []
    for node_id, s in sorted(summaries.items()):
        f1 = f"{s.weighted_f1_pct:.2f}" if s.weighted_f1_pct is not None else "n/a"
        lines.append(f"node {node_id}: working time {format_duration(s.working_time_s)} "
                     f"({s.working_time_s:.3f} s), {s.command_count} reconfiguration command(s), "
                     f"weighted F1 {f1}, end: {s.bye_reason or 'open'}")
        for c in s.commands:
            pct = f"{c.battery_pct:.4f}%" if c.battery_pct is not None else "?"
            lines.append(f"  t={c.issued_at_ms / 1000.0:.1f} s battery {pct} -> mode {c.target_mode}"
                         f"{'' if c.acked else ' (unacknowledged)'}")
        for mode, start, end in s.mode_segments:
            lines.append(f"  mode {mode}: {start / 1000.0:.1f} s .. {end / 1000.0:.1f} s")
        total = sum(s.label_seconds.values())
        for label, secs in sorted(s.label_seconds.items(), key=lambda kv: -kv[1]):
            share = 100.0 * secs / total if total else 0.0
            lines.append(f"  {label:<26s} {secs:10.1f} s  {share:5.1f}%")
    return "\n".join(lines) + "\n"


def histogram_csv(summaries: Mapping[str, NodeSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "label", "total_seconds"])
    for node_id, s in sorted(summaries.items()):
        for label, secs in sorted(s.label_seconds.items()):
            w.writerow([node_id, label, f"{secs:.3f}"])
    return buf.getvalue()


def timeline_csv(summaries: Mapping[str, NodeSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "segment", "mode", "start_s", "end_s"])
    for node_id, s in sorted(summaries.items()):
        for i, (mode, start, end) in enumerate(s.mode_segments):
            w.writerow([node_id, i, mode, f"{start / 1000.0:.3f}", f"{end / 1000.0:.3f}"])
    return buf.getvalue()
