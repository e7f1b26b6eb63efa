"""Wiring nodes to the collector, in virtual time or over TCP.

Virtual time: every node is a generator of timestamped events and a single
loop merges them in ``(time, node index)`` order, so a run is a pure function
of its configuration. Messages cross the node/collector boundary as the
same immutable objects a socket peer would decode; they are encoded only when
the monitoring log writes them out.

Real time: the collector listens on TCP and each node is an asyncio task with
its own connection; node clocks run at ``speedup`` times wall time.
"""

from __future__ import annotations

import asyncio
import gc
import heapq
import itertools
import logging
import math
import time
from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .config import ScenarioConfig
from .domain import Policy, ReconfigCommand
from .nodesim import BatchCompleted, BatteryExhausted, ModeSwitched, NodeConfig, NodeSim, TelemetryDue
from .protocol import (
    Ack, Bye, Hello, LineReader, MAX_LINE_BYTES, ProtocolError, encode, encode_telemetry,
)
from .qrm import Collector, MonitoringLog, NodeSummary, SummaryBuilder

log = logging.getLogger(__name__)

EXHAUSTED = "battery_exhausted"


@dataclass
class NodeOutcome:
    node_id: str
    batches: int = 0
    switches: list[ModeSwitched] = field(default_factory=list)
    exhausted_ms: float | None = None
    sim: NodeSim | None = None


@dataclass
class SimulationResult:
    summaries: dict[str, NodeSummary]
    outcomes: dict[str, NodeOutcome]
    collector: Collector
    log_entries: int


def hello_for(cfg: NodeConfig) -> Hello:
    return Hello(cfg.node_id, cfg.battery.capacity_wh, cfg.initial_mode, cfg.class_labels)


def run_virtual(nodes: Sequence[NodeConfig], collector: Collector,
                until_ms: float = math.inf) -> SimulationResult:
    """Run every node to exhaustion (or ``until_ms``) against ``collector``."""
    # millions of short-lived, acyclic objects: cyclic GC passes are pure overhead
    gc_enabled = gc.isenabled()
    gc.disable()
    try:
        return _run_virtual(nodes, collector, until_ms)
    finally:
        if gc_enabled:
            gc.enable()


def _run_virtual(nodes: Sequence[NodeConfig], collector: Collector, until_ms: float) -> SimulationResult:
    builder = SummaryBuilder(collector.profiles)
    collector.log.listeners.append(builder.observe)
    handle = collector.handle
    sims = [NodeSim(cfg) for cfg in nodes]
    outcomes = {cfg.node_id: NodeOutcome(cfg.node_id, sim=sim) for cfg, sim in zip(nodes, sims)}
    gens = []
    heap: list[tuple[float, int, object]] = []
    for i, sim in enumerate(sims):
        hello = hello_for(sim.config)
        handle(hello, 0.0)
        gen = sim.iter_events(until_ms)
        gens.append(gen)
        first = next(gen, None)
        if first is not None:
            heap.append((first.timestamp_ms, i, first))
    heapq.heapify(heap)

    if len(sims) == 1 and heap:
        # one node: no merge needed
        _, i, first = heap[0]
        heap = []
        _run_single(sims[0], first, gens[0], handle, outcomes[sims[0].config.node_id])

    while heap:
        t, i, event = heap[0]
        sim = sims[i]
        kind = type(event)
        if kind is TelemetryDue:
            sample = sim.telemetry()
            for cmd in handle(sample, t):
                _deliver(sim, cmd, handle, t, outcomes[sim.config.node_id])
        elif kind is BatchCompleted:
            outcomes[sim.config.node_id].batches += 1
        elif kind is ModeSwitched:
            outcomes[sim.config.node_id].switches.append(event)
        elif kind is BatteryExhausted:
            outcomes[sim.config.node_id].exhausted_ms = t
            bye = Bye(sim.config.node_id, EXHAUSTED)
            handle(bye, t)
        nxt = next(gens[i], None)
        if nxt is None:
            heapq.heappop(heap)
        else:
            heapq.heapreplace(heap, (nxt.timestamp_ms, i, nxt))

    collector.log.listeners.remove(builder.observe)
    return SimulationResult(builder.finish(), outcomes, collector, collector.log.seq)


def _run_single(sim: NodeSim, first, gen, handle, outcome: NodeOutcome) -> None:
    node_id = sim.config.node_id
    for event in itertools.chain((first,), gen):
        kind = type(event)
        if kind is TelemetryDue:
            sample = sim.telemetry()
            cmds = handle(sample, event.timestamp_ms)
            for cmd in cmds:
                _deliver(sim, cmd, handle, event.timestamp_ms, outcome)
        elif kind is BatchCompleted:
            outcome.batches += 1
        elif kind is ModeSwitched:
            outcome.switches.append(event)
        elif kind is BatteryExhausted:
            outcome.exhausted_ms = event.timestamp_ms
            bye = Bye(node_id, EXHAUSTED)
            handle(bye, event.timestamp_ms)


def _deliver(sim: NodeSim, cmd, handle, t: float, outcome: NodeOutcome) -> None:
    if type(cmd) is not ReconfigCommand or cmd.node_id != sim.config.node_id:
        return
    switched = sim.apply_reconfig(cmd)
    if switched is not None:
        outcome.switches.append(switched)
    ack = Ack(cmd.command_id, cmd.node_id)
    handle(ack, t)


def build_collector(config: ScenarioConfig, monitoring_log: MonitoringLog,
                    policy_override: str | None = None) -> Collector:
    policies: dict[str, Policy] = {}
    for spec in config.nodes:
        name = policy_override or spec.policy or config.default_policy
        policies[spec.id] = config.policy(name)
    return Collector(policies, config.policy(policy_override or config.default_policy),
                     config.profiles, monitoring_log,
                     retry_timeout_s=config.simulation.retry_timeout_s,
                     energy_window_s=config.simulation.energy_window_s)


def node_configs(config: ScenarioConfig, policy_override: str | None = None) -> list[NodeConfig]:
    if policy_override:
        config = config.with_overrides(
            nodes=tuple(replace(n, policy=policy_override) for n in config.nodes))
    return config.node_configs()


def simulate(config: ScenarioConfig, log_path: str | Path | None = None,
             policy: str | None = None) -> SimulationResult:
    """Virtual-time run of every configured node, logging to ``log_path``."""
    sink_ctx = open(log_path, "wb") if log_path else nullcontext(None)
    with sink_ctx as sink:
        mlog = MonitoringLog(sink)
        collector = build_collector(config, mlog, policy)
        return run_virtual(node_configs(config, policy), collector)


# -- real time over TCP -------------------------------------------------------

class CollectorServer:
    """asyncio TCP front-end for a :class:`Collector`.

    One connection per node; the collector clock is wall time since start
    scaled by ``speedup``. All handling happens on the event loop thread, so
    per-node state and the log see one writer at a time.
    """

    def __init__(self, collector: Collector, host: str = "127.0.0.1", port: int = 7171,
                 speedup: float = 1.0):
        self.collector = collector
        self.host, self.port, self.speedup = host, port, speedup
        self.writers: dict[str, asyncio.StreamWriter] = {}
        self.finished: set[str] = set()
        self.server: asyncio.AbstractServer | None = None
        self._t0 = 0.0

    def now_ms(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0 * self.speedup

    async def start(self) -> None:
        self._t0 = time.monotonic()
        self.server = await asyncio.start_server(self._serve, self.host, self.port)
        self.port = self.server.sockets[0].getsockname()[1]

    async def close(self) -> None:
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        framer = LineReader()
        node_id = None
        try:
            while chunk := await reader.read(4096):
                for item in framer.feed(chunk):
                    if isinstance(item, ProtocolError):
                        self.collector.reject(item.line, self.now_ms(), f"{type(item).__name__}: {item}")
                        continue
                    if isinstance(item, Hello):
                        node_id = item.node_id
                        self.writers[node_id] = writer
                    for out in self.collector.handle(item, self.now_ms()):
                        target = self.writers.get(getattr(out, "node_id", ""))
                        if target is not None:
                            target.write(encode(out))
                    if isinstance(item, Bye):
                        self.finished.add(item.node_id)
                await writer.drain()
        except ConnectionError:
            log.warning("connection to %s lost", node_id)
        finally:
            if node_id is not None:
                self.writers.pop(node_id, None)
            writer.close()


async def run_node_tcp(cfg: NodeConfig, host: str, port: int, speedup: float = 1.0,
                       stop: asyncio.Event | None = None) -> NodeOutcome:
    """Drive one simulated node against a live collector until exhaustion or ``stop``."""
    sim = NodeSim(cfg)
    outcome = NodeOutcome(cfg.node_id, sim=sim)
    reader, writer = await asyncio.open_connection(host, port, limit=MAX_LINE_BYTES * 4)
    writer.write(encode(hello_for(cfg)))
    t0 = time.monotonic()
    tick_s = cfg.telemetry_period_ms / 1000.0 / speedup

    async def receive():
        framer = LineReader()
        while chunk := await reader.read(4096):
            for item in framer.feed(chunk):
                if isinstance(item, ReconfigCommand):
                    switched = sim.apply_reconfig(item)
                    if switched is not None:
                        outcome.switches.append(switched)
                    writer.write(encode(Ack(item.command_id, cfg.node_id)))
                elif isinstance(item, ProtocolError):
                    log.warning("node %s dropped a line: %s", cfg.node_id, item)

    rx = asyncio.create_task(receive())
    try:
        while not sim.exhausted and not (stop is not None and stop.is_set()):
            now_ms = (time.monotonic() - t0) * 1000.0 * speedup
            # iterate lazily so each sample reflects the node at its own tick
            for event in sim.iter_events(now_ms):
                if isinstance(event, TelemetryDue):
                    writer.write(encode_telemetry(sim.telemetry()))
                elif isinstance(event, BatchCompleted):
                    outcome.batches += 1
                elif isinstance(event, ModeSwitched):
                    outcome.switches.append(event)
                elif isinstance(event, BatteryExhausted):
                    outcome.exhausted_ms = event.timestamp_ms
            if not sim.exhausted and now_ms > sim.clock_ms:
                sim.clock_ms = now_ms
            await writer.drain()
            await asyncio.sleep(tick_s)
        writer.write(encode(Bye(cfg.node_id, EXHAUSTED if sim.exhausted else "stopped")))
        await writer.drain()
    finally:
        rx.cancel()
        writer.close()
    return outcome


async def simulate_realtime(config: ScenarioConfig, log_path: str | Path | None = None,
                            policy: str | None = None, port: int | None = None,
                            speedup: float | None = None, stop: asyncio.Event | None = None,
                            ) -> SimulationResult:
    """Collector plus all nodes as asyncio tasks on one event loop.

    Raises:
        OSError: if the port cannot be bound.
    """
    speedup = speedup or config.simulation.speedup
    sink_ctx = open(log_path, "wb") if log_path else nullcontext(None)
    with sink_ctx as sink:
        mlog = MonitoringLog(sink)
        collector = build_collector(config, mlog, policy)
        builder = SummaryBuilder(collector.profiles)
        mlog.listeners.append(builder.observe)
        server = CollectorServer(collector, config.output.host,
                                 config.output.port if port is None else port, speedup)
        await server.start()
        try:
            outcomes = await asyncio.gather(*(
                run_node_tcp(cfg, server.host, server.port, speedup, stop)
                for cfg in node_configs(config, policy)))
            # let the collector drain the final Bye lines
            for _ in range(200):
                if len(server.finished) >= len(outcomes):
                    break
                await asyncio.sleep(0.01)
        finally:
            await server.close()
    return SimulationResult(builder.finish(), {o.node_id: o for o in outcomes}, collector, mlog.seq)
