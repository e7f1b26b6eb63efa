"""
Collector and nodes over TCP
============================

Real-time mode runs the collector as an asyncio TCP server. Each node gets
its own connection and a clock running ``speedup`` times faster than the
wall clock. A tiny battery keeps this demo to a second or so.
"""

import asyncio

from qrm_edge import config
from qrm_edge.config import NodeSpec
from qrm_edge.qrm import summary_text
from qrm_edge.runtime import simulate_realtime

cfg = config.load().with_overrides(
    capacity_wh=0.02,
    nodes=(NodeSpec("kitchen"), NodeSpec("bedroom", policy="scenario4")),
)

# port=0 asks the OS for a free port
result = asyncio.run(simulate_realtime(cfg, log_path=None, port=0, speedup=200.0))
print(summary_text(result.summaries))
