"""
The wire format up close
========================

One JSON object per line, closed schema, at most 1024 bytes.
"""

import json

from qrm_edge.domain import TelemetrySample
from qrm_edge.protocol import Ack, LineReader, ProtocolError, decode, encode

sample = TelemetrySample("node-1", 2600.0, 0, 1.58, 4.77, 42.9, 30.0, 99.927778, "cooking", 0.87)
line = encode(sample)
print(line)
assert decode(line) == sample

###############################################################################
# Anything outside the schema is refused. This is what keeps camera frames
# off the network.

obj = json.loads(line)
obj["frame_data"] = "/9j/4AAQSkZJRg..."
try:
    decode(json.dumps(obj))
except ProtocolError as exc:
    print(type(exc).__name__, "-", exc)

###############################################################################
# A stream reader copes with arbitrary chunking and loses only the broken
# line.

stream = encode(Ack(1, "node-1")) + b'{"type":"ack","comm\n' + encode(Ack(2, "node-1"))
reader = LineReader()
for chunk in (stream[:10], stream[10:40], stream[40:]):
    for item in reader.feed(chunk):
        print("  ", item if not isinstance(item, ProtocolError) else f"error: {item}")
