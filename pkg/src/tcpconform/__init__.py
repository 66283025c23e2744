"""tcpconform: active TCP conformance probing with path-blame localization.

Crafts raw IPv4/TCP probes for the mandatory behaviors every TCP speaker must
implement (checksum handling, option support, MSS limits, reserved flags,
urgent data), pins non-conformance on either the target host or an on-path
middlebox via TTL-encoded probe fans, and ships a deterministic virtual-time
network simulator for desk-scale validation of the whole pipeline.
"""

__version__ = "0.1.0"

from .segment import Segment, TcpFlags, TcpOption  # noqa: F401
from .suite import ConformanceSuite, Result, SuiteConfig, TestId, Verdict  # noqa: F401
from .transport import Endpoint  # noqa: F401
