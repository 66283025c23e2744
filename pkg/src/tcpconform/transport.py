"""Probe transport abstraction: sessions, events, and global send pacing.

Two implementations satisfy this contract: the deterministic in-process link
built by `netsim` and the raw-network adapter in `rawlink`. Probes are sent
exactly once (no retransmission machinery); a timeout on `next_event` is the
only loss signal the suite ever sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .segment import Segment, int_to_ip


class TransportError(Exception):
    """Base error for channel problems."""


class PortInUse(TransportError):
    """A live session already owns this 4-tuple."""


class NoRoute(TransportError):
    """The remote endpoint is not reachable from this link."""


class SessionClosed(TransportError):
    """Operation on a closed session."""


@dataclass(frozen=True)
class Endpoint:
    addr: int
    port: int

    def __str__(self) -> str:
        return f"{int_to_ip(self.addr)}:{self.port}"


@dataclass
class TcpIn:
    segment: Segment
    receive_time: float


@dataclass
class IcmpIn:
    raw: bytes
    source_addr: int
    receive_time: float


@dataclass
class Timeout:
    token: int
    receive_time: float


ChannelEvent = Union[TcpIn, IcmpIn, Timeout]


@dataclass
class PacerConfig:
    rate_pps: int = 10000
    burst: int = 64

    def validate(self) -> None:
        if self.rate_pps <= 0:
            raise ValueError(f"rate_pps must be positive, got {self.rate_pps}")
        if self.burst < 1:
            raise ValueError(f"burst must be >= 1, got {self.burst}")


class Pacer:
    """Token bucket over timestamps; shared by every session of a transport.

    `reserve(now)` hands out the earliest emission time: over any window of W
    seconds at most rate_pps * W + burst emissions are granted.
    """

    def __init__(self, config: PacerConfig):
        config.validate()
        self.config = config
        self._tokens = float(config.burst)
        self._last = 0.0

    def reserve(self, now: float) -> float:
        rate = float(self.config.rate_pps)
        if now > self._last:
            self._tokens = min(
                float(self.config.burst), self._tokens + (now - self._last) * rate
            )
            self._last = now
        if self._tokens >= 1.0:
            self._tokens -= 1.0
            return self._last
        wait = (1.0 - self._tokens) / rate
        emit_at = self._last + wait
        self._tokens = 0.0
        self._last = emit_at
        return emit_at


class Session:
    """One probe conversation, demultiplexed by its 4-tuple.

    Inbound TCP matching the tuple, and inbound ICMP whose quoted tuple
    matches it, land in this session's event stream in receipt order.
    """

    def __init__(self, transport: "Transport", local: Endpoint, remote: Endpoint):
        self.transport = transport
        self.local = local
        self.remote = remote
        self.closed = False
        self._timeout_serial = 0

    @property
    def four_tuple(self) -> tuple[int, int, int, int]:
        return (self.local.addr, self.local.port, self.remote.addr, self.remote.port)

    def send(self, segment: Segment) -> float:
        """Pace and transmit once; returns the emission time."""
        if self.closed:
            raise SessionClosed(f"session {self.local} -> {self.remote} is closed")
        return self.transport._send(self, segment)

    def next_event(self, deadline: float) -> ChannelEvent:
        """Next queued event, or a Timeout once `deadline` seconds elapse."""
        if self.closed:
            raise SessionClosed(f"session {self.local} -> {self.remote} is closed")
        self._timeout_serial += 1
        return self.transport._next_event(self, deadline, self._timeout_serial)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.transport._release(self)


class Transport:
    """Base for the simulated link and the raw-network adapter."""

    def __init__(self, pacer: Optional[PacerConfig] = None):
        self.pacer = Pacer(pacer or PacerConfig())
        self._sessions: dict[tuple[int, int, int, int], Session] = {}

    def now(self) -> float:
        raise NotImplementedError

    def open_session(self, local: Endpoint, remote: Endpoint) -> Session:
        key = (local.addr, local.port, remote.addr, remote.port)
        if key in self._sessions:
            raise PortInUse(f"4-tuple {local} -> {remote} already open")
        self._check_route(remote)
        session = self._make_session(local, remote)
        self._sessions[key] = session
        return session

    def match_session(
        self, src_addr: int, src_port: int, dst_addr: int, dst_port: int
    ) -> Optional[Session]:
        """Exact 4-tuple match, falling back to a unique (addrs, dst_port) match
        so NAT-rewritten source ports still correlate."""
        exact = self._sessions.get((src_addr, src_port, dst_addr, dst_port))
        if exact is not None:
            return exact
        candidates = [
            s
            for s in self._sessions.values()
            if s.local.addr == src_addr and s.remote.addr == dst_addr and s.remote.port == dst_port
        ]
        return candidates[0] if len(candidates) == 1 else None

    def _check_route(self, remote: Endpoint) -> None:
        pass

    def _make_session(self, local: Endpoint, remote: Endpoint) -> Session:
        raise NotImplementedError

    def _send(self, session: Session, segment: Segment) -> float:
        raise NotImplementedError

    def _next_event(self, session: Session, deadline: float, token: int) -> ChannelEvent:
        raise NotImplementedError

    def _release(self, session: Session) -> None:
        key = (session.local.addr, session.local.port, session.remote.addr, session.remote.port)
        self._sessions.pop(key, None)


@dataclass
class FrameLogEntry:
    time: float
    place: str
    direction: str
    raw: bytes


@dataclass
class FrameLog:
    """Optional hex dump of every frame a transport touched (debug aid)."""

    entries: list[FrameLogEntry] = field(default_factory=list)

    def add(self, time: float, place: str, direction: str, raw: bytes) -> None:
        self.entries.append(FrameLogEntry(time, place, direction, raw))

    def lines(self) -> list[str]:
        return [
            f"{e.time:.6f} {e.place} {e.direction} {e.raw.hex()}" for e in self.entries
        ]
