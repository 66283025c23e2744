"""Deterministic in-process network for desk-scale validation.

A topology is a client link, an ordered chain of TTL-decrementing routers
(some of which rewrite traffic), and a scripted TCP responder whose named
deviations reproduce the behaviors observed on real stacks: checksum
acceptance, MSS floor/default violations, crashes or silence on urgent data,
reserved-bit echo or drops, deferred accept, and option intolerance.

Everything runs on a virtual clock driven by a single event heap, so a full
scan of a topology finishes in milliseconds of wall time and two runs with
the same seed produce byte-identical event sequences.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import segment as seg
from .segment import Segment, TcpFlags, TcpOption
from .transport import (
    Endpoint,
    FrameLog,
    IcmpIn,
    NoRoute,
    PacerConfig,
    Session,
    TcpIn,
    Timeout,
    Transport,
)


class InvalidSpec(Exception):
    """Topology description is internally inconsistent."""


class ScriptError(Exception):
    """Scripted exchange is malformed."""


class Deviation(str, Enum):
    IGNORE_BAD_CHECKSUM = "IGNORE_BAD_CHECKSUM"
    MSS_FLOOR_536 = "MSS_FLOOR_536"
    DEFAULT_MSS_1024 = "DEFAULT_MSS_1024"
    CRASH_ON_URGENT = "CRASH_ON_URGENT"
    DROP_URGENT_SILENTLY = "DROP_URGENT_SILENTLY"
    RST_ON_URGENT = "RST_ON_URGENT"
    DROP_RESERVED_SYN = "DROP_RESERVED_SYN"
    ECHO_RESERVED_BITS = "ECHO_RESERVED_BITS"
    DEFER_ACCEPT = "DEFER_ACCEPT"
    DROP_UNKNOWN_OPTION = "DROP_UNKNOWN_OPTION"
    RST_ON_OPTIONS = "RST_ON_OPTIONS"


@dataclass
class StackProfile:
    """Endpoint behavior: a conformant responder plus named deviations."""

    name: str = "conformant"
    deviations: frozenset[Deviation] = frozenset()
    response_body_len: int = 2000
    restart_after_crash: bool = False

    def has(self, deviation: Deviation) -> bool:
        return deviation in self.deviations

    @classmethod
    def from_dict(cls, data: dict) -> "StackProfile":
        try:
            deviations = frozenset(Deviation(d) for d in data.get("deviations", []))
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from exc
        return cls(
            name=data.get("name", "conformant"),
            deviations=deviations,
            response_body_len=int(data.get("response_body_len", 2000)),
            restart_after_crash=bool(data.get("restart_after_crash", False)),
        )


class QuoteLen(str, Enum):
    FULL = "FULL"
    MIN_28 = "MIN_28"


class MiddleboxKind(str, Enum):
    PLAIN = "PLAIN"
    MSS_CLAMP = "MSS_CLAMP"
    MSS_INSERT = "MSS_INSERT"
    STRIP_PADDING = "STRIP_PADDING"
    STRIP_UNKNOWN_OPTION = "STRIP_UNKNOWN_OPTION"
    CLEAR_RESERVED = "CLEAR_RESERVED"
    FIX_CHECKSUM = "FIX_CHECKSUM"
    NAT_REWRITE = "NAT_REWRITE"


@dataclass
class MiddleboxSpec:
    hop: int
    kind: MiddleboxKind
    value: int = 0
    quote_len: QuoteLen = QuoteLen.FULL

    @classmethod
    def from_dict(cls, data: dict) -> "MiddleboxSpec":
        try:
            kind = MiddleboxKind(data["kind"].upper())
            quote = QuoteLen(data.get("quote_len", "FULL").upper())
        except (KeyError, ValueError) as exc:
            raise InvalidSpec(f"bad middlebox entry {data}: {exc}") from exc
        return cls(
            hop=int(data.get("hop", 1)),
            kind=kind,
            value=int(data.get("value", 0)),
            quote_len=quote,
        )


DEFAULT_PATH_LEN = 4
DEFAULT_CLIENT_ADDR = "192.0.2.1"
DEFAULT_ENDPOINT_ADDR = "198.51.100.10"
PER_HOP_LATENCY = 0.001
RESPONSE_THINK_DELAY = 0.01
RESTART_DELAY = 0.25
SYNACK_RTO_FIRST = 1.0
SYNACK_RTO_RETRIES = 3
ENDPOINT_MSS = 1460
DEFAULT_SEND_MSS = 536
NAT_PORT_DELTA = 1000


@dataclass
class Topology:
    """Full description of one simulated path and its endpoint."""

    profile: StackProfile = field(default_factory=StackProfile)
    middleboxes: list[MiddleboxSpec] = field(default_factory=list)
    path_len: Optional[int] = None
    endpoint_addr: str = DEFAULT_ENDPOINT_ADDR
    endpoint_port: int = 80
    client_addr: str = DEFAULT_CLIENT_ADDR
    seed: int = 0
    blackhole: bool = False
    quote_len: QuoteLen = QuoteLen.FULL

    def resolved_path_len(self) -> int:
        deepest = max((mb.hop for mb in self.middleboxes), default=0)
        return max(self.path_len or DEFAULT_PATH_LEN, deepest)

    def validate(self) -> None:
        hops = [mb.hop for mb in self.middleboxes]
        if any(h < 1 for h in hops):
            raise InvalidSpec(f"middlebox hop numbers must be >= 1, got {hops}")
        if len(hops) != len(set(hops)):
            raise InvalidSpec(f"duplicate middlebox hops in {hops}")
        if self.path_len is not None and self.path_len < 1:
            raise InvalidSpec(f"path_len must be >= 1, got {self.path_len}")
        if not 0 < self.endpoint_port <= 0xFFFF:
            raise InvalidSpec(f"endpoint port {self.endpoint_port} out of range")

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        topo = cls(
            profile=StackProfile.from_dict(data.get("profile", {})),
            middleboxes=[MiddleboxSpec.from_dict(m) for m in data.get("middleboxes", [])],
            path_len=data.get("path_len"),
            endpoint_addr=data.get("endpoint_addr", DEFAULT_ENDPOINT_ADDR),
            endpoint_port=int(data.get("endpoint_port", 80)),
            client_addr=data.get("client_addr", DEFAULT_CLIENT_ADDR),
            seed=int(data.get("seed", 0)),
            blackhole=bool(data.get("blackhole", False)),
        )
        topo.validate()
        return topo


def _rewrite(spec: MiddleboxSpec, segment: Segment) -> bool:
    """Apply one middlebox's rewrite in place; True when bytes changed."""
    tcp = segment.tcp
    if spec.kind is MiddleboxKind.MSS_CLAMP:
        changed = False
        if tcp.flags & TcpFlags.SYN:
            for opt in tcp.options:
                if opt.kind == TcpOption.MSS and opt.mss_value != spec.value:
                    opt.payload = TcpOption.mss(spec.value).payload
                    changed = True
        return changed
    if spec.kind is MiddleboxKind.MSS_INSERT:
        if tcp.flags & TcpFlags.SYN and not any(
            o.kind == TcpOption.MSS for o in tcp.options
        ):
            tcp.options = tcp.options + [TcpOption.mss(spec.value)]
            return True
        return False
    if spec.kind is MiddleboxKind.STRIP_PADDING:
        kept = [o for o in tcp.options if o.kind not in (TcpOption.EOOL, TcpOption.NOOP)]
        if len(kept) != len(tcp.options):
            tcp.options = kept
            return True
        return False
    if spec.kind is MiddleboxKind.STRIP_UNKNOWN_OPTION:
        kept = [
            o
            for o in tcp.options
            if o.kind in (TcpOption.EOOL, TcpOption.NOOP, TcpOption.MSS)
        ]
        if len(kept) != len(tcp.options):
            tcp.options = kept
            return True
        return False
    if spec.kind is MiddleboxKind.CLEAR_RESERVED:
        if tcp.reserved_bits != 0:
            tcp.reserved_bits = 0
            return True
        return False
    if spec.kind is MiddleboxKind.FIX_CHECKSUM:
        correct = seg.compute_tcp_checksum(segment)
        if tcp.checksum != correct:
            tcp.checksum = correct
            return True
        return False
    if spec.kind is MiddleboxKind.NAT_REWRITE:
        tcp.source_port = (tcp.source_port + NAT_PORT_DELTA) % 65536 or 1
        return True
    return False


class TcpResponder:
    """Scripted endpoint TCP state machine, conformant unless told otherwise.

    Immediate replies come back from `step`; deferred-accept retransmissions
    and crash restarts go through the injected scheduler so they run on the
    owning engine's clock.
    """

    def __init__(
        self,
        profile: StackProfile,
        addr: int,
        port: int,
        rng: random.Random,
        schedule: Optional[Callable[[float, Callable[[], None]], None]] = None,
        emit_late: Optional[Callable[[Segment], None]] = None,
    ):
        self.profile = profile
        self.addr = addr
        self.port = port
        self.rng = rng
        self._schedule = schedule or (lambda at, fn: None)
        self._emit_late = emit_late or (lambda s: None)
        self.dead = False
        self.conns: dict[tuple[int, int], dict] = {}

    # -- helpers ---------------------------------------------------------

    def _reply(self, to: Segment, **kwargs) -> Segment:
        return seg.make_segment(
            src=self.addr,
            sport=to.tcp.dest_port,
            dst=to.ip.source_addr,
            dport=to.tcp.source_port,
            **kwargs,
        )

    def _rst_for(self, incoming: Segment) -> Segment:
        if incoming.tcp.flags & TcpFlags.ACK:
            return self._reply(incoming, flags=TcpFlags.RST, seq=incoming.tcp.ack)
        length = len(incoming.payload) + (1 if incoming.tcp.flags & TcpFlags.SYN else 0)
        return self._reply(
            incoming,
            flags=TcpFlags.RST | TcpFlags.ACK,
            seq=0,
            ack=(incoming.tcp.seq + length) % 2**32,
        )

    def _body(self, n: int) -> bytes:
        return (b"0123456789abcdef" * (n // 16 + 1))[:n]

    def _crash(self) -> None:
        self.dead = True
        self.conns.clear()
        if self.profile.restart_after_crash:
            def revive() -> None:
                self.dead = False
            self._schedule(RESTART_DELAY, revive)

    # -- state machine ---------------------------------------------------

    def step(self, incoming: Segment, now: float = 0.0) -> list[Segment]:
        """Process one inbound segment; returns the immediate replies."""
        out: list[Segment] = []
        if self.dead:
            return out
        if not seg.verify_tcp_checksum(incoming) and not self.profile.has(
            Deviation.IGNORE_BAD_CHECKSUM
        ):
            return out
        if incoming.tcp.dest_port != self.port:
            if not incoming.tcp.flags & TcpFlags.RST:
                out.append(self._rst_for(incoming))
            return out

        key = (incoming.ip.source_addr, incoming.tcp.source_port)
        conn = self.conns.get(key)
        flags = incoming.tcp.flags

        if flags & TcpFlags.RST:
            self.conns.pop(key, None)
            return out

        if flags & TcpFlags.SYN and not flags & TcpFlags.ACK:
            return self._on_syn(incoming, key, conn, out)

        if conn is None:
            return out

        if flags & TcpFlags.ACK:
            self._on_ack(incoming, conn, out, now)

        if flags & TcpFlags.FIN and conn["state"] == "ESTABLISHED":
            conn["rcv_nxt"] = (conn["rcv_nxt"] + 1) % 2**32
            out.append(self._ack_now(incoming, conn))
            conn["state"] = "CLOSED"
        return out

    def _on_syn(
        self, incoming: Segment, key: tuple[int, int], conn: Optional[dict], out: list[Segment]
    ) -> list[Segment]:
        options = incoming.tcp.options
        if self.profile.has(Deviation.RST_ON_OPTIONS) and options:
            out.append(self._rst_for(incoming))
            return out
        known = (TcpOption.EOOL, TcpOption.NOOP, TcpOption.MSS)
        if self.profile.has(Deviation.DROP_UNKNOWN_OPTION) and any(
            o.kind not in known for o in options
        ):
            return out
        if self.profile.has(Deviation.DROP_RESERVED_SYN) and incoming.tcp.reserved_bits:
            return out

        if conn is not None:
            if conn["state"] == "SYN_RCVD" and incoming.tcp.seq == conn["irs"]:
                out.append(conn["synack"].clone())
            elif conn["state"] == "ESTABLISHED":
                out.append(self._ack_now(incoming, conn))
            return out

        irs = incoming.tcp.seq
        iss = self.rng.randrange(1, 2**32)
        peer_mss = next(
            (o.mss_value for o in options if o.kind == TcpOption.MSS and o.mss_value),
            None,
        )
        echo = (
            incoming.tcp.reserved_bits
            if self.profile.has(Deviation.ECHO_RESERVED_BITS)
            else 0
        )
        synack = self._reply(
            incoming,
            flags=TcpFlags.SYN | TcpFlags.ACK,
            seq=iss,
            ack=(irs + 1) % 2**32,
            reserved_bits=echo,
            options=[TcpOption.mss(ENDPOINT_MSS)],
        )
        self.conns[key] = {
            "state": "SYN_RCVD",
            "irs": irs,
            "iss": iss,
            "rcv_nxt": (irs + 1) % 2**32,
            "snd_nxt": (iss + 1) % 2**32,
            "peer_mss": peer_mss,
            "synack": synack,
            "defer_generation": 0,
            "responded": False,
        }
        out.append(synack.clone())
        return out

    def _ack_now(self, incoming: Segment, conn: dict) -> Segment:
        return self._reply(
            incoming,
            flags=TcpFlags.ACK,
            seq=conn["snd_nxt"],
            ack=conn["rcv_nxt"],
        )

    def _on_ack(self, incoming: Segment, conn: dict, out: list[Segment], now: float) -> None:
        if conn["state"] == "SYN_RCVD":
            if incoming.tcp.ack != (conn["iss"] + 1) % 2**32:
                return
            if self.profile.has(Deviation.DEFER_ACCEPT) and not incoming.payload:
                # Accept deferred until data shows up; keep nudging the client
                # with SYN/ACK retransmissions on an exponential timer.
                if conn["defer_generation"] == 0:
                    conn["defer_generation"] = 1
                    self._defer_chain(conn, attempt=1, generation=1)
                return
            conn["state"] = "ESTABLISHED"
            conn["defer_generation"] += 1
        if conn["state"] != "ESTABLISHED":
            return
        if incoming.payload:
            self._on_data(incoming, conn, out)

    def _defer_chain(self, conn: dict, attempt: int, generation: int) -> None:
        if attempt > SYNACK_RTO_RETRIES:
            return
        delay = SYNACK_RTO_FIRST * (2 ** (attempt - 1))

        def fire() -> None:
            if self.dead or conn["defer_generation"] != generation:
                return
            if conn["state"] != "SYN_RCVD":
                return
            self._emit_late(conn["synack"].clone())
            self._defer_chain(conn, attempt + 1, generation)

        self._schedule(delay, fire)

    def _on_data(self, incoming: Segment, conn: dict, out: list[Segment]) -> None:
        if incoming.tcp.flags & TcpFlags.URG:
            if self.profile.has(Deviation.CRASH_ON_URGENT):
                self._crash()
                out.clear()
                return
            if self.profile.has(Deviation.DROP_URGENT_SILENTLY):
                return
            if self.profile.has(Deviation.RST_ON_URGENT):
                out.append(self._rst_for(incoming))
                self.conns.pop((incoming.ip.source_addr, incoming.tcp.source_port), None)
                return
        if incoming.tcp.seq == conn["rcv_nxt"]:
            conn["rcv_nxt"] = (conn["rcv_nxt"] + len(incoming.payload)) % 2**32
            conn["defer_generation"] += 1
            out.append(self._ack_now(incoming, conn))
            if not conn["responded"] and self.profile.response_body_len > 0:
                conn["responded"] = True
                self._schedule(
                    RESPONSE_THINK_DELAY, lambda: self._serve_response(incoming, conn)
                )
        else:
            out.append(self._ack_now(incoming, conn))

    def _effective_send_mss(self, conn: dict) -> int:
        advertised = conn["peer_mss"]
        if advertised is None:
            if self.profile.has(Deviation.DEFAULT_MSS_1024):
                return 1024
            return DEFAULT_SEND_MSS
        if self.profile.has(Deviation.MSS_FLOOR_536):
            return max(DEFAULT_SEND_MSS, advertised)
        return advertised

    def _serve_response(self, request: Segment, conn: dict) -> None:
        if self.dead or conn["state"] != "ESTABLISHED":
            return
        mss = self._effective_send_mss(conn)
        body = self._body(self.profile.response_body_len)
        offset = 0
        while offset < len(body):
            chunk = body[offset : offset + mss]
            flags = TcpFlags.ACK
            if offset + len(chunk) >= len(body):
                flags |= TcpFlags.PSH
            data_seg = self._reply(
                request,
                flags=flags,
                seq=(conn["snd_nxt"] + offset) % 2**32,
                ack=conn["rcv_nxt"],
                payload=chunk,
            )
            self._emit_late(data_seg)
            offset += len(chunk)
        conn["snd_nxt"] = (conn["snd_nxt"] + len(body)) % 2**32


class SimNetwork:
    """Event-driven path: client -- router chain -- endpoint, on virtual time."""

    def __init__(self, topology: Topology, record_frames: bool = False):
        topology.validate()
        self.topology = topology
        self.clock = 0.0
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._serial = 0
        self.rng = random.Random(topology.seed)
        self.frame_log: Optional[FrameLog] = FrameLog() if record_frames else None
        self.path_len = topology.resolved_path_len()
        self._hops: list[MiddleboxSpec] = []
        by_hop = {mb.hop: mb for mb in topology.middleboxes}
        for hop in range(1, self.path_len + 1):
            self._hops.append(
                by_hop.get(hop, MiddleboxSpec(hop, MiddleboxKind.PLAIN, quote_len=topology.quote_len))
            )
        self.endpoint_addr = seg.ip_to_int(topology.endpoint_addr)
        self.client_addr = seg.ip_to_int(topology.client_addr)
        self.responder = TcpResponder(
            topology.profile,
            self.endpoint_addr,
            topology.endpoint_port,
            self.rng,
            schedule=lambda delay, fn: self.schedule(self.clock + delay, fn),
            emit_late=lambda s: self._send_back(s, self.clock),
        )
        self._nat_delta = sum(
            NAT_PORT_DELTA for mb in self._hops if mb.kind is MiddleboxKind.NAT_REWRITE
        )
        self._deliver_tcp: Callable[[Segment, float], None] = lambda s, t: None
        self._deliver_icmp: Callable[[bytes, int, float], None] = lambda b, a, t: None

    def router_addr(self, hop: int) -> int:
        return seg.ip_to_int(f"203.0.113.{hop}")

    # -- event loop ------------------------------------------------------

    def schedule(self, at: float, fn: Callable[[], None]) -> None:
        self._serial += 1
        heapq.heappush(self._heap, (max(at, self.clock), self._serial, fn))

    def run_one_before(self, limit: float) -> bool:
        if self._heap and self._heap[0][0] <= limit:
            at, _, fn = heapq.heappop(self._heap)
            self.clock = max(self.clock, at)
            fn()
            return True
        return False

    def run_all(self, horizon: float = float("inf")) -> None:
        while self.run_one_before(horizon):
            pass

    def advance_to(self, at: float) -> None:
        self.clock = max(self.clock, at)

    def _log(self, place: str, direction: str, segment_bytes: bytes) -> None:
        if self.frame_log is not None:
            self.frame_log.add(self.clock, place, direction, segment_bytes)

    # -- forward path ----------------------------------------------------

    def inject_from_client(self, segment: Segment, at: float) -> None:
        frame = segment.clone()
        self.schedule(at, lambda: self._log("client", "tx", seg.serialize(frame)))
        self.schedule(at + PER_HOP_LATENCY, lambda: self._at_hop(frame, 1))

    def _at_hop(self, segment: Segment, hop_index: int) -> None:
        if hop_index > self.path_len:
            self._at_endpoint(segment)
            return
        spec = self._hops[hop_index - 1]
        if _rewrite(spec, segment):
            segment.tcp.checksum = seg.compute_tcp_checksum(segment)
        segment.ip.ttl -= 1
        segment.ip.header_checksum = seg.compute_ip_checksum(segment.ip)
        self._log(f"hop{hop_index}", "fwd", seg.serialize(segment))
        if segment.ip.ttl == 0:
            quote_cap = 28 if spec.quote_len is QuoteLen.MIN_28 else None
            icmp = seg.build_icmp_time_exceeded(seg.serialize(segment), quote_cap)
            router = self.router_addr(hop_index)
            self._log(f"hop{hop_index}", "icmp", icmp)
            self.schedule(
                self.clock + hop_index * PER_HOP_LATENCY,
                lambda: self._deliver_icmp(icmp, router, self.clock),
            )
            return
        self.schedule(
            self.clock + PER_HOP_LATENCY, lambda: self._at_hop(segment, hop_index + 1)
        )

    def _at_endpoint(self, segment: Segment) -> None:
        self._log("endpoint", "rx", seg.serialize(segment))
        if self.topology.blackhole:
            return
        replies = self.responder.step(segment, self.clock)
        for reply in replies:
            self._send_back(reply, self.clock)

    # -- return path -----------------------------------------------------

    def _send_back(self, segment: Segment, at: float) -> None:
        frame = segment.clone()
        if self._nat_delta:
            frame.tcp.dest_port = (frame.tcp.dest_port - self._nat_delta) % 65536 or 1
            seg.fill(frame)
        self._log("endpoint", "tx", seg.serialize(frame))
        self.schedule(
            at + (self.path_len + 1) * PER_HOP_LATENCY,
            lambda: self._deliver_tcp(frame, self.clock),
        )


class SimSession(Session):
    def __init__(self, transport: "SimTransport", local: Endpoint, remote: Endpoint):
        super().__init__(transport, local, remote)
        self.queue: list = []


class SimTransport(Transport):
    """Transport contract over a SimNetwork; time is the network's clock."""

    def __init__(
        self,
        network: SimNetwork,
        pacer: Optional[PacerConfig] = None,
    ):
        super().__init__(pacer)
        self.network = network
        network._deliver_tcp = self._on_tcp
        network._deliver_icmp = self._on_icmp

    def now(self) -> float:
        return self.network.clock

    def _check_route(self, remote: Endpoint) -> None:
        if remote.addr != self.network.endpoint_addr:
            raise NoRoute(f"no route to {remote} in this topology")

    def _make_session(self, local: Endpoint, remote: Endpoint) -> SimSession:
        return SimSession(self, local, remote)

    def _send(self, session: Session, segment: Segment) -> float:
        emit_at = self.pacer.reserve(self.now())
        self.network.inject_from_client(segment, emit_at)
        return emit_at

    def _next_event(self, session: SimSession, deadline: float, token: int):
        limit = self.now() + deadline
        while not session.queue and self.network.run_one_before(limit):
            pass
        if session.queue:
            return session.queue.pop(0)
        self.network.advance_to(limit)
        return Timeout(token, limit)

    def _on_tcp(self, segment: Segment, at: float) -> None:
        key = (
            segment.ip.dest_addr,
            segment.tcp.dest_port,
            segment.ip.source_addr,
            segment.tcp.source_port,
        )
        session = self._sessions.get(key)
        if session is not None:
            session.queue.append(TcpIn(segment, at))

    def _on_icmp(self, icmp: bytes, router_addr: int, at: float) -> None:
        try:
            quote = seg.parse_icmp_time_exceeded(icmp)
        except seg.SegmentError:
            return
        session = self.match_session(
            quote.ip.source_addr, quote.src_port or 0, quote.ip.dest_addr, quote.dst_port or 0
        )
        if session is not None:
            session.queue.append(IcmpIn(icmp, router_addr, at))


def build_topology(spec: Topology | dict, record_frames: bool = False) -> SimTransport:
    """Materialize a topology into a transport-pluggable simulated link."""
    if isinstance(spec, dict):
        spec = Topology.from_dict(spec)
    spec.validate()
    return SimTransport(SimNetwork(spec, record_frames=record_frames))


@dataclass
class ScriptStep:
    at: float
    segment: Segment


def run_script(topology: Topology, steps: list[ScriptStep]) -> FrameLog:
    """Inject a scripted client-side exchange; returns the per-hop transcript."""
    last = 0.0
    for step in steps:
        if not isinstance(step.segment, Segment):
            raise ScriptError(f"step at {step.at} carries no segment")
        if step.at < last:
            raise ScriptError(f"step times must be non-decreasing, got {step.at} < {last}")
        last = step.at
    network = SimNetwork(topology, record_frames=True)
    transport = SimTransport(network)
    for step in steps:
        network.inject_from_client(step.segment, step.at)
    network.run_all()
    assert network.frame_log is not None
    return network.frame_log
