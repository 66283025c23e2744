"""The eight mandatory-behavior probes, their classification, and per-target
orchestration.

Every test is a scripted exchange over a fresh 4-tuple whose first segment is
duplicated as a TTL fan for path localization. Classification is a pure
function of the recorded exchange: verdicts can be recomputed bit-for-bit from
stored evidence. The four-way outcome is PASS / UNK / F_TARGET / F_PATH, with
path modification of a test-relevant field taking precedence over whatever the
end-to-end exchange looked like.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import segment as seg
from . import tracer
from .segment import Segment, TcpFlags, TcpOption
from .tracer import Carrier, PathDiagnosis, PathObservation
from .transport import Endpoint, IcmpIn, Session, TcpIn, Timeout, Transport


class TestId(str, Enum):
    CHECKSUM_INCORRECT = "CHECKSUM_INCORRECT"
    CHECKSUM_ZERO = "CHECKSUM_ZERO"
    OPTION_SUPPORT = "OPTION_SUPPORT"
    OPTION_UNKNOWN = "OPTION_UNKNOWN"
    MSS_SUPPORT = "MSS_SUPPORT"
    MSS_MISSING = "MSS_MISSING"
    RESERVED = "RESERVED"
    URGENT_POINTER = "URGENT_POINTER"


ALL_TESTS = list(TestId)


class Result(str, Enum):
    PASS = "PASS"
    UNK = "UNK"
    F_TARGET = "F_TARGET"
    F_PATH = "F_PATH"


# Severity order for combining stage outcomes.
_SEVERITY = {Result.PASS: 0, Result.UNK: 1, Result.F_TARGET: 2, Result.F_PATH: 3}

DEFAULT_HTTP_ELICITOR = (
    b"GET / HTTP/1.1\r\nHost: probe.invalid\r\nConnection: close\r\n\r\n"
)

# Canned TLS 1.2 ClientHello shape: record header, handshake header, version,
# 32-byte client random, one cipher suite, no extensions. Never parsed by the
# peer in simulation; it only has to elicit a data-bearing response on :443.
DEFAULT_TLS_ELICITOR = bytes.fromhex(
    "16030100330100002f0303"
    + "11" * 32
    + "000002c02f0100000400000000"
)


@dataclass
class Elicitor:
    """Application bytes sent solely to trigger a data-bearing response."""

    request_bytes: bytes = DEFAULT_HTTP_ELICITOR


@dataclass
class SuiteConfig:
    local_addr: str = "192.0.2.1"
    local_port_base: int = 40000
    reply_deadline: float = 5.0
    retrans_window: float = 10.0
    retrans_guard: float = 0.5
    max_ttl: int = 30
    mss_advertised: int = 515
    mss_default_limit: int = 536
    unknown_option_kind: int = 158
    unknown_option_payload: bytes = b"\xde\xad"
    reserved_flag_mask: int = 0x4
    urgent_total: int = 501
    urgent_parts: int = 3
    defer_accept_probe: bool = False
    elicitor_http: bytes = DEFAULT_HTTP_ELICITOR
    elicitor_tls: bytes = DEFAULT_TLS_ELICITOR
    tls_ports: tuple[int, ...] = (443,)
    seed: int = 0

    def elicitor_for(self, port: int) -> Elicitor:
        if port in self.tls_ports:
            return Elicitor(self.elicitor_tls)
        return Elicitor(self.elicitor_http)

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteConfig":
        config = cls()
        for key, value in data.items():
            if not hasattr(config, key):
                raise ValueError(f"unknown suite config key {key!r}")
            current = getattr(config, key)
            if isinstance(current, bytes):
                value = bytes.fromhex(value)
            elif isinstance(current, tuple):
                value = tuple(value)
            elif isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            setattr(config, key, value)
        return config


# Carrier fields each test may encode the TTL into: a test never encodes into
# a field whose behavior it manipulates.
TEST_CARRIERS: dict[TestId, frozenset[Carrier]] = {
    TestId.CHECKSUM_INCORRECT: tracer.ALL_CARRIERS,
    TestId.CHECKSUM_ZERO: tracer.ALL_CARRIERS,
    TestId.OPTION_SUPPORT: tracer.ALL_CARRIERS - {Carrier.NOOP_COUNT},
    TestId.OPTION_UNKNOWN: tracer.ALL_CARRIERS - {Carrier.NOOP_COUNT},
    TestId.MSS_SUPPORT: tracer.ALL_CARRIERS - {Carrier.NOOP_COUNT},
    TestId.MSS_MISSING: tracer.ALL_CARRIERS - {Carrier.NOOP_COUNT},
    TestId.RESERVED: tracer.ALL_CARRIERS,
    TestId.URGENT_POINTER: tracer.ALL_CARRIERS - {Carrier.URGENT_PTR},
}

# Quote fields whose modification pins non-conformance on the path.
TEST_RELEVANT_FIELDS: dict[TestId, frozenset[str]] = {
    TestId.CHECKSUM_INCORRECT: frozenset({seg.F_CHECKSUM}),
    TestId.CHECKSUM_ZERO: frozenset({seg.F_CHECKSUM}),
    TestId.OPTION_SUPPORT: frozenset({seg.F_OPTIONS}),
    TestId.OPTION_UNKNOWN: frozenset({seg.F_OPTIONS}),
    TestId.MSS_SUPPORT: frozenset({seg.F_MSS_OPTION}),
    TestId.MSS_MISSING: frozenset({seg.F_MSS_OPTION}),
    TestId.RESERVED: frozenset({seg.F_RESERVED}),
    TestId.URGENT_POINTER: frozenset({seg.F_URG_FLAG, seg.F_URGENT_PTR}),
}


@dataclass
class Frame:
    time: float
    raw: bytes

    def segment(self) -> Segment:
        return seg.parse(self.raw)


@dataclass
class IcmpFrame:
    time: float
    source_addr: int
    raw: bytes


@dataclass
class ProbeExchange:
    """Append-only record of one test against one target, kept verbatim."""

    test_id: str = ""
    sent: list[Frame] = field(default_factory=list)
    received: list[Frame] = field(default_factory=list)
    icmp: list[IcmpFrame] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def record_sent(self, time: float, segment: Segment) -> None:
        self.sent.append(Frame(time, seg.serialize(segment)))

    def record_received(self, time: float, segment: Segment) -> None:
        self.received.append(Frame(time, seg.serialize(segment)))

    def record_icmp(self, time: float, source_addr: int, raw: bytes) -> None:
        self.icmp.append(IcmpFrame(time, source_addr, raw))

    def fan_frames(self) -> list[Segment]:
        count = int(self.meta.get("fan_size", 0))
        return [frame.segment() for frame in self.sent[:count]]

    def observations(self) -> list[PathObservation]:
        """Re-derive path observations from the raw ICMP evidence."""
        carriers = {Carrier(name) for name in self.meta.get("carriers", [])}
        fan = self.fan_frames()
        observations = []
        for frame in self.icmp:
            obs = tracer.correlate_icmp(frame.raw, frame.source_addr, fan, carriers)
            if obs is not None:
                observations.append(obs)
        observations.sort(key=lambda o: o.hop)
        return observations

    def to_dict(self) -> dict:
        return {
            "test_id": self.test_id,
            "sent": [{"t": f.time, "hex": f.raw.hex()} for f in self.sent],
            "received": [{"t": f.time, "hex": f.raw.hex()} for f in self.received],
            "icmp": [
                {"t": f.time, "src": f.source_addr, "hex": f.raw.hex()} for f in self.icmp
            ],
            "meta": self.meta,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProbeExchange":
        exchange = cls(test_id=data["test_id"])
        exchange.sent = [Frame(f["t"], bytes.fromhex(f["hex"])) for f in data["sent"]]
        exchange.received = [
            Frame(f["t"], bytes.fromhex(f["hex"])) for f in data["received"]
        ]
        exchange.icmp = [
            IcmpFrame(f["t"], f["src"], bytes.fromhex(f["hex"])) for f in data["icmp"]
        ]
        exchange.meta = dict(data["meta"])
        exchange.notes = list(data["notes"])
        return exchange


@dataclass
class Verdict:
    test_id: TestId
    result: Result
    sub_results: dict[str, Result] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    path: Optional[PathDiagnosis] = None
    evidence_ref: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "test_id": self.test_id.value,
            "result": self.result.value,
            "sub_results": {k: v.value for k, v in self.sub_results.items()},
            "flags": list(self.flags),
            "path_modified": bool(self.path.modified) if self.path else False,
            "path_hop": self.path.first_modifying_hop if self.path else None,
            "evidence_ref": self.evidence_ref,
        }


def seq_covers(ack: int, target: int) -> bool:
    """True when cumulative `ack` acknowledges sequence number `target`."""
    return (ack - target) % 2**32 < 2**31


def _is_synack(s: Segment) -> bool:
    return (
        bool(s.tcp.flags & TcpFlags.SYN)
        and bool(s.tcp.flags & TcpFlags.ACK)
        and not s.tcp.flags & TcpFlags.RST
    )


def _is_rst(s: Segment) -> bool:
    return bool(s.tcp.flags & TcpFlags.RST)


# ---------------------------------------------------------------------------
# Classification: pure functions over a recorded exchange.
# ---------------------------------------------------------------------------


def _worst(*results: Result) -> Result:
    return max(results, key=lambda r: _SEVERITY[r])


def _diagnose(exchange: ProbeExchange, test_id: TestId) -> PathDiagnosis:
    fan = exchange.fan_frames()
    base = fan[0] if fan else None
    observations = exchange.observations()
    relevant = TEST_RELEVANT_FIELDS[test_id]
    if base is None:
        return PathDiagnosis(False, None, sorted(relevant))
    return tracer.diagnose(base, observations, relevant)


def _from_target(exchange: ProbeExchange, local_port: int) -> list[tuple[float, Segment]]:
    frames = []
    for frame in exchange.received:
        segment = frame.segment()
        if segment.tcp.dest_port == local_port:
            frames.append((frame.time, segment))
    return frames


def classify_checksum(exchange: ProbeExchange) -> Verdict:
    test_id = TestId(exchange.test_id)
    diag = _diagnose(exchange, test_id)
    meta = exchange.meta
    stage1 = _from_target(exchange, meta["stage1_port"])
    syn_stage = (
        Result.F_TARGET if any(_is_synack(s) for _, s in stage1) else Result.PASS
    )

    sub = {"syn_stage": syn_stage}
    control_ok = meta.get("control_ok", False)
    if control_ok:
        payload_end = meta["payload_end"]
        sent_at = meta["payload_sent_at"]
        stage2 = [
            (t, s)
            for t, s in _from_target(exchange, meta["stage2_port"])
            if t >= sent_at
        ]
        acked = any(
            s.tcp.flags & TcpFlags.ACK and seq_covers(s.tcp.ack, payload_end)
            for _, s in stage2
        )
        answered = any(len(s.payload) > 0 for _, s in stage2)
        sub["ack_stage"] = Result.F_TARGET if (acked or answered) else Result.PASS

    if diag.modified:
        result = Result.F_PATH
    elif Result.F_TARGET in sub.values():
        result = Result.F_TARGET
    elif not control_ok:
        result = Result.UNK
    else:
        result = Result.PASS
    verdict = Verdict(test_id, result, sub_results=sub, path=diag)
    if not control_ok:
        verdict.flags.append("control_handshake_failed")
    return verdict


def classify_option(exchange: ProbeExchange) -> Verdict:
    test_id = TestId(exchange.test_id)
    diag = _diagnose(exchange, test_id)
    replies = _from_target(exchange, exchange.meta["local_port"])
    synack = any(_is_synack(s) for _, s in replies)
    if diag.modified:
        result = Result.F_PATH
    else:
        result = Result.PASS if synack else Result.F_TARGET
    verdict = Verdict(test_id, result, path=diag)
    if not synack and any(_is_rst(s) for _, s in replies):
        verdict.flags.append("rst_observed")
    return verdict


def classify_mss(exchange: ProbeExchange) -> Verdict:
    test_id = TestId(exchange.test_id)
    diag = _diagnose(exchange, test_id)
    meta = exchange.meta
    limit = meta["payload_limit"]
    handshake_ok = meta.get("handshake_ok", False)
    verdict = Verdict(test_id, Result.PASS, path=diag)

    if not handshake_ok:
        # A host refusing the MSS-bearing SYN fails the MUST outright; a host
        # ignoring the plain SYN of the no-option probe is just unresponsive.
        end_to_end = Result.F_TARGET if test_id is TestId.MSS_SUPPORT else Result.UNK
        verdict.flags.append("no_syn_ack")
    else:
        data_lens = [
            len(s.payload)
            for t, s in _from_target(exchange, meta["local_port"])
            if len(s.payload) > 0 and t >= meta["elicitor_sent_at"]
        ]
        if any(n > limit for n in data_lens):
            end_to_end = Result.F_TARGET
            verdict.flags.append(f"oversize_payload:{max(data_lens)}")
        elif not data_lens:
            end_to_end = Result.UNK
            verdict.flags.append("no_data")
        else:
            end_to_end = Result.PASS
    verdict.result = Result.F_PATH if diag.modified else end_to_end
    return verdict


def classify_reserved(exchange: ProbeExchange, guard: float, window: float) -> Verdict:
    test_id = TestId(exchange.test_id)
    diag = _diagnose(exchange, test_id)
    meta = exchange.meta
    replies = _from_target(exchange, meta["local_port"])
    synacks = [(t, s) for t, s in replies if _is_synack(s)]

    sub: dict[str, Result] = {}
    flags: list[str] = []
    if not synacks:
        sub["syn_stage"] = Result.F_TARGET
        flags.append("no_syn_ack")
    elif synacks[0][1].tcp.reserved_bits != 0:
        sub["syn_stage"] = Result.F_TARGET
        flags.append("echoed_reserved_bits")
    else:
        sub["syn_stage"] = Result.PASS

    ack_sent = meta.get("ack_sent_at")
    if ack_sent is not None:
        retrans = [
            t for t, s in synacks if t > ack_sent + guard and t <= ack_sent + window
        ]
        if retrans:
            sub["ack_stage"] = Result.F_TARGET
            deltas = []
            previous = ack_sent
            for t in retrans:
                deltas.append(t - previous)
                previous = t
            backoff = deltas[0] >= guard and all(
                1.5 <= deltas[i + 1] / deltas[i] <= 3.0 for i in range(len(deltas) - 1)
            )
            if backoff:
                flags.append("possible_defer_accept")
            if meta.get("defer_probe_acked"):
                flags.append("defer_accept_confirmed")
        else:
            sub["ack_stage"] = Result.PASS

    end_to_end = _worst(*sub.values())
    result = Result.F_PATH if diag.modified else end_to_end
    return Verdict(test_id, result, sub_results=sub, flags=flags, path=diag)


def classify_urgent(exchange: ProbeExchange) -> Verdict:
    test_id = TestId(exchange.test_id)
    diag = _diagnose(exchange, test_id)
    meta = exchange.meta
    verdict = Verdict(test_id, Result.PASS, path=diag)

    if not meta.get("handshake_ok", False):
        verdict.result = Result.F_PATH if diag.modified else Result.UNK
        verdict.flags.append("control_handshake_failed")
        return verdict

    urgent_end = meta["urgent_end"]
    first_sent = meta["urgent_sent_at"]
    # Strictly later than the first urgent send: SYN/ACK duplicates provoked
    # by the handshake fan land at the send instant itself and are not
    # responses to the urgent data.
    replies = [
        (t, s) for t, s in _from_target(exchange, meta["local_port"]) if t > first_sent
    ]
    covered = any(
        s.tcp.flags & TcpFlags.ACK and seq_covers(s.tcp.ack, urgent_end)
        for _, s in replies
    )
    if any(_is_rst(s) for _, s in replies):
        verdict.flags.append("rst_observed")
    if not replies:
        verdict.flags.append("silent_after_urgent")
    end_to_end = Result.PASS if covered else Result.F_TARGET
    verdict.result = Result.F_PATH if diag.modified else end_to_end
    return verdict


def classify(exchange: ProbeExchange, config: SuiteConfig) -> Verdict:
    """Reproduce the verdict for any stored exchange."""
    test_id = TestId(exchange.test_id)
    if test_id in (TestId.CHECKSUM_INCORRECT, TestId.CHECKSUM_ZERO):
        return classify_checksum(exchange)
    if test_id in (TestId.OPTION_SUPPORT, TestId.OPTION_UNKNOWN):
        return classify_option(exchange)
    if test_id in (TestId.MSS_SUPPORT, TestId.MSS_MISSING):
        return classify_mss(exchange)
    if test_id is TestId.RESERVED:
        return classify_reserved(exchange, config.retrans_guard, config.retrans_window)
    return classify_urgent(exchange)


# ---------------------------------------------------------------------------
# Probe drivers.
# ---------------------------------------------------------------------------


@dataclass
class TargetReport:
    remote: Endpoint
    alive: bool
    verdicts: dict[TestId, Verdict] = field(default_factory=dict)
    exchanges: dict[TestId, ProbeExchange] = field(default_factory=dict)
    post_liveness: Optional[str] = None
    recovered: bool = False


class ConformanceSuite:
    """Runs the test battery against one or more targets over a transport."""

    def __init__(self, transport: Transport, config: Optional[SuiteConfig] = None):
        self.transport = transport
        self.config = config or SuiteConfig()
        self.rng = random.Random(self.config.seed)
        self._next_port = self.config.local_port_base
        self.local_addr = seg.ip_to_int(self.config.local_addr)

    # -- plumbing --------------------------------------------------------

    def _alloc_port(self) -> int:
        port = self._next_port
        self._next_port += 1
        if self._next_port >= 60000:
            self._next_port = self.config.local_port_base
        return port

    def _open(self, remote: Endpoint) -> Session:
        local = Endpoint(self.local_addr, self._alloc_port())
        return self.transport.open_session(local, remote)

    def _iss(self) -> int:
        return self.rng.randrange(1, 2**32)

    def _pump(
        self,
        session: Session,
        exchange: Optional[ProbeExchange],
        duration: float,
        stop: Optional[Callable[[Segment], bool]] = None,
        on_segment: Optional[Callable[[Segment, float], None]] = None,
    ) -> list[tuple[float, Segment]]:
        """Drive the event stream for `duration`, recording everything seen."""
        got: list[tuple[float, Segment]] = []
        end = self.transport.now() + duration
        while True:
            remaining = end - self.transport.now()
            if remaining <= 0:
                break
            event = session.next_event(remaining)
            if isinstance(event, Timeout):
                break
            if isinstance(event, TcpIn):
                if exchange is not None:
                    exchange.record_received(event.receive_time, event.segment)
                got.append((event.receive_time, event.segment))
                if on_segment is not None:
                    on_segment(event.segment, event.receive_time)
                if stop is not None and stop(event.segment):
                    break
            elif isinstance(event, IcmpIn) and exchange is not None:
                exchange.record_icmp(event.receive_time, event.source_addr, event.raw)
        return got

    def _send(self, session: Session, exchange: Optional[ProbeExchange], segment: Segment) -> float:
        emitted = session.send(segment)
        if exchange is not None:
            exchange.record_sent(emitted, segment)
        return emitted

    def _send_fan(
        self,
        session: Session,
        exchange: ProbeExchange,
        base: Segment,
        test_id: TestId,
        keep_checksum: bool = False,
    ) -> None:
        carriers = TEST_CARRIERS[test_id]
        fan = tracer.build_fan(
            base, self.config.max_ttl, carriers, recompute_checksum=not keep_checksum
        )
        exchange.meta["carriers"] = sorted(c.value for c in carriers)
        exchange.meta["fan_size"] = len(fan)
        for copy in fan:
            self._send(session, exchange, copy)
        self._send(session, exchange, base)

    def _plain_syn(self, session: Session, iss: int, **kwargs) -> Segment:
        return seg.make_segment(
            src=session.local.addr,
            sport=session.local.port,
            dst=session.remote.addr,
            dport=session.remote.port,
            flags=TcpFlags.SYN,
            seq=iss,
            **kwargs,
        )

    def _reset(self, session: Session, exchange: Optional[ProbeExchange], seq: int) -> None:
        rst = seg.make_segment(
            src=session.local.addr,
            sport=session.local.port,
            dst=session.remote.addr,
            dport=session.remote.port,
            flags=TcpFlags.RST,
            seq=seq,
        )
        self._send(session, exchange, rst)

    # -- liveness --------------------------------------------------------

    def liveness(self, remote: Endpoint) -> str:
        """Plain conformant handshake attempt; ALIVE targets get reset again."""
        session = self._open(remote)
        try:
            iss = self._iss()
            self._send(session, None, self._plain_syn(session, iss))
            replies = self._pump(
                session, None, self.config.reply_deadline, stop=lambda s: _is_synack(s) or _is_rst(s)
            )
            for _, reply in replies:
                if _is_synack(reply):
                    self._reset(session, None, (iss + 1) % 2**32)
                    return "ALIVE"
                if _is_rst(reply):
                    return "DEAD"
            return "DEAD"
        finally:
            session.close()

    def post_liveness(self, remote: Endpoint) -> str:
        return "REACHABLE" if self.liveness(remote) == "ALIVE" else "UNREACHABLE"

    # -- handshake helper -------------------------------------------------

    def _await_synack(
        self, session: Session, exchange: ProbeExchange
    ) -> Optional[tuple[float, Segment]]:
        # Stops only on a SYN/ACK: fan copies may legitimately provoke RSTs
        # (e.g. option-intolerant stacks answering NOOP-carrier duplicates)
        # while the clean base SYN still completes.
        replies = self._pump(
            session, exchange, self.config.reply_deadline, stop=_is_synack
        )
        for t, reply in replies:
            if _is_synack(reply):
                return t, reply
        return None

    def _ack_segment(
        self, session: Session, seq: int, ack: int, reserved_bits: int = 0, payload: bytes = b"",
        urg: int = 0,
    ) -> Segment:
        flags = TcpFlags.ACK
        if payload:
            flags |= TcpFlags.PSH
        if urg:
            flags |= TcpFlags.URG
        return seg.make_segment(
            src=session.local.addr,
            sport=session.local.port,
            dst=session.remote.addr,
            dport=session.remote.port,
            flags=flags,
            seq=seq,
            ack=ack,
            reserved_bits=reserved_bits,
            urgent_pointer=urg,
            payload=payload,
        )

    # -- test drivers ------------------------------------------------------

    def test_checksum(self, remote: Endpoint, mode: str) -> tuple[Verdict, ProbeExchange]:
        test_id = TestId.CHECKSUM_INCORRECT if mode == "INCORRECT" else TestId.CHECKSUM_ZERO
        exchange = ProbeExchange(test_id=test_id.value)
        carriers = TEST_CARRIERS[test_id]

        session = self._open(remote)
        exchange.meta["stage1_port"] = session.local.port
        iss = self._iss()
        base = self._plain_syn(session, iss)
        if mode == "ZERO":
            base.tcp.checksum = 0
            fan = tracer.build_fan(base, self.config.max_ttl, carriers, recompute_checksum=False)
        else:
            # The planted value must stay wrong for the base and every fan
            # copy (each encodes different carrier contents) and never be 0.
            while True:
                planted = self.rng.randrange(1, 0x10000)
                base.tcp.checksum = planted
                fan = tracer.build_fan(
                    base, self.config.max_ttl, carriers, recompute_checksum=False
                )
                if all(
                    planted != seg.compute_tcp_checksum(probe) for probe in fan + [base]
                ):
                    break
        exchange.meta["carriers"] = sorted(c.value for c in carriers)
        exchange.meta["fan_size"] = len(fan)
        for copy in fan:
            self._send(session, exchange, copy)
        self._send(session, exchange, base)
        self._pump(session, exchange, self.config.reply_deadline, stop=_is_synack)
        session.close()

        # Control stage on a fresh tuple: valid handshake, then the elicitor
        # under the same bad-checksum treatment.
        session2 = self._open(remote)
        exchange.meta["stage2_port"] = session2.local.port
        iss2 = self._iss()
        self._send(session2, exchange, self._plain_syn(session2, iss2))
        synack = self._await_synack(session2, exchange)
        exchange.meta["control_ok"] = synack is not None
        if synack is not None:
            _, synack_seg = synack
            irs = synack_seg.tcp.seq
            payload = self.config.elicitor_for(remote.port).request_bytes
            data = self._ack_segment(
                session2, (iss2 + 1) % 2**32, (irs + 1) % 2**32, payload=payload
            )
            if mode == "ZERO":
                data.tcp.checksum = 0
            else:
                correct = seg.compute_tcp_checksum(data)
                while True:
                    planted = self.rng.randrange(1, 0x10000)
                    if planted != correct:
                        break
                data.tcp.checksum = planted
            data.ip.header_checksum = seg.compute_ip_checksum(data.ip)
            sent_at = self._send(session2, exchange, data)
            exchange.meta["payload_sent_at"] = sent_at
            exchange.meta["payload_end"] = (iss2 + 1 + len(payload)) % 2**32
            self._pump(session2, exchange, self.config.reply_deadline)
            self._reset(session2, exchange, (iss2 + 1) % 2**32)
        session2.close()

        return classify_checksum(exchange), exchange

    def _option_probe(self, remote: Endpoint, test_id: TestId, options: list[TcpOption]) -> tuple[Verdict, ProbeExchange]:
        exchange = ProbeExchange(test_id=test_id.value)
        session = self._open(remote)
        exchange.meta["local_port"] = session.local.port
        iss = self._iss()
        base = self._plain_syn(session, iss, options=options)
        self._send_fan(session, exchange, base, test_id)
        replies = self._pump(
            session, exchange, self.config.reply_deadline, stop=_is_synack
        )
        if any(_is_synack(s) for _, s in replies):
            self._reset(session, exchange, (iss + 1) % 2**32)
        session.close()
        return classify_option(exchange), exchange

    def test_option_support(self, remote: Endpoint) -> tuple[Verdict, ProbeExchange]:
        options = [TcpOption.noop(), TcpOption.noop(), TcpOption.eool()]
        return self._option_probe(remote, TestId.OPTION_SUPPORT, options)

    def test_option_unknown(self, remote: Endpoint) -> tuple[Verdict, ProbeExchange]:
        options = [
            TcpOption(self.config.unknown_option_kind, self.config.unknown_option_payload)
        ]
        return self._option_probe(remote, TestId.OPTION_UNKNOWN, options)

    def _mss_probe(self, remote: Endpoint, test_id: TestId) -> tuple[Verdict, ProbeExchange]:
        exchange = ProbeExchange(test_id=test_id.value)
        session = self._open(remote)
        exchange.meta["local_port"] = session.local.port
        if test_id is TestId.MSS_SUPPORT:
            options = [TcpOption.mss(self.config.mss_advertised)]
            limit = self.config.mss_advertised
        else:
            options = []
            limit = self.config.mss_default_limit
        exchange.meta["payload_limit"] = limit

        iss = self._iss()
        base = self._plain_syn(session, iss, options=options)
        self._send_fan(session, exchange, base, test_id)
        synack = self._await_synack(session, exchange)
        exchange.meta["handshake_ok"] = synack is not None
        if synack is not None:
            _, synack_seg = synack
            irs = synack_seg.tcp.seq
            payload = self.config.elicitor_for(remote.port).request_bytes
            data = self._ack_segment(
                session, (iss + 1) % 2**32, (irs + 1) % 2**32, payload=payload
            )
            sent_at = self._send(session, exchange, data)
            exchange.meta["elicitor_sent_at"] = sent_at

            state = {"rcv_nxt": (irs + 1) % 2**32, "snd_nxt": (iss + 1 + len(payload)) % 2**32}

            def acker(segment: Segment, _t: float) -> None:
                if segment.payload and segment.tcp.seq == state["rcv_nxt"]:
                    state["rcv_nxt"] = (state["rcv_nxt"] + len(segment.payload)) % 2**32
                    self._send(
                        session,
                        exchange,
                        self._ack_segment(session, state["snd_nxt"], state["rcv_nxt"]),
                    )

            self._pump(session, exchange, self.config.reply_deadline, on_segment=acker)
            self._reset(session, exchange, state["snd_nxt"])
        session.close()
        return classify_mss(exchange), exchange

    def test_mss_support(self, remote: Endpoint) -> tuple[Verdict, ProbeExchange]:
        return self._mss_probe(remote, TestId.MSS_SUPPORT)

    def test_mss_missing(self, remote: Endpoint) -> tuple[Verdict, ProbeExchange]:
        return self._mss_probe(remote, TestId.MSS_MISSING)

    def test_reserved(self, remote: Endpoint) -> tuple[Verdict, ProbeExchange]:
        test_id = TestId.RESERVED
        exchange = ProbeExchange(test_id=test_id.value)
        session = self._open(remote)
        exchange.meta["local_port"] = session.local.port
        mask = self.config.reserved_flag_mask
        iss = self._iss()
        base = self._plain_syn(session, iss, reserved_bits=mask)
        self._send_fan(session, exchange, base, test_id)
        synack = self._await_synack(session, exchange)
        if synack is not None:
            _, synack_seg = synack
            irs = synack_seg.tcp.seq
            ack = self._ack_segment(
                session, (iss + 1) % 2**32, (irs + 1) % 2**32, reserved_bits=mask
            )
            ack_sent = self._send(session, exchange, ack)
            exchange.meta["ack_sent_at"] = ack_sent

            if self.config.defer_accept_probe:
                # Optional disambiguation: one data byte after the first real
                # retransmission would complete a deferred accept. Fan-induced
                # SYN/ACK duplicates land inside the guard and do not count.
                ack_guard = ack_sent + self.config.retrans_guard
                seen = {}

                def spot(segment: Segment, t: float) -> None:
                    if _is_synack(segment) and t > ack_guard:
                        seen["retransmission"] = t

                self._pump(
                    session,
                    exchange,
                    self.config.retrans_window,
                    stop=lambda s: "retransmission" in seen,
                    on_segment=spot,
                )
                if "retransmission" in seen:
                    probe = self._ack_segment(
                        session, (iss + 1) % 2**32, (irs + 1) % 2**32, payload=b"?"
                    )
                    self._send(session, exchange, probe)
                    tail = self._pump(session, exchange, self.config.reply_deadline)
                    exchange.meta["defer_probe_acked"] = any(
                        s.tcp.flags & TcpFlags.ACK
                        and seq_covers(s.tcp.ack, (iss + 2) % 2**32)
                        for _, s in tail
                    )
            else:
                self._pump(session, exchange, self.config.retrans_window)
            self._reset(session, exchange, (iss + 1) % 2**32)
        session.close()
        return (
            classify_reserved(exchange, self.config.retrans_guard, self.config.retrans_window),
            exchange,
        )

    def test_urgent_pointer(self, remote: Endpoint) -> tuple[Verdict, ProbeExchange]:
        test_id = TestId.URGENT_POINTER
        exchange = ProbeExchange(test_id=test_id.value)
        config = self.config
        session = self._open(remote)
        exchange.meta["local_port"] = session.local.port
        iss = self._iss()
        base = self._plain_syn(session, iss)
        self._send_fan(session, exchange, base, test_id)
        synack = self._await_synack(session, exchange)
        exchange.meta["handshake_ok"] = synack is not None
        if synack is not None:
            _, synack_seg = synack
            irs = synack_seg.tcp.seq
            total = config.urgent_total
            parts = config.urgent_parts
            elicitor = config.elicitor_for(remote.port).request_bytes
            payload = (elicitor + b"." * total)[:total]
            chunk = total // parts
            sizes = [chunk] * (parts - 1) + [total - chunk * (parts - 1)]
            urgent_end = (iss + 1 + total) % 2**32
            exchange.meta["urgent_end"] = urgent_end

            offset = 0
            first_sent = None
            for size in sizes:
                segment_seq = (iss + 1 + offset) % 2**32
                urgent_ptr = total - offset
                data = self._ack_segment(
                    session,
                    segment_seq,
                    (irs + 1) % 2**32,
                    payload=payload[offset : offset + size],
                    urg=urgent_ptr,
                )
                sent_at = self._send(session, exchange, data)
                if first_sent is None:
                    first_sent = sent_at
                offset += size
            exchange.meta["urgent_sent_at"] = first_sent

            state = {"rcv_nxt": (irs + 1) % 2**32, "snd_nxt": urgent_end}

            def acker(segment: Segment, _t: float) -> None:
                if segment.payload and segment.tcp.seq == state["rcv_nxt"]:
                    state["rcv_nxt"] = (state["rcv_nxt"] + len(segment.payload)) % 2**32
                    self._send(
                        session,
                        exchange,
                        self._ack_segment(session, state["snd_nxt"], state["rcv_nxt"]),
                    )

            self._pump(session, exchange, config.reply_deadline, on_segment=acker)
            self._reset(session, exchange, state["snd_nxt"])
        session.close()
        return classify_urgent(exchange), exchange

    # -- orchestration ----------------------------------------------------

    def run_test(self, test_id: TestId, remote: Endpoint) -> tuple[Verdict, ProbeExchange]:
        if test_id is TestId.CHECKSUM_INCORRECT:
            return self.test_checksum(remote, "INCORRECT")
        if test_id is TestId.CHECKSUM_ZERO:
            return self.test_checksum(remote, "ZERO")
        if test_id is TestId.OPTION_SUPPORT:
            return self.test_option_support(remote)
        if test_id is TestId.OPTION_UNKNOWN:
            return self.test_option_unknown(remote)
        if test_id is TestId.MSS_SUPPORT:
            return self.test_mss_support(remote)
        if test_id is TestId.MSS_MISSING:
            return self.test_mss_missing(remote)
        if test_id is TestId.RESERVED:
            return self.test_reserved(remote)
        if test_id is TestId.URGENT_POINTER:
            return self.test_urgent_pointer(remote)
        raise ValueError(f"unknown test {test_id}")

    def run_suite(
        self, remote: Endpoint, enabled: Optional[list[TestId]] = None
    ) -> TargetReport:
        """Liveness gate, then every enabled test on its own fresh 4-tuple."""
        tests = enabled if enabled is not None else ALL_TESTS
        report = TargetReport(remote=remote, alive=self.liveness(remote) == "ALIVE")
        if not report.alive:
            return report
        for test_id in ALL_TESTS:
            if test_id not in tests:
                continue
            verdict, exchange = self.run_test(test_id, remote)
            report.verdicts[test_id] = verdict
            report.exchanges[test_id] = exchange
            if test_id is TestId.URGENT_POINTER:
                report.post_liveness = self.post_liveness(remote)
                verdict.flags.append(f"post_liveness:{report.post_liveness}")
                if (
                    report.post_liveness == "REACHABLE"
                    and "silent_after_urgent" in verdict.flags
                ):
                    report.recovered = True
                    verdict.flags.append("recovered")
        return report
