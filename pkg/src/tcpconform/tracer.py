"""Middlebox localization: TTL-encoded probe fans and ICMP quote analysis.

Each conformance test duplicates its first segment with IP TTLs 1..30 so that
every hop on the path returns an ICMP time-exceeded quote of the probe as it
looked there. The TTL is redundantly packed into header fields a middlebox is
unlikely to rewrite all of, so the expiring hop can be recovered even when
individual carriers were altered or the quote was truncated.

Packing layout (fixed): a 16-bit carrier holds three copies of the 5-bit
value at bits [14..10], [9..5], [4..0] with the top bit zero; a 32-bit
carrier holds six copies at [29..25] .. [4..0] with the top two bits zero.
The NOOP carrier appends as many NOOP options as the TTL value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import segment as seg
from .segment import Segment, SegmentQuote, TcpOption


class TracerError(Exception):
    pass


class ValueOutOfRange(TracerError):
    """TTL value outside [1, 30]."""


class NoCarrierAvailable(TracerError):
    """None of the requested carriers is present in the quote."""


MAX_TTL = 30


class Carrier(Enum):
    IPV4_ID = "ipv4_id"
    ACK_NUM = "ack_num"
    WINDOW = "window"
    URGENT_PTR = "urgent_ptr"
    NOOP_COUNT = "noop_count"


ALL_CARRIERS = frozenset(Carrier)

# Copies of the 5-bit value each carrier holds.
CARRIER_COPIES = {
    Carrier.IPV4_ID: 3,
    Carrier.ACK_NUM: 6,
    Carrier.WINDOW: 3,
    Carrier.URGENT_PTR: 3,
    Carrier.NOOP_COUNT: 1,
}


def _check_value(value: int) -> None:
    if not 1 <= value <= MAX_TTL:
        raise ValueOutOfRange(f"TTL value {value} outside [1, {MAX_TTL}]")


def pack16(value: int) -> int:
    _check_value(value)
    return (value << 10) | (value << 5) | value


def pack32(value: int) -> int:
    _check_value(value)
    packed = 0
    for shift in (25, 20, 15, 10, 5, 0):
        packed |= value << shift
    return packed


def _groups16(packed: int) -> list[int]:
    return [(packed >> s) & 0x1F for s in (10, 5, 0)]


def _groups32(packed: int) -> list[int]:
    return [(packed >> s) & 0x1F for s in (25, 20, 15, 10, 5, 0)]


def encode_ttl(value: int, carriers: frozenset[Carrier] | set[Carrier]) -> dict[Carrier, int]:
    """Field values carrying `value`; NOOP_COUNT maps to the NOOP count itself."""
    _check_value(value)
    fields: dict[Carrier, int] = {}
    for carrier in carriers:
        if carrier is Carrier.ACK_NUM:
            fields[carrier] = pack32(value)
        elif carrier is Carrier.NOOP_COUNT:
            fields[carrier] = value
        else:
            fields[carrier] = pack16(value)
    return fields


def apply_encoding(
    probe: Segment,
    value: int,
    carriers: frozenset[Carrier] | set[Carrier],
    recompute_checksum: bool = True,
) -> Segment:
    """Stamp TTL `value` into `probe` in place: IP TTL plus every carrier.

    Checksum-probing tests pass recompute_checksum=False so the crafted
    checksum field survives the carrier rewrites.
    """
    fields = encode_ttl(value, carriers)
    probe.ip.ttl = value
    for carrier, encoded in fields.items():
        if carrier is Carrier.IPV4_ID:
            probe.ip.identification = encoded
        elif carrier is Carrier.ACK_NUM:
            probe.tcp.ack = encoded
        elif carrier is Carrier.WINDOW:
            probe.tcp.window = encoded
        elif carrier is Carrier.URGENT_PTR:
            probe.tcp.urgent_pointer = encoded
        elif carrier is Carrier.NOOP_COUNT:
            if any(o.kind == TcpOption.NOOP for o in probe.tcp.options):
                raise TracerError("NOOP carrier needs a NOOP-free base option list")
            if any(o.kind == TcpOption.EOOL for o in probe.tcp.options):
                raise TracerError("NOOP carrier cannot follow an EOOL terminator")
            probe.tcp.options = probe.tcp.options + [TcpOption.noop()] * encoded
    if recompute_checksum:
        probe.tcp.checksum = seg.compute_tcp_checksum(probe)
    probe.ip.header_checksum = seg.compute_ip_checksum(probe.ip)
    return probe


def build_fan(
    base: Segment,
    max_ttl: int = MAX_TTL,
    carriers: frozenset[Carrier] | set[Carrier] = ALL_CARRIERS,
    recompute_checksum: bool = True,
) -> list[Segment]:
    """TTL-limited duplicates of a test's first segment, TTLs 1..max_ttl."""
    if not 1 <= max_ttl <= MAX_TTL:
        raise ValueOutOfRange(f"max_ttl {max_ttl} outside [1, {MAX_TTL}]")
    fan = []
    for value in range(1, max_ttl + 1):
        copy = base.clone()
        apply_encoding(copy, value, carriers, recompute_checksum=recompute_checksum)
        fan.append(copy)
    return fan


def decode_ttl(
    quote: SegmentQuote, carriers: frozenset[Carrier] | set[Carrier]
) -> tuple[Optional[int], float]:
    """Recover the TTL from whatever carriers survived in a quote.

    Copies are grouped per carrier field. A field votes only when its copies
    are internally consistent and in range (a rewritten 32-bit field almost
    never is); the winner needs a strict majority of the consistent votes.
    Confidence is the fraction of all extracted copies agreeing with the
    winner, so a single rewritten field shows up as confidence < 1.
    """
    per_field: list[list[int]] = []
    available = quote.available()
    for carrier in carriers:
        if carrier is Carrier.IPV4_ID:
            per_field.append(_groups16(quote.ip.identification))
        elif carrier is Carrier.ACK_NUM and quote.ack is not None:
            per_field.append(_groups32(quote.ack))
        elif carrier is Carrier.WINDOW and quote.window is not None:
            per_field.append(_groups16(quote.window))
        elif carrier is Carrier.URGENT_PTR and quote.urgent_pointer is not None:
            per_field.append(_groups16(quote.urgent_pointer))
        elif carrier is Carrier.NOOP_COUNT and seg.F_OPTIONS in available:
            count = sum(1 for o in quote.options() if o.kind == TcpOption.NOOP)
            per_field.append([count])
    if not per_field:
        raise NoCarrierAvailable(f"no carrier of {sorted(c.value for c in carriers)} in quote")

    total_copies = sum(len(groups) for groups in per_field)
    votes: dict[int, int] = {}
    coherent_total = 0
    for groups in per_field:
        first = groups[0]
        if 1 <= first <= MAX_TTL and all(g == first for g in groups):
            votes[first] = votes.get(first, 0) + len(groups)
            coherent_total += len(groups)
    if not votes:
        return None, 0.0
    value, count = max(votes.items(), key=lambda kv: kv[1])
    if count * 2 <= coherent_total:
        return None, 0.0
    return value, count / total_copies


@dataclass
class PathObservation:
    """One decoded ICMP time-exceeded quote, attributed to a hop."""

    hop: int
    router_addr: int
    quoted: SegmentQuote
    diffs: list[tuple[str, object, object]]
    confidence: float = 1.0


@dataclass
class PathDiagnosis:
    modified: bool
    first_modifying_hop: Optional[int]
    relevant_fields: list[str] = field(default_factory=list)


# Mechanically coupled fields never diffed: TTL decrements by design and the
# IP checksum changes with it at every hop.
_NEVER_DIFFED = {"ip.ttl", "ip.checksum"}


def diff_quote(sent: Segment, quote: SegmentQuote) -> list[tuple[str, object, object]]:
    """Field-level differences between a sent probe and its quoted echo.

    Only fields actually present in the quote are compared; derived entries
    for the URG flag and the MSS option value let tests name exactly the
    behavior they manipulate.
    """
    diffs: list[tuple[str, object, object]] = []
    available = quote.available()

    def check(name: str, sent_value: object, quoted_value: object) -> None:
        if name in available and sent_value != quoted_value:
            diffs.append((name, sent_value, quoted_value))

    check(seg.F_IP_ID, sent.ip.identification, quote.ip.identification)
    check(seg.F_SRC_PORT, sent.tcp.source_port, quote.src_port)
    check(seg.F_DST_PORT, sent.tcp.dest_port, quote.dst_port)
    check(seg.F_SEQ, sent.tcp.seq, quote.seq)
    check(seg.F_ACK, sent.tcp.ack, quote.ack)
    check(seg.F_RESERVED, sent.tcp.reserved_bits, quote.reserved_bits)
    check(seg.F_WINDOW, sent.tcp.window, quote.window)
    check(seg.F_CHECKSUM, sent.tcp.checksum, quote.checksum)
    check(seg.F_URGENT_PTR, sent.tcp.urgent_pointer, quote.urgent_pointer)
    if quote.flags is not None:
        check(seg.F_FLAGS, int(sent.tcp.flags), int(quote.flags))
        check(
            seg.F_URG_FLAG,
            bool(sent.tcp.flags & seg.TcpFlags.URG),
            bool(quote.flags & seg.TcpFlags.URG),
        )
    if quote.options_bytes is not None:
        sent_opts = seg.serialize_options(sent.tcp.options)
        quoted_opts = seg.serialize_options(quote.options())
        check(seg.F_OPTIONS, sent_opts.hex(), quoted_opts.hex())
        sent_mss = next(
            (o.mss_value for o in sent.tcp.options if o.kind == TcpOption.MSS), None
        )
        check(seg.F_MSS_OPTION, sent_mss, quote.mss_value())
    if quote.payload is not None:
        check(seg.F_PAYLOAD, sent.payload.hex(), quote.payload.hex())
    return [d for d in diffs if d[0] not in _NEVER_DIFFED]


def correlate_icmp(
    icmp_raw: bytes,
    router_addr: int,
    fan: list[Segment],
    carriers: frozenset[Carrier] | set[Carrier],
) -> Optional[PathObservation]:
    """Turn one ICMP message into a PathObservation against the matching probe.

    Returns None when the quote cannot be attributed (undecodable TTL or no
    probe with that TTL) -- unattributable evidence never drives a diagnosis.
    """
    try:
        quote = seg.parse_icmp_time_exceeded(icmp_raw)
    except seg.SegmentError:
        return None
    try:
        value, confidence = decode_ttl(quote, carriers)
    except NoCarrierAvailable:
        return None
    if value is None or not 1 <= value <= len(fan):
        return None
    sent = fan[value - 1]
    return PathObservation(
        hop=value,
        router_addr=router_addr,
        quoted=quote,
        diffs=diff_quote(sent, quote),
        confidence=confidence,
    )


def diagnose(
    sent: Segment,
    observations: list[PathObservation],
    relevant_fields: set[str] | list[str],
) -> PathDiagnosis:
    """Attribute non-conformance to the path only when a relevant field moved.

    Diffs on fields a test does not exercise (NAT port rewrites, carrier
    mangling) never mark the path as modifying; absent fields in truncated
    quotes never attest anything.
    """
    relevant = set(relevant_fields)
    modifying = [
        obs.hop
        for obs in observations
        if any(name in relevant for name, _, _ in obs.diffs)
    ]
    if not modifying:
        return PathDiagnosis(False, None, sorted(relevant))
    return PathDiagnosis(True, min(modifying), sorted(relevant))
