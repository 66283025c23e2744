"""IPv4/TCP segment model: bit-exact construction, serialization, and parsing.

Everything the scanner and simulator put on the wire goes through this module.
Segments are plain mutable dataclasses; `serialize` emits the stored field
values verbatim (including deliberately wrong checksums), while `fill` computes
the consistent lengths and checksums for honest traffic.

TCP header layout used throughout (byte 12 = data offset nibble | reserved
nibble, byte 13 = the eight control flags):

     0                   1                   2                   3
     0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |          Source Port          |       Destination Port        |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |                        Sequence Number                        |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |                    Acknowledgment Number                      |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |  Data |       |C|E|U|A|P|R|S|F|                               |
    | Offset| Rsrvd |W|C|R|C|S|S|Y|I|            Window             |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |           Checksum            |         Urgent Pointer        |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |                    Options                    |    Padding    |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from enum import IntFlag
from typing import Optional


class SegmentError(Exception):
    """Base error for wire-format problems."""


class OversizeOptions(SegmentError):
    """TCP options exceed the 40-byte limit."""


class OversizePacket(SegmentError):
    """Serialized datagram would exceed 65535 bytes."""


class Truncated(SegmentError):
    """Input ends before the structure it claims to contain."""


class BadDataOffset(SegmentError):
    """TCP data offset outside [5, 15]."""


class BadIpVersion(SegmentError):
    """Not a plain 20-byte IPv4 header (version != 4 or IHL != 5)."""


class NotTimeExceeded(SegmentError):
    """ICMP message is not a time-exceeded (type 11, code 0)."""


class TruncatedQuote(SegmentError):
    """ICMP quote shorter than the minimum IP header + 8 bytes."""


IP_HEADER_LEN = 20
TCP_MIN_HEADER_LEN = 20
TCP_MAX_OPTIONS_LEN = 40
MIN_QUOTE_LEN = IP_HEADER_LEN + 8


class TcpFlags(IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80

    def __str__(self) -> str:
        names = [f.name for f in TcpFlags if self & f]
        return "|".join(names) if names else "NONE"


def ip_to_int(addr: str) -> int:
    parts = addr.split(".")
    if len(parts) != 4 or not all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
        raise ValueError(f"bad IPv4 address: {addr!r}")
    a, b, c, d = (int(p) for p in parts)
    return (a << 24) | (b << 16) | (c << 8) | d


def int_to_ip(value: int) -> str:
    return ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))


@dataclass
class TcpOption:
    """One TCP option. EOOL and NOOP are single bytes; everything else is KLV."""

    kind: int
    payload: bytes = b""

    EOOL = 0
    NOOP = 1
    MSS = 2

    @classmethod
    def eool(cls) -> "TcpOption":
        return cls(cls.EOOL)

    @classmethod
    def noop(cls) -> "TcpOption":
        return cls(cls.NOOP)

    @classmethod
    def mss(cls, value: int) -> "TcpOption":
        if not 0 <= value <= 0xFFFF:
            raise ValueError(f"MSS out of range: {value}")
        return cls(cls.MSS, struct.pack("!H", value))

    @property
    def mss_value(self) -> Optional[int]:
        if self.kind == self.MSS and len(self.payload) == 2:
            return struct.unpack("!H", self.payload)[0]
        return None

    def wire_length(self) -> int:
        if self.kind in (self.EOOL, self.NOOP):
            return 1
        return 2 + len(self.payload)

    def to_bytes(self) -> bytes:
        if self.kind in (self.EOOL, self.NOOP):
            return bytes([self.kind])
        length = 2 + len(self.payload)
        if length > 255:
            raise OversizeOptions(f"option kind {self.kind} payload too long")
        return bytes([self.kind, length]) + self.payload


def serialize_options(options: list[TcpOption]) -> bytes:
    """Serialize an option list and zero-pad it to a 4-byte boundary.

    Padding bytes sit in the EOOL region: a parser reading them back sees an
    EOOL terminator. Lists are round-trip safe when they either already end on
    a 4-byte boundary or end with an explicit EOOL (see `canonical_options`).
    """
    raw = b"".join(opt.to_bytes() for opt in options)
    if len(raw) > TCP_MAX_OPTIONS_LEN:
        raise OversizeOptions(f"{len(raw)} option bytes exceed {TCP_MAX_OPTIONS_LEN}")
    pad = (4 - len(raw) % 4) % 4
    return raw + b"\x00" * pad


def parse_options(raw: bytes) -> list[TcpOption]:
    """Parse option bytes. EOOL terminates the list; unknown kinds are kept."""
    options: list[TcpOption] = []
    i = 0
    while i < len(raw):
        kind = raw[i]
        if kind == TcpOption.EOOL:
            options.append(TcpOption.eool())
            break
        if kind == TcpOption.NOOP:
            options.append(TcpOption.noop())
            i += 1
            continue
        if i + 1 >= len(raw):
            raise Truncated("option length byte missing")
        length = raw[i + 1]
        if length < 2 or i + length > len(raw):
            raise Truncated(f"option kind {kind} overruns header")
        options.append(TcpOption(kind, bytes(raw[i + 2 : i + length])))
        i += length
    return options


def canonical_options(options: list[TcpOption]) -> list[TcpOption]:
    """Return a list whose serialization parses back to itself.

    If the wire length is not a multiple of 4 the padding zeros would read
    back as an EOOL, so the list must end with one explicitly.
    """
    raw_len = sum(opt.wire_length() for opt in options)
    if raw_len % 4 != 0 and (not options or options[-1].kind != TcpOption.EOOL):
        return options + [TcpOption.eool()]
    return options


@dataclass
class Ipv4Header:
    source_addr: int
    dest_addr: int
    ttl: int = 64
    identification: int = 0
    protocol: int = 6
    total_length: int = 0
    header_checksum: int = 0

    def to_bytes(self) -> bytes:
        return struct.pack(
            "!BBHHHBBHII",
            0x45,
            0,
            self.total_length,
            self.identification,
            0,
            self.ttl,
            self.protocol,
            self.header_checksum,
            self.source_addr,
            self.dest_addr,
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Ipv4Header":
        if len(raw) < IP_HEADER_LEN:
            raise Truncated(f"IPv4 header needs 20 bytes, got {len(raw)}")
        ver_ihl = raw[0]
        if ver_ihl >> 4 != 4:
            raise BadIpVersion(f"IP version {ver_ihl >> 4}")
        if ver_ihl & 0x0F != 5:
            raise BadIpVersion(f"IPv4 options unsupported (IHL {ver_ihl & 0x0F})")
        (
            _vi,
            _tos,
            total_length,
            identification,
            _frag,
            ttl,
            protocol,
            checksum,
            src,
            dst,
        ) = struct.unpack("!BBHHHBBHII", raw[:IP_HEADER_LEN])
        return cls(
            source_addr=src,
            dest_addr=dst,
            ttl=ttl,
            identification=identification,
            protocol=protocol,
            total_length=total_length,
            header_checksum=checksum,
        )


@dataclass
class TcpHeader:
    source_port: int
    dest_port: int
    seq: int = 0
    ack: int = 0
    reserved_bits: int = 0
    flags: TcpFlags = TcpFlags(0)
    window: int = 65535
    checksum: int = 0
    urgent_pointer: int = 0
    options: list[TcpOption] = field(default_factory=list)

    @property
    def data_offset(self) -> int:
        return 5 + len(serialize_options(self.options)) // 4

    def header_length(self) -> int:
        return self.data_offset * 4


@dataclass
class Segment:
    """A full IPv4 datagram carrying one TCP segment."""

    ip: Ipv4Header
    tcp: TcpHeader
    payload: bytes = b""

    def clone(self) -> "Segment":
        return copy.deepcopy(self)

    @property
    def four_tuple(self) -> tuple[int, int, int, int]:
        return (self.ip.source_addr, self.tcp.source_port, self.ip.dest_addr, self.tcp.dest_port)

    def __str__(self) -> str:
        return (
            f"{int_to_ip(self.ip.source_addr)}:{self.tcp.source_port} > "
            f"{int_to_ip(self.ip.dest_addr)}:{self.tcp.dest_port} "
            f"[{self.tcp.flags}] seq={self.tcp.seq} ack={self.tcp.ack} "
            f"ttl={self.ip.ttl} len={len(self.payload)}"
        )


def rfc1071_checksum(data: bytes) -> int:
    """Ones-complement sum over 16-bit big-endian words, complemented."""
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def compute_ip_checksum(header: Ipv4Header) -> int:
    scratch = copy.copy(header)
    scratch.header_checksum = 0
    return rfc1071_checksum(scratch.to_bytes())


def _tcp_bytes(segment: Segment, checksum: int) -> bytes:
    tcp = segment.tcp
    for name, value, limit in (
        ("source_port", tcp.source_port, 0xFFFF),
        ("dest_port", tcp.dest_port, 0xFFFF),
        ("seq", tcp.seq, 0xFFFFFFFF),
        ("ack", tcp.ack, 0xFFFFFFFF),
        ("window", tcp.window, 0xFFFF),
        ("urgent_pointer", tcp.urgent_pointer, 0xFFFF),
        ("reserved_bits", tcp.reserved_bits, 0xF),
    ):
        if not 0 <= value <= limit:
            raise ValueError(f"tcp.{name} out of range: {value}")
    opts = serialize_options(tcp.options)
    offset = 5 + len(opts) // 4
    header = struct.pack(
        "!HHIIBBHHH",
        tcp.source_port,
        tcp.dest_port,
        tcp.seq,
        tcp.ack,
        (offset << 4) | tcp.reserved_bits,
        int(tcp.flags),
        tcp.window,
        checksum,
        tcp.urgent_pointer,
    )
    return header + opts + segment.payload


def compute_tcp_checksum(segment: Segment) -> int:
    """TCP checksum over the pseudo-header and segment, checksum field zeroed.

    A computed 0x0000 is returned as 0xFFFF (the on-wire substitution), so a
    checksum field of literal zero only ever means "deliberately zeroed".
    """
    body = _tcp_bytes(segment, 0)
    pseudo = struct.pack(
        "!IIBBH", segment.ip.source_addr, segment.ip.dest_addr, 0, 6, len(body)
    )
    value = rfc1071_checksum(pseudo + body)
    return 0xFFFF if value == 0 else value


def verify_tcp_checksum(segment: Segment) -> bool:
    return segment.tcp.checksum == compute_tcp_checksum(segment)


def fill(segment: Segment) -> Segment:
    """Populate total_length and both checksums in place; returns the segment."""
    body_len = TCP_MIN_HEADER_LEN + len(serialize_options(segment.tcp.options)) + len(
        segment.payload
    )
    segment.ip.total_length = IP_HEADER_LEN + body_len
    segment.tcp.checksum = compute_tcp_checksum(segment)
    segment.ip.header_checksum = compute_ip_checksum(segment.ip)
    return segment


def serialize(segment: Segment) -> bytes:
    """Emit the datagram in network byte order, fields exactly as stored.

    Lengths and the IP checksum are derived (they must be consistent for the
    packet to be routable at all); the TCP checksum field is emitted verbatim
    so crafted-invalid segments survive serialization.
    """
    tcp_bytes = _tcp_bytes(segment, segment.tcp.checksum)
    total = IP_HEADER_LEN + len(tcp_bytes)
    if total > 0xFFFF:
        raise OversizePacket(f"datagram of {total} bytes")
    ip = copy.copy(segment.ip)
    ip.total_length = total
    ip.header_checksum = 0
    ip.header_checksum = rfc1071_checksum(ip.to_bytes())
    segment.ip.total_length = total
    segment.ip.header_checksum = ip.header_checksum
    return ip.to_bytes() + tcp_bytes


def parse(raw: bytes) -> Segment:
    """Inverse of `serialize` for complete datagrams."""
    ip = Ipv4Header.from_bytes(raw)
    if len(raw) < IP_HEADER_LEN + TCP_MIN_HEADER_LEN:
        raise Truncated(f"need 40 bytes for IPv4+TCP, got {len(raw)}")
    end = len(raw)
    if IP_HEADER_LEN <= ip.total_length <= len(raw):
        end = ip.total_length
    tcp_raw = raw[IP_HEADER_LEN:end]
    (
        src_port,
        dst_port,
        seq,
        ack,
        off_rsvd,
        flags,
        window,
        checksum,
        urgent,
    ) = struct.unpack("!HHIIBBHHH", tcp_raw[:TCP_MIN_HEADER_LEN])
    offset = off_rsvd >> 4
    if offset < 5 or offset > 15:
        raise BadDataOffset(f"data offset {offset}")
    header_len = offset * 4
    if len(tcp_raw) < header_len:
        raise Truncated(f"TCP header claims {header_len} bytes, got {len(tcp_raw)}")
    options = parse_options(tcp_raw[TCP_MIN_HEADER_LEN:header_len])
    tcp = TcpHeader(
        source_port=src_port,
        dest_port=dst_port,
        seq=seq,
        ack=ack,
        reserved_bits=off_rsvd & 0x0F,
        flags=TcpFlags(flags),
        window=window,
        checksum=checksum,
        urgent_pointer=urgent,
        options=options,
    )
    return Segment(ip=ip, tcp=tcp, payload=bytes(tcp_raw[header_len:]))


# Field names shared by quote diffing and path diagnosis.
F_IP_ID = "ip.id"
F_SRC_PORT = "tcp.src_port"
F_DST_PORT = "tcp.dst_port"
F_SEQ = "tcp.seq"
F_ACK = "tcp.ack"
F_RESERVED = "tcp.reserved"
F_FLAGS = "tcp.flags"
F_URG_FLAG = "tcp.flags.urg"
F_WINDOW = "tcp.window"
F_CHECKSUM = "tcp.checksum"
F_URGENT_PTR = "tcp.urgent_ptr"
F_OPTIONS = "tcp.options"
F_MSS_OPTION = "tcp.options.mss"
F_PAYLOAD = "payload"


@dataclass
class SegmentQuote:
    """A partially quoted segment, as embedded in an ICMP time-exceeded.

    Only fields fully covered by the quote are populated; `available` names
    them. Minimum quotes (IP header + 8 TCP bytes) expose ports and seq only.
    """

    ip: Ipv4Header
    quoted_tcp_len: int
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    seq: Optional[int] = None
    ack: Optional[int] = None
    reserved_bits: Optional[int] = None
    flags: Optional[TcpFlags] = None
    window: Optional[int] = None
    checksum: Optional[int] = None
    urgent_pointer: Optional[int] = None
    options_bytes: Optional[bytes] = None
    payload: Optional[bytes] = None

    def available(self) -> set[str]:
        fields = {F_IP_ID}
        present = {
            F_SRC_PORT: self.src_port,
            F_DST_PORT: self.dst_port,
            F_SEQ: self.seq,
            F_ACK: self.ack,
            F_RESERVED: self.reserved_bits,
            F_FLAGS: self.flags,
            F_WINDOW: self.window,
            F_CHECKSUM: self.checksum,
            F_URGENT_PTR: self.urgent_pointer,
            F_OPTIONS: self.options_bytes,
            F_PAYLOAD: self.payload,
        }
        fields.update(name for name, value in present.items() if value is not None)
        if self.flags is not None:
            fields.add(F_URG_FLAG)
        if self.options_bytes is not None:
            fields.add(F_MSS_OPTION)
        return fields

    def options(self) -> list[TcpOption]:
        if self.options_bytes is None:
            return []
        return parse_options(self.options_bytes)

    def mss_value(self) -> Optional[int]:
        for opt in self.options():
            if opt.kind == TcpOption.MSS:
                return opt.mss_value
        return None


def parse_partial(raw: bytes) -> SegmentQuote:
    """Parse a possibly truncated datagram, tagging which fields survived."""
    ip = Ipv4Header.from_bytes(raw)
    tcp_raw = raw[IP_HEADER_LEN:]
    if len(tcp_raw) < 8:
        raise Truncated(f"quote carries {len(tcp_raw)} TCP bytes, need 8")
    quote = SegmentQuote(ip=ip, quoted_tcp_len=len(tcp_raw))
    quote.src_port, quote.dst_port = struct.unpack("!HH", tcp_raw[:4])
    quote.seq = struct.unpack("!I", tcp_raw[4:8])[0]
    if len(tcp_raw) >= 12:
        quote.ack = struct.unpack("!I", tcp_raw[8:12])[0]
    if len(tcp_raw) >= 13:
        quote.reserved_bits = tcp_raw[12] & 0x0F
    if len(tcp_raw) >= 14:
        quote.flags = TcpFlags(tcp_raw[13])
    if len(tcp_raw) >= 16:
        quote.window = struct.unpack("!H", tcp_raw[14:16])[0]
    if len(tcp_raw) >= 18:
        quote.checksum = struct.unpack("!H", tcp_raw[16:18])[0]
    if len(tcp_raw) >= 20:
        quote.urgent_pointer = struct.unpack("!H", tcp_raw[18:20])[0]
        offset = tcp_raw[12] >> 4
        if 5 <= offset <= 15:
            header_len = offset * 4
            if len(tcp_raw) >= header_len:
                quote.options_bytes = bytes(tcp_raw[TCP_MIN_HEADER_LEN:header_len])
                declared = ip.total_length - IP_HEADER_LEN
                if len(tcp_raw) >= declared >= header_len:
                    quote.payload = bytes(tcp_raw[header_len:declared])
    return quote


ICMP_TIME_EXCEEDED = 11


def parse_icmp_time_exceeded(raw: bytes) -> SegmentQuote:
    """Extract the quoted segment from an ICMP time-exceeded message.

    `raw` is the ICMP message itself (type byte first, outer IP header already
    stripped).
    """
    if len(raw) < 8:
        raise Truncated(f"ICMP header needs 8 bytes, got {len(raw)}")
    icmp_type, code = raw[0], raw[1]
    if icmp_type != ICMP_TIME_EXCEEDED or code != 0:
        raise NotTimeExceeded(f"ICMP type {icmp_type} code {code}")
    quoted = raw[8:]
    if len(quoted) < MIN_QUOTE_LEN:
        raise TruncatedQuote(f"quote of {len(quoted)} bytes, need {MIN_QUOTE_LEN}")
    return parse_partial(quoted)


def build_icmp_time_exceeded(quoted_datagram: bytes, quote_len: Optional[int] = None) -> bytes:
    """Build an ICMP time-exceeded message quoting (a prefix of) a datagram."""
    quote = quoted_datagram if quote_len is None else quoted_datagram[:quote_len]
    header = struct.pack("!BBHI", ICMP_TIME_EXCEEDED, 0, 0, 0)
    checksum = rfc1071_checksum(header + quote)
    return struct.pack("!BBHI", ICMP_TIME_EXCEEDED, 0, checksum, 0) + quote


def make_segment(
    src: str | int,
    sport: int,
    dst: str | int,
    dport: int,
    flags: TcpFlags = TcpFlags.SYN,
    seq: int = 0,
    ack: int = 0,
    window: int = 65535,
    ttl: int = 64,
    reserved_bits: int = 0,
    urgent_pointer: int = 0,
    options: Optional[list[TcpOption]] = None,
    payload: bytes = b"",
    checksum_override: Optional[int] = None,
) -> Segment:
    """Craft a finalized segment; `checksum_override` plants a deliberate value."""
    segment = Segment(
        ip=Ipv4Header(
            source_addr=ip_to_int(src) if isinstance(src, str) else src,
            dest_addr=ip_to_int(dst) if isinstance(dst, str) else dst,
            ttl=ttl,
        ),
        tcp=TcpHeader(
            source_port=sport,
            dest_port=dport,
            seq=seq,
            ack=ack,
            reserved_bits=reserved_bits,
            flags=flags,
            window=window,
            urgent_pointer=urgent_pointer,
            options=list(options or []),
        ),
        payload=payload,
    )
    fill(segment)
    if checksum_override is not None:
        segment.tcp.checksum = checksum_override
        segment.ip.header_checksum = compute_ip_checksum(segment.ip)
    return segment
