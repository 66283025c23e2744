"""Raw-network transport adapter.

Sends full IPv4 datagrams over a raw socket and demultiplexes inbound TCP and
ICMP to sessions in a background reader thread. Requires CAP_NET_RAW (or
root).

Operational requirement: the host kernel answers probes to scanner-owned
ports with its own RSTs unless told otherwise. Suppress them for the local
port range before scanning, e.g.:

    iptables -A OUTPUT -p tcp --tcp-flags RST RST --sport 40000:59999 -j DROP

This is deliberately not automated here; it is the operator's call.
"""

from __future__ import annotations

import queue
import select
import socket
import threading
import time
from typing import Optional

from . import segment as seg
from .segment import Segment
from .transport import (
    Endpoint,
    IcmpIn,
    PacerConfig,
    Session,
    TcpIn,
    Timeout,
    Transport,
)


class PrivilegeError(Exception):
    """Raw sockets need CAP_NET_RAW."""


class RawSession(Session):
    def __init__(self, transport: "RawTransport", local: Endpoint, remote: Endpoint):
        super().__init__(transport, local, remote)
        self.queue: "queue.Queue" = queue.Queue()


class RawTransport(Transport):
    """Transport over AF_INET raw sockets with IP_HDRINCL."""

    def __init__(self, pacer: Optional[PacerConfig] = None):
        super().__init__(pacer)
        try:
            self._tcp_sock = socket.socket(
                socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_TCP
            )
            self._tcp_sock.setsockopt(socket.IPPROTO_IP, socket.IP_HDRINCL, 1)
            self._icmp_sock = socket.socket(
                socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP
            )
        except PermissionError as exc:
            raise PrivilegeError(
                "raw sockets unavailable; run with CAP_NET_RAW or as root"
            ) from exc
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def now(self) -> float:
        return time.monotonic()

    def close(self) -> None:
        self._stop.set()
        self._reader.join(timeout=1.0)
        self._tcp_sock.close()
        self._icmp_sock.close()

    def open_session(self, local: Endpoint, remote: Endpoint) -> Session:
        with self._lock:
            return super().open_session(local, remote)

    def _release(self, session: Session) -> None:
        with self._lock:
            super()._release(session)

    def _make_session(self, local: Endpoint, remote: Endpoint) -> RawSession:
        return RawSession(self, local, remote)

    def _send(self, session: Session, segment: Segment) -> float:
        with self._lock:
            emit_at = self.pacer.reserve(self.now())
        delay = emit_at - self.now()
        if delay > 0:
            time.sleep(delay)
        raw = seg.serialize(segment)
        self._tcp_sock.sendto(raw, (seg.int_to_ip(segment.ip.dest_addr), 0))
        return emit_at

    def _next_event(self, session: RawSession, deadline: float, token: int):
        end = self.now() + deadline
        remaining = end - self.now()
        if remaining <= 0:
            return Timeout(token, end)
        try:
            return session.queue.get(timeout=remaining)
        except queue.Empty:
            return Timeout(token, end)

    # -- reader thread -----------------------------------------------------

    def _read_loop(self) -> None:
        while not self._stop.is_set():
            try:
                ready, _, _ = select.select(
                    [self._tcp_sock, self._icmp_sock], [], [], 0.2
                )
            except OSError:
                return
            now = self.now()
            for sock in ready:
                try:
                    raw = sock.recv(65535)
                except OSError:
                    continue
                if sock is self._tcp_sock:
                    self._dispatch_tcp(raw, now)
                else:
                    self._dispatch_icmp(raw, now)

    def _dispatch_tcp(self, raw: bytes, now: float) -> None:
        try:
            segment = seg.parse(raw)
        except seg.SegmentError:
            return
        key = (
            segment.ip.dest_addr,
            segment.tcp.dest_port,
            segment.ip.source_addr,
            segment.tcp.source_port,
        )
        with self._lock:
            session = self._sessions.get(key)
        if isinstance(session, RawSession):
            session.queue.put(TcpIn(segment, now))

    def _dispatch_icmp(self, raw: bytes, now: float) -> None:
        # Raw ICMP sockets deliver the outer IP header too.
        try:
            outer = seg.Ipv4Header.from_bytes(raw)
        except seg.SegmentError:
            return
        icmp = raw[seg.IP_HEADER_LEN:]
        try:
            quote = seg.parse_icmp_time_exceeded(icmp)
        except seg.SegmentError:
            return
        with self._lock:
            session = self.match_session(
                quote.ip.source_addr,
                quote.src_port or 0,
                quote.ip.dest_addr,
                quote.dst_port or 0,
            )
        if isinstance(session, RawSession):
            session.queue.put(IcmpIn(icmp, outer.source_addr, now))
