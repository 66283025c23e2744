"""Tests for the channel abstraction: pacing, demultiplexing, determinism."""

import random

import pytest

from tcpconform import netsim
from tcpconform.netsim import StackProfile, Topology, build_topology
from tcpconform.segment import TcpFlags, ip_to_int, make_segment
from tcpconform.transport import (
    Endpoint,
    IcmpIn,
    NoRoute,
    Pacer,
    PacerConfig,
    PortInUse,
    SessionClosed,
    TcpIn,
    Timeout,
)


def sim_link(**kwargs):
    return build_topology(Topology(**kwargs))


def endpoint_of(transport) -> Endpoint:
    return Endpoint(transport.network.endpoint_addr, transport.network.topology.endpoint_port)


def client(transport, port=40000) -> Endpoint:
    return Endpoint(transport.network.client_addr, port)


def syn_for(session, seq=100, **kwargs):
    return make_segment(
        src=session.local.addr,
        sport=session.local.port,
        dst=session.remote.addr,
        dport=session.remote.port,
        flags=TcpFlags.SYN,
        seq=seq,
        **kwargs,
    )


class TestPacer:
    def test_one_pps_spacing(self):
        pacer = Pacer(PacerConfig(rate_pps=1, burst=1))
        times = [pacer.reserve(0.0) for _ in range(3)]
        assert times[1] - times[0] >= 1.0
        assert times[2] - times[1] >= 1.0

    def test_burst_back_to_back(self):
        pacer = Pacer(PacerConfig(rate_pps=10000, burst=30))
        times = [pacer.reserve(5.0) for _ in range(30)]
        assert all(t == 5.0 for t in times)
        assert pacer.reserve(5.0) > 5.0

    def test_window_bound_property(self):
        rng = random.Random(3)
        config = PacerConfig(rate_pps=50, burst=7)
        pacer = Pacer(config)
        emissions = []
        now = 0.0
        for _ in range(500):
            now += rng.random() * 0.05
            emissions.append(pacer.reserve(now))
        for window in (0.1, 0.5, 2.0):
            for start in emissions[:: 17]:
                inside = sum(1 for t in emissions if start <= t < start + window)
                assert inside <= config.rate_pps * window + config.burst

    def test_rate_must_be_positive(self):
        with pytest.raises(ValueError):
            Pacer(PacerConfig(rate_pps=0))


class TestSessions:
    def test_port_in_use_on_same_tuple(self):
        transport = sim_link()
        remote = endpoint_of(transport)
        transport.open_session(client(transport), remote)
        with pytest.raises(PortInUse):
            transport.open_session(client(transport), remote)

    def test_distinct_local_ports_get_independent_streams(self):
        transport = sim_link()
        remote = endpoint_of(transport)
        s1 = transport.open_session(client(transport, 40000), remote)
        s2 = transport.open_session(client(transport, 40001), remote)
        s1.send(syn_for(s1, seq=111))
        s2.send(syn_for(s2, seq=222))
        e1 = s1.next_event(5.0)
        e2 = s2.next_event(5.0)
        assert isinstance(e1, TcpIn) and e1.segment.tcp.ack == 112
        assert isinstance(e2, TcpIn) and e2.segment.tcp.ack == 223

    def test_no_route_for_unknown_endpoint(self):
        transport = sim_link()
        with pytest.raises(NoRoute):
            transport.open_session(
                client(transport), Endpoint(ip_to_int("203.0.113.99"), 80)
            )

    def test_closed_session_raises(self):
        transport = sim_link()
        session = transport.open_session(client(transport), endpoint_of(transport))
        session.close()
        with pytest.raises(SessionClosed):
            session.send(make_segment("192.0.2.1", 40000, "198.51.100.10", 80))
        with pytest.raises(SessionClosed):
            session.next_event(1.0)

    def test_reopen_after_close(self):
        transport = sim_link()
        remote = endpoint_of(transport)
        transport.open_session(client(transport), remote).close()
        transport.open_session(client(transport), remote)


class TestEvents:
    def test_synack_reply(self):
        transport = sim_link()
        session = transport.open_session(client(transport), endpoint_of(transport))
        session.send(syn_for(session, seq=500))
        event = session.next_event(5.0)
        assert isinstance(event, TcpIn)
        assert event.segment.tcp.flags & TcpFlags.SYN
        assert event.segment.tcp.flags & TcpFlags.ACK

    def test_timeout_when_no_reply(self):
        transport = sim_link(blackhole=True)
        session = transport.open_session(client(transport), endpoint_of(transport))
        session.send(syn_for(session))
        before = transport.now()
        event = session.next_event(2.5)
        assert isinstance(event, Timeout)
        assert transport.now() - before == pytest.approx(2.5)

    def test_icmp_from_hop_router(self):
        transport = sim_link()
        session = transport.open_session(client(transport), endpoint_of(transport))
        probe = syn_for(session, ttl=2)
        session.send(probe)
        event = session.next_event(5.0)
        assert isinstance(event, IcmpIn)
        assert event.source_addr == ip_to_int("203.0.113.2")

    def test_events_in_receipt_order(self):
        transport = sim_link()
        session = transport.open_session(client(transport), endpoint_of(transport))
        for ttl in (1, 2, 3):
            session.send(syn_for(session, ttl=ttl))
        sources = []
        for _ in range(3):
            event = session.next_event(5.0)
            assert isinstance(event, IcmpIn)
            sources.append(event.source_addr)
        assert sources == [ip_to_int(f"203.0.113.{h}") for h in (1, 2, 3)]


class TestDeterminism:
    def test_identical_runs_identical_transcripts(self):
        def transcript():
            topo = Topology(profile=StackProfile(name="conformant"), seed=9)
            steps = [
                netsim.ScriptStep(0.0, make_segment("192.0.2.1", 40000, "198.51.100.10", 80, seq=1)),
                netsim.ScriptStep(0.5, make_segment("192.0.2.1", 40001, "198.51.100.10", 80, ttl=2)),
            ]
            return netsim.run_script(topo, steps).lines()

        assert transcript() == transcript()
