"""Tests for the conformance test battery: drivers, verdicts, precedence."""

import pytest

from tcpconform import netsim
from tcpconform.netsim import (
    Deviation,
    MiddleboxKind,
    MiddleboxSpec,
    QuoteLen,
    StackProfile,
    Topology,
    build_topology,
)
from tcpconform.segment import TcpFlags, ip_to_int
from tcpconform.suite import (
    ALL_TESTS,
    ConformanceSuite,
    ProbeExchange,
    Result,
    SuiteConfig,
    TestId,
    classify,
    seq_covers,
)
from tcpconform.transport import Endpoint


def make_suite(topology: Topology, seed=1, **config_kwargs) -> tuple[ConformanceSuite, Endpoint]:
    transport = build_topology(topology)
    suite = ConformanceSuite(transport, SuiteConfig(seed=seed, **config_kwargs))
    remote = Endpoint(ip_to_int(topology.endpoint_addr), topology.endpoint_port)
    return suite, remote


def profile_topology(*deviations: Deviation, **profile_kwargs) -> Topology:
    return Topology(
        profile=StackProfile(
            name="test", deviations=frozenset(deviations), **profile_kwargs
        )
    )


class TestLiveness:
    def test_conformant_alive(self):
        suite, remote = make_suite(Topology())
        assert suite.liveness(remote) == "ALIVE"

    def test_unbound_port_rst_dead(self):
        suite, remote = make_suite(Topology())
        assert suite.liveness(Endpoint(remote.addr, 81)) == "DEAD"

    def test_blackholed_dead_after_deadline(self):
        suite, remote = make_suite(Topology(blackhole=True))
        before = suite.transport.now()
        assert suite.liveness(remote) == "DEAD"
        assert suite.transport.now() - before >= suite.config.reply_deadline


class TestChecksum:
    @pytest.mark.parametrize("mode", ["INCORRECT", "ZERO"])
    def test_conformant_passes(self, mode):
        suite, remote = make_suite(Topology())
        verdict, _ = suite.test_checksum(remote, mode)
        assert verdict.result is Result.PASS
        assert verdict.sub_results == {
            "syn_stage": Result.PASS,
            "ack_stage": Result.PASS,
        }

    @pytest.mark.parametrize("mode", ["INCORRECT", "ZERO"])
    def test_checksum_ignoring_stack_fails_both_stages(self, mode):
        suite, remote = make_suite(profile_topology(Deviation.IGNORE_BAD_CHECKSUM))
        verdict, _ = suite.test_checksum(remote, mode)
        assert verdict.result is Result.F_TARGET
        assert verdict.sub_results["syn_stage"] is Result.F_TARGET
        assert verdict.sub_results["ack_stage"] is Result.F_TARGET

    def test_checksum_fixing_hop_is_path_failure(self):
        topo = Topology(middleboxes=[MiddleboxSpec(2, MiddleboxKind.FIX_CHECKSUM)])
        suite, remote = make_suite(topo)
        verdict, _ = suite.test_checksum(remote, "ZERO")
        assert verdict.result is Result.F_PATH
        assert verdict.path.first_modifying_hop == 2

    def test_unreachable_control_is_unk(self):
        suite, remote = make_suite(Topology(blackhole=True))
        verdict, _ = suite.test_checksum(remote, "INCORRECT")
        assert verdict.result is Result.UNK
        assert "control_handshake_failed" in verdict.flags

    def test_planted_checksum_never_valid_for_any_fan_copy(self):
        suite, remote = make_suite(Topology())
        _, exchange = suite.test_checksum(remote, "INCORRECT")
        from tcpconform import segment as seg

        fan_size = exchange.meta["fan_size"]
        for frame in exchange.sent[: fan_size + 1]:
            probe = frame.segment()
            assert not seg.verify_tcp_checksum(probe)
            assert probe.tcp.checksum != 0


class TestOptions:
    def test_conformant_passes_padding_options(self):
        suite, remote = make_suite(Topology())
        verdict, exchange = suite.test_option_support(remote)
        assert verdict.result is Result.PASS
        base = exchange.sent[exchange.meta["fan_size"]].segment()
        assert [o.kind for o in base.tcp.options] == [1, 1, 0]

    def test_option_stripping_hop(self):
        topo = Topology(middleboxes=[MiddleboxSpec(4, MiddleboxKind.STRIP_PADDING)])
        suite, remote = make_suite(topo)
        verdict, _ = suite.test_option_support(remote)
        assert verdict.result is Result.F_PATH
        assert verdict.path.first_modifying_hop == 4

    def test_rst_on_options_is_target_failure(self):
        suite, remote = make_suite(profile_topology(Deviation.RST_ON_OPTIONS))
        verdict, _ = suite.test_option_support(remote)
        assert verdict.result is Result.F_TARGET
        assert "rst_observed" in verdict.flags

    def test_unknown_option_conformant(self):
        suite, remote = make_suite(Topology())
        verdict, exchange = suite.test_option_unknown(remote)
        assert verdict.result is Result.PASS
        base = exchange.sent[exchange.meta["fan_size"]].segment()
        assert base.tcp.options[0].kind == 158
        assert base.tcp.options[0].payload == b"\xde\xad"

    def test_unknown_option_dropped_by_target(self):
        suite, remote = make_suite(profile_topology(Deviation.DROP_UNKNOWN_OPTION))
        verdict, _ = suite.test_option_unknown(remote)
        assert verdict.result is Result.F_TARGET

    def test_unknown_option_stripped_at_hop_1(self):
        topo = Topology(middleboxes=[MiddleboxSpec(1, MiddleboxKind.STRIP_UNKNOWN_OPTION)])
        suite, remote = make_suite(topo)
        verdict, _ = suite.test_option_unknown(remote)
        assert verdict.result is Result.F_PATH
        assert verdict.path.first_modifying_hop == 1


class TestMss:
    def test_conformant_serves_small_segments(self):
        suite, remote = make_suite(Topology())
        verdict, exchange = suite.test_mss_support(remote)
        assert verdict.result is Result.PASS
        sizes = [
            len(f.segment().payload) for f in exchange.received if f.segment().payload
        ]
        assert sizes and all(n <= 515 for n in sizes)

    def test_mss_floor_stack_fails(self):
        suite, remote = make_suite(profile_topology(Deviation.MSS_FLOOR_536))
        verdict, _ = suite.test_mss_support(remote)
        assert verdict.result is Result.F_TARGET

    def test_mss_clamping_hop(self):
        topo = Topology(middleboxes=[MiddleboxSpec(2, MiddleboxKind.MSS_CLAMP, value=1460)])
        suite, remote = make_suite(topo)
        verdict, _ = suite.test_mss_support(remote)
        assert verdict.result is Result.F_PATH
        assert verdict.path.first_modifying_hop == 2

    def test_missing_mss_conformant(self):
        suite, remote = make_suite(Topology())
        verdict, exchange = suite.test_mss_missing(remote)
        assert verdict.result is Result.PASS
        base = exchange.sent[exchange.meta["fan_size"]].segment()
        assert base.tcp.options == []

    def test_default_1024_stack_fails_missing(self):
        suite, remote = make_suite(profile_topology(Deviation.DEFAULT_MSS_1024))
        verdict, _ = suite.test_mss_missing(remote)
        assert verdict.result is Result.F_TARGET

    def test_mss_inserting_hop(self):
        topo = Topology(middleboxes=[MiddleboxSpec(1, MiddleboxKind.MSS_INSERT, value=1460)])
        suite, remote = make_suite(topo)
        verdict, _ = suite.test_mss_missing(remote)
        assert verdict.result is Result.F_PATH
        assert verdict.path.first_modifying_hop == 1

    def test_no_data_is_unk(self):
        suite, remote = make_suite(Topology(profile=StackProfile(response_body_len=0)))
        for result_fn in (suite.test_mss_support, suite.test_mss_missing):
            verdict, _ = result_fn(remote)
            assert verdict.result is Result.UNK
            assert "no_data" in verdict.flags


class TestReserved:
    def test_conformant_passes_both_stages(self):
        suite, remote = make_suite(Topology())
        verdict, exchange = suite.test_reserved(remote)
        assert verdict.result is Result.PASS
        assert verdict.sub_results == {
            "syn_stage": Result.PASS,
            "ack_stage": Result.PASS,
        }
        base = exchange.sent[exchange.meta["fan_size"]].segment()
        assert base.tcp.reserved_bits == 0x4

    def test_defer_accept_fails_ack_stage_with_advisory(self):
        suite, remote = make_suite(profile_topology(Deviation.DEFER_ACCEPT))
        verdict, _ = suite.test_reserved(remote)
        assert verdict.sub_results["syn_stage"] is Result.PASS
        assert verdict.sub_results["ack_stage"] is Result.F_TARGET
        assert verdict.result is Result.F_TARGET
        assert "possible_defer_accept" in verdict.flags

    def test_defer_accept_probe_confirms(self):
        suite, remote = make_suite(
            profile_topology(Deviation.DEFER_ACCEPT), defer_accept_probe=True
        )
        verdict, _ = suite.test_reserved(remote)
        assert verdict.sub_results["ack_stage"] is Result.F_TARGET
        assert "defer_accept_confirmed" in verdict.flags

    def test_dropped_reserved_syn_fails_syn_stage(self):
        suite, remote = make_suite(profile_topology(Deviation.DROP_RESERVED_SYN))
        verdict, _ = suite.test_reserved(remote)
        assert verdict.sub_results["syn_stage"] is Result.F_TARGET
        assert "ack_stage" not in verdict.sub_results
        assert verdict.result is Result.F_TARGET

    def test_echoed_reserved_bits_fail_syn_stage(self):
        suite, remote = make_suite(profile_topology(Deviation.ECHO_RESERVED_BITS))
        verdict, _ = suite.test_reserved(remote)
        assert verdict.sub_results["syn_stage"] is Result.F_TARGET
        assert "echoed_reserved_bits" in verdict.flags
        assert verdict.sub_results["ack_stage"] is Result.PASS

    def test_reserved_clearing_hop(self):
        topo = Topology(middleboxes=[MiddleboxSpec(3, MiddleboxKind.CLEAR_RESERVED)])
        suite, remote = make_suite(topo)
        verdict, _ = suite.test_reserved(remote)
        assert verdict.result is Result.F_PATH
        assert verdict.path.first_modifying_hop == 3


class TestUrgent:
    def test_conformant_acks_all_urgent_data(self):
        suite, remote = make_suite(Topology())
        verdict, exchange = suite.test_urgent_pointer(remote)
        assert verdict.result is Result.PASS

    def test_urgent_pointer_arithmetic(self):
        suite, remote = make_suite(Topology())
        _, exchange = suite.test_urgent_pointer(remote)
        urgent_end = exchange.meta["urgent_end"]
        urgent_frames = [
            f.segment()
            for f in exchange.sent
            if f.segment().tcp.flags & TcpFlags.URG
        ]
        assert len(urgent_frames) == 3
        assert [len(f.payload) for f in urgent_frames] == [167, 167, 167]
        for frame in urgent_frames:
            assert (frame.tcp.seq + frame.tcp.urgent_pointer) % 2**32 == urgent_end

    def test_crashing_stack_fails_and_goes_dark(self):
        suite, remote = make_suite(profile_topology(Deviation.CRASH_ON_URGENT))
        verdict, _ = suite.test_urgent_pointer(remote)
        assert verdict.result is Result.F_TARGET
        assert suite.post_liveness(remote) == "UNREACHABLE"

    def test_silent_discard_has_no_rst_note(self):
        suite, remote = make_suite(profile_topology(Deviation.DROP_URGENT_SILENTLY))
        verdict, _ = suite.test_urgent_pointer(remote)
        assert verdict.result is Result.F_TARGET
        assert "rst_observed" not in verdict.flags
        assert "silent_after_urgent" in verdict.flags

    def test_rst_termination_noted(self):
        suite, remote = make_suite(profile_topology(Deviation.RST_ON_URGENT))
        verdict, _ = suite.test_urgent_pointer(remote)
        assert verdict.result is Result.F_TARGET
        assert "rst_observed" in verdict.flags

    def test_handshake_failure_is_unk(self):
        suite, remote = make_suite(Topology(blackhole=True))
        verdict, _ = suite.test_urgent_pointer(remote)
        assert verdict.result is Result.UNK


class TestRunSuite:
    @pytest.mark.parametrize("path_len", [1, 4, 12])
    def test_conformant_all_pass(self, path_len):
        suite, remote = make_suite(Topology(path_len=path_len))
        report = suite.run_suite(remote)
        assert report.alive
        assert len(report.verdicts) == 8
        assert all(v.result is Result.PASS for v in report.verdicts.values())
        assert report.post_liveness == "REACHABLE"

    def test_dead_target_runs_no_tests(self):
        suite, remote = make_suite(Topology(blackhole=True))
        report = suite.run_suite(remote)
        assert not report.alive
        assert report.verdicts == {}

    def test_enabled_subset(self):
        suite, remote = make_suite(Topology())
        report = suite.run_suite(remote, [TestId.RESERVED])
        assert set(report.verdicts) == {TestId.RESERVED}

    def test_four_tuples_never_reused(self):
        suite, remote = make_suite(Topology())
        report = suite.run_suite(remote)
        ports = set()
        for exchange in report.exchanges.values():
            for key in ("local_port", "stage1_port", "stage2_port"):
                if key in exchange.meta:
                    assert exchange.meta[key] not in ports
                    ports.add(exchange.meta[key])

    def test_restart_after_crash_flagged_recovered(self):
        topo = profile_topology(Deviation.CRASH_ON_URGENT)
        topo.profile.restart_after_crash = True
        suite, remote = make_suite(topo)
        report = suite.run_suite(remote, [TestId.URGENT_POINTER])
        assert report.post_liveness == "REACHABLE"
        assert report.recovered
        assert "recovered" in report.verdicts[TestId.URGENT_POINTER].flags


class TestClassificationPurity:
    @pytest.mark.parametrize(
        "topology,test_id",
        [
            (Topology(middleboxes=[MiddleboxSpec(3, MiddleboxKind.MSS_INSERT, value=1460)]), TestId.MSS_MISSING),
            (profile_topology(Deviation.DEFER_ACCEPT), TestId.RESERVED),
            (Topology(), TestId.CHECKSUM_INCORRECT),
            (profile_topology(Deviation.MSS_FLOOR_536), TestId.MSS_SUPPORT),
        ],
    )
    def test_verdict_reproducible_from_stored_evidence(self, topology, test_id):
        suite, remote = make_suite(topology)
        verdict, exchange = suite.run_test(test_id, remote)
        reloaded = ProbeExchange.from_dict(exchange.to_dict())
        replayed = classify(reloaded, suite.config)
        assert replayed.result == verdict.result
        assert replayed.sub_results == verdict.sub_results
        assert sorted(replayed.flags) == sorted(
            [f for f in verdict.flags if not f.startswith("post_liveness")]
        )
        if verdict.path:
            assert replayed.path.modified == verdict.path.modified
            assert replayed.path.first_modifying_hop == verdict.path.first_modifying_hop


class TestCarrierExclusions:
    """Each test's fan must never encode into a field the test manipulates."""

    def test_meta_matches_exclusion_table(self):
        suite, remote = make_suite(Topology())
        report = suite.run_suite(remote)
        expected = {
            TestId.CHECKSUM_INCORRECT: {"ack_num", "ipv4_id", "noop_count", "urgent_ptr", "window"},
            TestId.CHECKSUM_ZERO: {"ack_num", "ipv4_id", "noop_count", "urgent_ptr", "window"},
            TestId.OPTION_SUPPORT: {"ack_num", "ipv4_id", "urgent_ptr", "window"},
            TestId.OPTION_UNKNOWN: {"ack_num", "ipv4_id", "urgent_ptr", "window"},
            TestId.MSS_SUPPORT: {"ack_num", "ipv4_id", "urgent_ptr", "window"},
            TestId.MSS_MISSING: {"ack_num", "ipv4_id", "urgent_ptr", "window"},
            TestId.RESERVED: {"ack_num", "ipv4_id", "noop_count", "urgent_ptr", "window"},
            TestId.URGENT_POINTER: {"ack_num", "ipv4_id", "noop_count", "window"},
        }
        for test_id, exchange in report.exchanges.items():
            assert set(exchange.meta["carriers"]) == expected[test_id], test_id

    def test_option_test_fans_never_touch_options(self):
        suite, remote = make_suite(Topology())
        for runner in (suite.test_option_support, suite.test_option_unknown,
                       suite.test_mss_support, suite.test_mss_missing):
            _, exchange = runner(remote)
            fan_size = exchange.meta["fan_size"]
            base = exchange.sent[fan_size].segment()
            for frame in exchange.sent[:fan_size]:
                assert frame.segment().tcp.options == base.tcp.options

    def test_urgent_fan_never_touches_urgent_pointer(self):
        suite, remote = make_suite(Topology())
        _, exchange = suite.test_urgent_pointer(remote)
        for frame in exchange.sent[: exchange.meta["fan_size"]]:
            assert frame.segment().tcp.urgent_pointer == 0


class TestSeqCovers:
    def test_basic(self):
        assert seq_covers(600, 600)
        assert seq_covers(601, 600)
        assert not seq_covers(599, 600)

    def test_wraparound(self):
        target = 2**32 - 5
        assert seq_covers(3, target)
        assert not seq_covers(target - 1, target)


class TestSuiteConfig:
    def test_from_dict_overrides(self):
        config = SuiteConfig.from_dict(
            {"reply_deadline": 2.0, "unknown_option_payload": "beef", "urgent_total": 300}
        )
        assert config.reply_deadline == 2.0
        assert config.unknown_option_payload == b"\xbe\xef"
        assert config.urgent_total == 300

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            SuiteConfig.from_dict({"nonsense": 1})

    def test_elicitor_selection(self):
        config = SuiteConfig()
        assert config.elicitor_for(80).request_bytes.startswith(b"GET ")
        assert config.elicitor_for(443).request_bytes[0] == 0x16

    def test_elicitors_fit_smallest_advertised_mss(self):
        config = SuiteConfig()
        assert len(config.elicitor_http) <= config.mss_advertised
        assert len(config.elicitor_tls) <= config.mss_advertised
