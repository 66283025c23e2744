"""Tests for target ingest, blacklist filtering, sampling, and www pairing."""

import pytest

from tcpconform.targets import (
    BadCidr,
    FileUnreadable,
    TargetSpec,
    apply_blacklist,
    dedup_and_sample,
    load_targets,
    pair_www,
    parse_cidrs,
    parse_target_line,
)


def spec(addr, port=80, **labels):
    return TargetSpec(addr, port, {k: str(v) for k, v in labels.items()})


class TestLoading:
    def test_spec_line(self):
        target = parse_target_line(
            "192.0.2.7,80,dataset=ALEXA,domain=example.org,www=false"
        )
        assert target.addr == "192.0.2.7"
        assert target.port == 80
        assert target.labels == {
            "dataset": "ALEXA",
            "domain": "example.org",
            "www": "false",
        }

    def test_port_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "targets.csv"
        path.write_text("192.0.2.7,99999,dataset=X\n192.0.2.8,80\n")
        targets, rejects = load_targets(path)
        assert len(targets) == 1
        assert len(rejects) == 1
        assert "99999" in rejects[0].reason or "port" in rejects[0].reason

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        targets, rejects = load_targets(path)
        assert targets == [] and rejects == []

    def test_header_and_comments_skipped(self, tmp_path):
        path = tmp_path / "targets.csv"
        path.write_text("addr,port,labels\n# comment\n192.0.2.9,443\n")
        targets, _ = load_targets(path)
        assert len(targets) == 1

    def test_missing_file(self):
        with pytest.raises(FileUnreadable):
            load_targets("/does/not/exist.csv")

    def test_bad_address_rejected(self, tmp_path):
        path = tmp_path / "targets.csv"
        path.write_text("300.1.1.1,80\n")
        _, rejects = load_targets(path)
        assert len(rejects) == 1


class TestBlacklist:
    def test_containment(self):
        kept, removed = apply_blacklist([spec("10.0.0.5")], parse_cidrs(["10.0.0.0/8"]))
        assert kept == []
        assert removed[0].matched_prefix == "10.0.0.0/8"

    def test_empty_blacklist_keeps_all(self):
        targets = [spec("10.0.0.5"), spec("192.0.2.1")]
        kept, removed = apply_blacklist(targets, [])
        assert kept == targets and removed == []

    def test_overlapping_prefixes_first_match_logged(self):
        cidrs = parse_cidrs(["10.0.0.0/8", "10.0.0.0/24"])
        kept, removed = apply_blacklist([spec("10.0.0.5")], cidrs)
        assert len(removed) == 1
        assert removed[0].matched_prefix == "10.0.0.0/8"

    def test_bad_cidr(self):
        with pytest.raises(BadCidr):
            parse_cidrs(["10.0.0.0/33"])


class TestDedupAndSample:
    def test_cap_enforced(self):
        targets = [
            spec(f"10.{i // 250}.{i % 250}.1", cdn_name="bigcdn") for i in range(12000)
        ]
        sampled = dedup_and_sample(targets, 10000, seed=1)
        assert len(sampled) == 10000

    def test_duplicates_merge_labels(self):
        targets = [
            spec("192.0.2.1", dataset="CDN", cdn_name="x"),
            spec("192.0.2.1", dataset="ALEXA", domain="example.org"),
        ]
        sampled = dedup_and_sample(targets, 100, seed=1)
        assert len(sampled) == 1
        assert sampled[0].labels["dataset"] == "CDN"
        assert sampled[0].labels["domain"] == "example.org"

    def test_same_seed_identical_sample(self):
        targets = [spec(f"10.0.{i // 250}.{i % 250}", cdn_name="c") for i in range(500)]
        first = dedup_and_sample(targets, 100, seed=9)
        second = dedup_and_sample(targets, 100, seed=9)
        assert [t.key for t in first] == [t.key for t in second]
        third = dedup_and_sample(targets, 100, seed=10)
        assert [t.key for t in first] != [t.key for t in third]

    def test_cap_must_be_positive(self):
        with pytest.raises(ValueError):
            dedup_and_sample([], 0, seed=1)

    def test_pipeline_invariant(self):
        targets = [spec(f"10.0.0.{i}", cdn_name="c") for i in range(1, 200)]
        targets += targets[:50]  # duplicates
        cidrs = parse_cidrs(["10.0.0.128/25"])
        sampled = dedup_and_sample(targets, 100, seed=2)
        kept, _ = apply_blacklist(sampled, cidrs)
        keys = [t.key for t in kept]
        assert len(keys) == len(set(keys))
        assert all(int(t.addr.split(".")[-1]) < 128 for t in kept)


class TestPairWww:
    def test_complete_pair(self):
        pairs = pair_www(
            [
                spec("192.0.2.1", domain="example.org", www="true"),
                spec("192.0.2.2", domain="example.org", www="false"),
            ]
        )
        assert len(pairs) == 1
        assert pairs[0].www_target.addr == "192.0.2.1"
        assert pairs[0].bare_target.addr == "192.0.2.2"

    def test_partial_domain_no_pair(self):
        pairs = pair_www([spec("192.0.2.1", domain="example.org", www="false")])
        assert pairs == []

    def test_three_complete_two_partial(self):
        targets = []
        for i, domain in enumerate(["a.org", "b.org", "c.org"]):
            targets.append(spec(f"192.0.2.{2 * i + 1}", domain=domain, www="true"))
            targets.append(spec(f"192.0.2.{2 * i + 2}", domain=domain, www="false"))
        targets.append(spec("192.0.2.10", domain="d.org", www="true"))
        targets.append(spec("192.0.2.11", domain="e.org", www="false"))
        pairs = pair_www(targets)
        assert len(pairs) == 3
        assert [p.domain for p in pairs] == ["a.org", "b.org", "c.org"]
