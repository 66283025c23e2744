"""Tests for result storage, aggregation arithmetic, and exports."""

import pytest

from tcpconform.reporting import (
    EmptyRun,
    ReportingError,
    ResultRecord,
    ResultsStore,
    RESERVED_SYN_ROW,
    aggregate,
    export_records,
    import_records,
    render_table,
    www_differential,
)
from tcpconform.suite import ProbeExchange, TestId
from tcpconform.targets import DomainPair, TargetSpec


def record(addr, test_id, result, run="r1", dataset="SIM", sub=None, ref=""):
    return ResultRecord(
        run_id=run,
        target_addr=addr,
        target_port=80,
        dataset=dataset,
        test_id=test_id,
        result=result,
        sub_results=sub or {},
        evidence_ref=ref,
    )


def synthetic_run(n=100, checksum_fails=2, syn_fails=5, defer_fails=4):
    """n reachable targets: known counts of failures across two tests."""
    records = []
    for i in range(n):
        addr = f"10.0.0.{i}"
        result = "F_TARGET" if i < checksum_fails else "PASS"
        records.append(record(addr, TestId.CHECKSUM_ZERO.value, result))
        if i < syn_fails:
            records.append(
                record(
                    addr,
                    TestId.RESERVED.value,
                    "F_TARGET",
                    sub={"syn_stage": "F_TARGET"},
                )
            )
        elif i < syn_fails + defer_fails:
            records.append(
                record(
                    addr,
                    TestId.RESERVED.value,
                    "F_TARGET",
                    sub={"syn_stage": "PASS", "ack_stage": "F_TARGET"},
                )
            )
        else:
            records.append(
                record(
                    addr,
                    TestId.RESERVED.value,
                    "PASS",
                    sub={"syn_stage": "PASS", "ack_stage": "PASS"},
                )
            )
    return records


class TestStore:
    def test_record_visible_after_append(self, tmp_path):
        store = ResultsStore(tmp_path)
        store.record(record("10.0.0.1", "RESERVED", "PASS"))
        rows = aggregate(store.load_records())
        assert rows[0].n_reachable == 1

    def test_duplicate_record_idempotent(self, tmp_path):
        store = ResultsStore(tmp_path)
        store.record(record("10.0.0.1", "RESERVED", "PASS"))
        store.record(record("10.0.0.1", "RESERVED", "PASS"))
        assert len(store.load_records()) == 1

    def test_missing_evidence_rejected(self, tmp_path):
        store = ResultsStore(tmp_path)
        with pytest.raises(ReportingError):
            store.record(record("10.0.0.1", "RESERVED", "PASS", ref="r1/x/RESERVED"))

    def test_evidence_round_trip(self, tmp_path):
        store = ResultsStore(tmp_path)
        exchange = ProbeExchange(test_id="RESERVED")
        exchange.meta["local_port"] = 40000
        store.store_evidence("r1/x/RESERVED", exchange)
        store.record(record("10.0.0.1", "RESERVED", "PASS", ref="r1/x/RESERVED"))
        loaded = store.load_evidence("r1/x/RESERVED")
        assert loaded.meta["local_port"] == 40000

    def test_store_survives_reopen(self, tmp_path):
        ResultsStore(tmp_path).record(record("10.0.0.1", "RESERVED", "PASS"))
        store = ResultsStore(tmp_path)
        store.record(record("10.0.0.1", "RESERVED", "PASS"))  # still idempotent
        assert len(store.load_records()) == 1


class TestAggregate:
    def test_two_of_hundred_fail(self):
        rows = aggregate(synthetic_run(), "SIM")
        checksum = next(r for r in rows if r.test_id == TestId.CHECKSUM_ZERO.value)
        assert checksum.n_reachable == 100
        assert checksum.pct_f_target == 2.000
        assert checksum.pct_pass == 98.000

    def test_reserved_and_reserved_syn_rows(self):
        rows = aggregate(synthetic_run(), "SIM")
        reserved = next(r for r in rows if r.test_id == TestId.RESERVED.value)
        reserved_syn = next(r for r in rows if r.test_id == RESERVED_SYN_ROW)
        assert reserved.pct_f_target == 9.000
        assert reserved_syn.pct_f_target == 5.000
        assert reserved.pct_f_target >= reserved_syn.pct_f_target

    def test_rows_sum_to_100(self):
        for row in aggregate(synthetic_run(n=7, checksum_fails=3, syn_fails=1, defer_fails=2)):
            total = row.pct_unk + row.pct_f_target + row.pct_f_path + row.pct_pass
            assert total == pytest.approx(100.0, abs=0.001)

    def test_empty_run(self):
        with pytest.raises(EmptyRun):
            aggregate([], "SIM")
        with pytest.raises(EmptyRun):
            aggregate(synthetic_run(), "OTHER_DATASET")

    def test_percentages_to_three_decimals(self):
        records = [
            record(f"10.0.0.{i}", "RESERVED", "F_TARGET" if i == 0 else "PASS")
            for i in range(3)
        ]
        rows = aggregate(records)
        assert rows[0].pct_f_target == 33.333


class TestWwwDifferential:
    def _pair(self, index):
        return DomainPair(
            f"d{index}.org",
            www_target=TargetSpec(f"10.1.0.{index}", 80),
            bare_target=TargetSpec(f"10.2.0.{index}", 80),
        )

    def _records_for_pair(self, index, www_results, bare_results):
        records = []
        for test_id, result in www_results.items():
            records.append(record(f"10.1.0.{index}", test_id, result))
        for test_id, result in bare_results.items():
            records.append(record(f"10.2.0.{index}", test_id, result))
        return records

    def test_identical_verdicts_not_differing(self):
        results = {t.value: "PASS" for t in TestId}
        records = self._records_for_pair(1, results, dict(results))
        diff = www_differential(records, [self._pair(1)])
        assert diff.n_pairs == 1 and diff.n_differing == 0

    def test_single_test_discordance(self):
        www = {t.value: "PASS" for t in TestId}
        bare = dict(www)
        bare[TestId.RESERVED.value] = "F_TARGET"
        diff = www_differential(self._records_for_pair(1, www, bare), [self._pair(1)])
        assert diff.n_differing == 1
        assert diff.per_test_discordance == {TestId.RESERVED.value: 1}

    def test_pair_counted_once_tests_counted_independently(self):
        www = {t.value: "PASS" for t in TestId}
        bare = dict(www)
        bare[TestId.RESERVED.value] = "F_TARGET"
        bare[TestId.URGENT_POINTER.value] = "F_TARGET"
        diff = www_differential(self._records_for_pair(1, www, bare), [self._pair(1)])
        assert diff.n_differing == 1
        assert diff.per_test_discordance[TestId.RESERVED.value] == 1
        assert diff.per_test_discordance[TestId.URGENT_POINTER.value] == 1


class TestExport:
    def _records(self):
        return [
            record("10.0.0.2", "RESERVED", "PASS", sub={"syn_stage": "PASS"}),
            record("10.0.0.1", "CHECKSUM_ZERO", "F_TARGET"),
        ]

    def test_jsonl_round_trip(self):
        text = export_records(self._records(), "JSONL")
        assert len(text.splitlines()) == 2
        reimported = import_records(text, "JSONL")
        assert sorted(r.key for r in reimported) == sorted(r.key for r in self._records())

    def test_csv_round_trip(self):
        text = export_records(self._records(), "CSV")
        reimported = import_records(text, "CSV")
        assert {r.key for r in reimported} == {r.key for r in self._records()}
        assert reimported[0].sub_results is not None

    def test_reexport_byte_identical(self):
        records = self._records()
        assert export_records(records, "CSV") == export_records(list(reversed(records)), "CSV")
        assert export_records(records, "JSONL") == export_records(
            list(reversed(records)), "JSONL"
        )

    def test_empty_run_header_only_csv(self):
        text = export_records([], "CSV")
        assert len(text.splitlines()) == 1
        assert text.startswith("run_id,")

    def test_jsonl_line_count_matches(self):
        assert len(export_records(self._records(), "JSONL").splitlines()) == 2


class TestRenderTable:
    def test_rows_and_dash_cells(self):
        rows = aggregate(synthetic_run(), "SIM")
        text = render_table(rows)
        assert TestId.RESERVED.value in text
        assert RESERVED_SYN_ROW in text
        reserved_line = next(
            line for line in text.splitlines() if line.startswith("RESERVED ")
        )
        assert "-" in reserved_line  # UNK not applicable
        checksum_line = next(
            line for line in text.splitlines() if line.startswith("CHECKSUM_ZERO")
        )
        assert "2.000" in checksum_line
