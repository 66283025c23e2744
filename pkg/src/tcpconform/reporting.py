"""Result persistence and aggregation.

Verdicts land in an append-only JSONL record log next to a JSONL evidence log
holding the full hex of every frame, so any verdict can be re-derived offline.
Aggregates mirror the per-dataset result table: one row per test plus a
derived row for the SYN stage of the reserved-flags test, with percentages
over reachable targets only.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .suite import ProbeExchange, Result, TestId
from .targets import DomainPair

RESERVED_SYN_ROW = "RESERVED_SYN"

# Tests whose probe is itself the only exchange: an unanswered probe is a
# failed MUST, not an indeterminate result, so their UNK cell renders "-".
UNK_NOT_APPLICABLE = {
    TestId.OPTION_SUPPORT.value,
    TestId.OPTION_UNKNOWN.value,
    TestId.RESERVED.value,
    RESERVED_SYN_ROW,
}


class ReportingError(Exception):
    pass


class StorageFull(ReportingError):
    pass


class EmptyRun(ReportingError):
    pass


class IoError(ReportingError):
    pass


class RunNotFound(ReportingError):
    pass


@dataclass
class ResultRecord:
    run_id: str
    target_addr: str
    target_port: int
    dataset: str
    test_id: str
    result: str
    sub_results: dict[str, str] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    path_hop: Optional[int] = None
    evidence_ref: str = ""
    probed_at: float = 0.0

    _FIELDS = (
        "run_id",
        "target_addr",
        "target_port",
        "dataset",
        "test_id",
        "result",
        "sub_results",
        "flags",
        "path_hop",
        "evidence_ref",
        "probed_at",
    )

    @property
    def key(self) -> tuple[str, str, int, str]:
        return (self.run_id, self.target_addr, self.target_port, self.test_id)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self._FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> "ResultRecord":
        return cls(**{name: data[name] for name in cls._FIELDS})


class ResultsStore:
    """Single-writer append-only store for one output directory."""

    RECORDS = "records.jsonl"
    EVIDENCE = "evidence.jsonl"

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._seen_records: set[tuple] = set()
        self._seen_evidence: set[str] = set()
        self._load_existing()

    def _load_existing(self) -> None:
        records = self.run_dir / self.RECORDS
        if records.exists():
            for record in self.load_records():
                self._seen_records.add(record.key)
        evidence = self.run_dir / self.EVIDENCE
        if evidence.exists():
            with evidence.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._seen_evidence.add(json.loads(line)["ref"])

    def _append(self, name: str, payload: dict) -> None:
        try:
            with (self.run_dir / name).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(payload, sort_keys=True) + "\n")
        except OSError as exc:
            if getattr(exc, "errno", None) == 28:
                raise StorageFull(str(exc)) from exc
            raise IoError(str(exc)) from exc

    def store_evidence(self, ref: str, exchange: ProbeExchange) -> str:
        if ref not in self._seen_evidence:
            self._append(self.EVIDENCE, {"ref": ref, "exchange": exchange.to_dict()})
            self._seen_evidence.add(ref)
        return ref

    def record(self, record: ResultRecord) -> None:
        """Durable append; duplicates of (run, target, test) are dropped."""
        if record.evidence_ref and record.evidence_ref not in self._seen_evidence:
            raise ReportingError(
                f"evidence {record.evidence_ref!r} must be stored before the record"
            )
        if record.key in self._seen_records:
            return
        self._append(self.RECORDS, record.to_dict())
        self._seen_records.add(record.key)

    def load_records(self) -> list[ResultRecord]:
        path = self.run_dir / self.RECORDS
        if not path.exists():
            return []
        records = []
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(ResultRecord.from_dict(json.loads(line)))
        return records

    def load_evidence(self, ref: str) -> ProbeExchange:
        path = self.run_dir / self.EVIDENCE
        if not path.exists():
            raise RunNotFound(f"no evidence log in {self.run_dir}")
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                data = json.loads(line)
                if data["ref"] == ref:
                    return ProbeExchange.from_dict(data["exchange"])
        raise RunNotFound(f"evidence {ref!r} not found")


@dataclass
class AggregateRow:
    test_id: str
    dataset: str
    n_reachable: int
    pct_unk: float
    pct_f_target: float
    pct_f_path: float
    unk_applicable: bool = True

    @property
    def pct_pass(self) -> float:
        return round(100.0 - (self.pct_unk + self.pct_f_target + self.pct_f_path), 3)


def _pct(count: int, total: int) -> float:
    return round(100.0 * count / total, 3)


def aggregate(records: list[ResultRecord], dataset: Optional[str] = None) -> list[AggregateRow]:
    """Per-test percentage rows over reachable targets, plus the derived
    SYN-stage row for the reserved-flags test."""
    chosen = [r for r in records if dataset is None or r.dataset == dataset]
    if not chosen:
        raise EmptyRun(f"no records for dataset {dataset!r}")
    label = dataset if dataset is not None else "ALL"

    rows: list[AggregateRow] = []
    for test_id in TestId:
        per_test = [r for r in chosen if r.test_id == test_id.value]
        if not per_test:
            continue
        n = len(per_test)
        counts = {result: 0 for result in Result}
        for record in per_test:
            counts[Result(record.result)] += 1
        rows.append(
            AggregateRow(
                test_id=test_id.value,
                dataset=label,
                n_reachable=n,
                pct_unk=_pct(counts[Result.UNK], n),
                pct_f_target=_pct(counts[Result.F_TARGET], n),
                pct_f_path=_pct(counts[Result.F_PATH], n),
                unk_applicable=test_id.value not in UNK_NOT_APPLICABLE,
            )
        )
        if test_id is TestId.RESERVED:
            syn_fail = sum(
                1
                for r in per_test
                if r.sub_results.get("syn_stage") == Result.F_TARGET.value
            )
            path_fail = sum(1 for r in per_test if r.result == Result.F_PATH.value)
            rows.append(
                AggregateRow(
                    test_id=RESERVED_SYN_ROW,
                    dataset=label,
                    n_reachable=n,
                    pct_unk=0.0,
                    pct_f_target=_pct(syn_fail, n),
                    pct_f_path=_pct(path_fail, n),
                    unk_applicable=False,
                )
            )
    return rows


@dataclass
class WwwDifferential:
    n_pairs: int
    n_differing: int
    per_test_discordance: dict[str, int] = field(default_factory=dict)

    @property
    def pct_differing(self) -> float:
        return round(100.0 * self.n_differing / self.n_pairs, 3) if self.n_pairs else 0.0


def www_differential(records: list[ResultRecord], pairs: list[DomainPair]) -> WwwDifferential:
    """Count domains whose www and bare variants disagree on any test."""
    by_target: dict[tuple[str, int], dict[str, str]] = {}
    for record in records:
        by_target.setdefault((record.target_addr, record.target_port), {})[
            record.test_id
        ] = record.result

    n_pairs = 0
    n_differing = 0
    discordance: dict[str, int] = {}
    for pair in pairs:
        if pair.www_target is None or pair.bare_target is None:
            continue
        www_results = by_target.get(pair.www_target.key)
        bare_results = by_target.get(pair.bare_target.key)
        if not www_results or not bare_results:
            continue
        n_pairs += 1
        differs = False
        for test_id in set(www_results) & set(bare_results):
            if www_results[test_id] != bare_results[test_id]:
                differs = True
                discordance[test_id] = discordance.get(test_id, 0) + 1
        if differs:
            n_differing += 1
    return WwwDifferential(n_pairs, n_differing, discordance)


_EXPORT_FIELDS = list(ResultRecord._FIELDS)


def export_records(records: list[ResultRecord], fmt: str) -> str:
    """Stable-ordered export; re-export of the same records is byte-identical."""
    ordered = sorted(records, key=lambda r: (r.target_addr, r.target_port, r.test_id))
    if fmt == "JSONL":
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in ordered)
    if fmt == "CSV":
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=_EXPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for record in ordered:
            row = record.to_dict()
            row["sub_results"] = json.dumps(row["sub_results"], sort_keys=True)
            row["flags"] = json.dumps(row["flags"])
            writer.writerow(row)
        return buffer.getvalue()
    raise ValueError(f"unknown export format {fmt!r}")


def import_records(text: str, fmt: str) -> list[ResultRecord]:
    if fmt == "JSONL":
        return [
            ResultRecord.from_dict(json.loads(line))
            for line in text.splitlines()
            if line.strip()
        ]
    if fmt == "CSV":
        records = []
        for row in csv.DictReader(io.StringIO(text)):
            row["target_port"] = int(row["target_port"])
            row["sub_results"] = json.loads(row["sub_results"])
            row["flags"] = json.loads(row["flags"])
            row["path_hop"] = int(row["path_hop"]) if row["path_hop"] else None
            row["probed_at"] = float(row["probed_at"])
            records.append(ResultRecord.from_dict(row))
        return records
    raise ValueError(f"unknown import format {fmt!r}")


def render_table(rows: list[AggregateRow]) -> str:
    """Plain-text result table: UNK / F_Target / F_Path per dataset."""
    datasets = sorted({row.dataset for row in rows})
    order = [t.value for t in TestId]
    order.insert(order.index(TestId.RESERVED.value) + 1, RESERVED_SYN_ROW)

    by_key = {(row.test_id, row.dataset): row for row in rows}
    lines = []
    header = f"{'Test':<20}"
    for dataset in datasets:
        n = next((r.n_reachable for r in rows if r.dataset == dataset), 0)
        header += f" | {dataset + ' (n=' + str(n) + ')':^29}"
    sub = f"{'':<20}"
    for _ in datasets:
        sub += f" | {'UNK':>9}{'F_Target':>10}{'F_Path':>10}"
    lines.append(header)
    lines.append(sub)
    lines.append("-" * len(sub))
    for test_id in order:
        line = f"{test_id:<20}"
        shown = False
        for dataset in datasets:
            row = by_key.get((test_id, dataset))
            if row is None:
                line += f" | {'':>29}"
                continue
            shown = True
            unk = "-" if not row.unk_applicable else f"{row.pct_unk:.3f}"
            line += f" | {unk:>9}{row.pct_f_target:>10.3f}{row.pct_f_path:>10.3f}"
        if shown:
            lines.append(line)
    return "\n".join(lines) + "\n"
