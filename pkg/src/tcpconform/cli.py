"""Operator entry point: run scans or simulations, render reports.

Two subcommands:

    tcpconform scan --mode SIM --topology topo.json --out rundir
    tcpconform scan --mode SCAN --targets t.csv --blacklist b.txt --out rundir
    tcpconform report rundir TABLE | WWW | EVIDENCE <addr:port> <test>

A JSON config file given with --config overrides the command-line flags; its
optional "suite" section overrides probe parameters (deadlines, MSS values,
option kind, flag mask, payload sizes).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import netsim, reporting, targets as targets_mod
from .reporting import ResultRecord, ResultsStore, RunNotFound
from .suite import ALL_TESTS, ConformanceSuite, SuiteConfig, TargetReport, TestId
from .transport import Endpoint, PacerConfig
from .segment import ip_to_int


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    mode: str = "SIM"
    targets_path: Optional[str] = None
    topology_path: Optional[str] = None
    blacklist_path: Optional[str] = None
    enabled_tests: list[TestId] = field(default_factory=lambda: list(ALL_TESTS))
    rate_pps: int = 10000
    parallelism: int = 8
    seed: int = 0
    output_dir: str = "run"
    run_id: Optional[str] = None
    per_group_cap: int = 10000
    allow_empty_blacklist: bool = False
    suite: SuiteConfig = field(default_factory=SuiteConfig)

    def validate(self) -> None:
        if self.mode not in ("SCAN", "SIM"):
            raise ConfigError(f"mode must be SCAN or SIM, got {self.mode!r}")
        if self.rate_pps <= 0:
            raise ConfigError(f"rate_pps must be positive, got {self.rate_pps}")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.mode == "SCAN":
            if not self.targets_path:
                raise ConfigError("SCAN mode requires --targets")
            if not Path(self.targets_path).exists():
                raise ConfigError(f"targets file not found: {self.targets_path}")
            if not self.blacklist_path:
                raise ConfigError(
                    "SCAN mode requires --blacklist (ethics guardrail); point it at "
                    "your opt-out list, or pass --allow-empty-blacklist explicitly"
                )
            if not Path(self.blacklist_path).exists():
                raise ConfigError(f"blacklist file not found: {self.blacklist_path}")
        else:
            if not self.topology_path:
                raise ConfigError("SIM mode requires --topology")
            if not Path(self.topology_path).exists():
                raise ConfigError(f"topology file not found: {self.topology_path}")

    def resolved_run_id(self) -> str:
        if self.run_id:
            return self.run_id
        return f"sim-{self.seed}" if self.mode == "SIM" else f"scan-{self.seed}"

    def apply_overrides(self, data: dict) -> None:
        for key, value in data.items():
            if key == "suite":
                self.suite = SuiteConfig.from_dict(value)
            elif key == "enabled_tests":
                self.enabled_tests = [TestId(t) for t in value]
            elif hasattr(self, key):
                setattr(self, key, value)
            else:
                raise ConfigError(f"unknown config key {key!r}")


def _record_report(
    store: ResultsStore,
    run_id: str,
    report: TargetReport,
    dataset: str,
    addr: str,
    port: int,
) -> None:
    for test_id, verdict in report.verdicts.items():
        exchange = report.exchanges[test_id]
        ref = f"{run_id}/{addr}:{port}/{test_id.value}"
        store.store_evidence(ref, exchange)
        verdict.evidence_ref = ref
        last_sent = exchange.sent[-1].time if exchange.sent else 0.0
        store.record(
            ResultRecord(
                run_id=run_id,
                target_addr=addr,
                target_port=port,
                dataset=dataset,
                test_id=test_id.value,
                result=verdict.result.value,
                sub_results={k: v.value for k, v in verdict.sub_results.items()},
                flags=list(verdict.flags),
                path_hop=verdict.path.first_modifying_hop if verdict.path else None,
                evidence_ref=ref,
                probed_at=last_sent,
            )
        )


def _write_unreachable(store_dir: Path, entries: list[dict]) -> None:
    path = store_dir / "unreachable.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _run_sim(config: RunConfig) -> int:
    with open(config.topology_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if "suite" in spec:
        config.suite = SuiteConfig.from_dict(spec["suite"])
    entries = spec.get("targets", [])
    if not entries:
        raise ConfigError("topology file lists no targets")

    run_id = config.resolved_run_id()
    out = Path(config.output_dir)
    store = ResultsStore(out)
    unreachable: list[dict] = []
    sim_targets: list[targets_mod.TargetSpec] = []

    for index, entry in enumerate(entries):
        try:
            topology = netsim.Topology.from_dict(entry)
        except netsim.InvalidSpec as exc:
            raise ConfigError(f"topology entry {index}: {exc}") from exc
        dataset = entry.get("dataset", "SIM")
        name = entry.get("name", f"target{index}")
        labels = dict(entry.get("labels", {}))
        labels.setdefault("dataset", dataset)
        addr, port = topology.endpoint_addr, topology.endpoint_port
        sim_targets.append(targets_mod.TargetSpec(addr, port, labels))

        transport = netsim.build_topology(topology)
        transport.pacer.config.rate_pps = config.rate_pps
        suite_config = config.suite
        suite_config.seed = config.seed
        suite = ConformanceSuite(transport, suite_config)
        report = suite.run_suite(
            Endpoint(ip_to_int(addr), port), config.enabled_tests
        )
        if not report.alive:
            unreachable.append({"name": name, "addr": addr, "port": port})
            continue
        _record_report(store, run_id, report, dataset, addr, port)

    _write_unreachable(out, unreachable)
    pairs = targets_mod.pair_www(sim_targets)
    _write_pairs(out, pairs)
    _write_run_meta(out, config, run_id, len(entries), len(unreachable))
    _render_table_file(out)
    return 0


def _run_scan(config: RunConfig) -> int:
    from .rawlink import RawTransport  # imported lazily: needs privileges

    loaded, rejects = targets_mod.load_targets(config.targets_path)
    cidrs = targets_mod.load_blacklist(config.blacklist_path)
    if not cidrs and not config.allow_empty_blacklist:
        raise ConfigError(
            "blacklist is empty; pass --allow-empty-blacklist to scan anyway"
        )
    sampled = targets_mod.dedup_and_sample(loaded, config.per_group_cap, config.seed)
    kept, removed = targets_mod.apply_blacklist(sampled, cidrs)

    run_id = config.resolved_run_id()
    out = Path(config.output_dir)
    store = ResultsStore(out)
    with (out / "rejects.jsonl").open("w", encoding="utf-8") as fh:
        for reject in rejects:
            fh.write(
                json.dumps(
                    {"line": reject.line_no, "text": reject.line, "reason": reject.reason}
                )
                + "\n"
            )
    with (out / "blacklisted.jsonl").open("w", encoding="utf-8") as fh:
        for removal in removed:
            fh.write(
                json.dumps(
                    {"addr": removal.target.addr, "prefix": removal.matched_prefix}
                )
                + "\n"
            )

    transport = RawTransport(PacerConfig(rate_pps=config.rate_pps))
    unreachable: list[dict] = []
    import threading

    sink_lock = threading.Lock()

    def probe(indexed: tuple[int, targets_mod.TargetSpec]) -> None:
        index, target = indexed
        suite_config = config.suite
        suite = ConformanceSuite(transport, suite_config)
        suite._next_port = suite_config.local_port_base + (index % config.parallelism) * 2000
        report = suite.run_suite(
            Endpoint(ip_to_int(target.addr), target.port), config.enabled_tests
        )
        with sink_lock:
            if not report.alive:
                unreachable.append({"addr": target.addr, "port": target.port})
            else:
                _record_report(
                    store,
                    run_id,
                    report,
                    target.labels.get("dataset", "SCAN"),
                    target.addr,
                    target.port,
                )

    try:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            list(pool.map(probe, enumerate(kept)))
    finally:
        transport.close()

    _write_unreachable(out, unreachable)
    _write_pairs(out, targets_mod.pair_www(kept))
    _write_run_meta(out, config, run_id, len(kept), len(unreachable))
    _render_table_file(out)
    return 0


def _write_pairs(out: Path, pairs: list[targets_mod.DomainPair]) -> None:
    with (out / "pairs.json").open("w", encoding="utf-8") as fh:
        json.dump(
            [
                {
                    "domain": p.domain,
                    "www": p.www_target.to_dict() if p.www_target else None,
                    "bare": p.bare_target.to_dict() if p.bare_target else None,
                }
                for p in pairs
            ],
            fh,
            sort_keys=True,
            indent=1,
        )
        fh.write("\n")


def _write_run_meta(
    out: Path, config: RunConfig, run_id: str, n_targets: int, n_unreachable: int
) -> None:
    meta = {
        "run_id": run_id,
        "mode": config.mode,
        "seed": config.seed,
        "rate_pps": config.rate_pps,
        "enabled_tests": [t.value for t in config.enabled_tests],
        "n_targets": n_targets,
        "n_unreachable": n_unreachable,
    }
    with (out / "run.json").open("w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _render_table_file(out: Path) -> None:
    store = ResultsStore(out)
    records = store.load_records()
    if not records:
        (out / "table.txt").write_text("no reachable targets\n", encoding="utf-8")
        return
    rows = []
    for dataset in sorted({r.dataset for r in records}):
        rows.extend(reporting.aggregate(records, dataset))
    (out / "table.txt").write_text(reporting.render_table(rows), encoding="utf-8")


def cmd_scan(config: RunConfig) -> int:
    config.validate()
    if config.mode == "SIM":
        return _run_sim(config)
    return _run_scan(config)


def _load_pairs(run_dir: Path) -> list[targets_mod.DomainPair]:
    path = run_dir / "pairs.json"
    if not path.exists():
        return []
    pairs = []
    for entry in json.loads(path.read_text(encoding="utf-8")):
        pair = targets_mod.DomainPair(entry["domain"])
        if entry.get("www"):
            pair.www_target = targets_mod.TargetSpec(**entry["www"])
        if entry.get("bare"):
            pair.bare_target = targets_mod.TargetSpec(**entry["bare"])
        pairs.append(pair)
    return pairs


def cmd_report(run_dir: str, kind: str, args: Optional[list[str]] = None) -> str:
    path = Path(run_dir)
    if not path.exists():
        raise RunNotFound(f"run directory {run_dir} does not exist")
    store = ResultsStore(path)
    records = store.load_records()
    kind = kind.upper()
    if kind == "TABLE":
        if not records:
            return "no reachable targets\n"
        rows = []
        for dataset in sorted({r.dataset for r in records}):
            rows.extend(reporting.aggregate(records, dataset))
        return reporting.render_table(rows)
    if kind == "WWW":
        pairs = _load_pairs(path)
        diff = reporting.www_differential(records, pairs)
        lines = [
            f"pairs tested: {diff.n_pairs}",
            f"pairs differing: {diff.n_differing} ({diff.pct_differing}%)",
        ]
        for test_id, count in sorted(diff.per_test_discordance.items()):
            lines.append(f"  {test_id}: {count}")
        return "\n".join(lines) + "\n"
    if kind == "EVIDENCE":
        if not args or len(args) < 2:
            raise ConfigError("EVIDENCE needs <addr:port> <test_id>")
        target, test_id = args[0], args[1]
        match = next(
            (
                r
                for r in records
                if f"{r.target_addr}:{r.target_port}" == target and r.test_id == test_id
            ),
            None,
        )
        if match is None:
            raise RunNotFound(f"no record for {target} {test_id}")
        exchange = store.load_evidence(match.evidence_ref)
        lines = [f"# {match.evidence_ref}  result={match.result}"]
        for frame in exchange.sent:
            lines.append(f"{frame.time:.6f} sent {frame.raw.hex()}")
        for frame in exchange.received:
            lines.append(f"{frame.time:.6f} recv {frame.raw.hex()}")
        for icmp in exchange.icmp:
            lines.append(f"{icmp.time:.6f} icmp src={icmp.source_addr} {icmp.raw.hex()}")
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown report kind {kind!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcpconform",
        description="Probe TCP endpoints for mandatory-behavior conformance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan", help="run a scan or simulation")
    scan.add_argument("--mode", choices=["SCAN", "SIM"], default="SIM")
    scan.add_argument("--targets", dest="targets_path")
    scan.add_argument("--topology", dest="topology_path")
    scan.add_argument("--blacklist", dest="blacklist_path")
    scan.add_argument("--tests", help="comma-separated test ids")
    scan.add_argument("--rate", type=int, default=10000, dest="rate_pps")
    scan.add_argument("--parallelism", type=int, default=8)
    scan.add_argument("--seed", type=int, default=0)
    scan.add_argument("--out", default="run", dest="output_dir")
    scan.add_argument("--run-id", dest="run_id")
    scan.add_argument("--cap", type=int, default=10000, dest="per_group_cap")
    scan.add_argument("--allow-empty-blacklist", action="store_true")
    scan.add_argument("--config", help="JSON config file; overrides flags")

    report = sub.add_parser("report", help="render results from a run directory")
    report.add_argument("run_dir")
    report.add_argument("kind", choices=["TABLE", "WWW", "EVIDENCE"])
    report.add_argument("args", nargs="*")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "scan":
            config = RunConfig(
                mode=ns.mode,
                targets_path=ns.targets_path,
                topology_path=ns.topology_path,
                blacklist_path=ns.blacklist_path,
                rate_pps=ns.rate_pps,
                parallelism=ns.parallelism,
                seed=ns.seed,
                output_dir=ns.output_dir,
                run_id=ns.run_id,
                per_group_cap=ns.per_group_cap,
                allow_empty_blacklist=ns.allow_empty_blacklist,
            )
            if ns.tests:
                try:
                    config.enabled_tests = [TestId(t.strip()) for t in ns.tests.split(",")]
                except ValueError as exc:
                    raise ConfigError(f"bad --tests value: {exc}") from exc
            if ns.config:
                try:
                    with open(ns.config, encoding="utf-8") as fh:
                        config.apply_overrides(json.load(fh))
                except OSError as exc:
                    raise ConfigError(f"cannot read config: {exc}") from exc
            return cmd_scan(config)
        output = cmd_report(ns.run_dir, ns.kind, ns.args)
        sys.stdout.write(output)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (netsim.InvalidSpec, RunNotFound, targets_mod.TargetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # privilege errors and unexpected failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
