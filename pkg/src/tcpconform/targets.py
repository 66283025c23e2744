"""Scan target ingest and sanitation.

Targets arrive pre-resolved as CSV lines of `addr,port` followed by optional
`key=value` labels (dataset, cdn_name, domain, www, ...). Sanitation collapses
duplicate (addr, port) entries, caps each group at a configurable sample size,
and removes everything matching the operator's CIDR blacklist.
"""

from __future__ import annotations

import ipaddress
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class TargetError(Exception):
    pass


class FileUnreadable(TargetError):
    pass


class BadCidr(TargetError):
    pass


@dataclass
class TargetSpec:
    addr: str
    port: int
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, int]:
        return (self.addr, self.port)

    def group(self) -> str:
        return self.labels.get("cdn_name") or self.labels.get("dataset") or ""

    def to_dict(self) -> dict:
        return {"addr": self.addr, "port": self.port, "labels": dict(self.labels)}


@dataclass
class RejectedLine:
    line_no: int
    line: str
    reason: str


def parse_target_line(line: str, line_no: int = 0) -> TargetSpec:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < 2:
        raise ValueError("expected at least addr,port")
    try:
        ipaddress.IPv4Address(parts[0])
    except ipaddress.AddressValueError as exc:
        raise ValueError(f"bad address: {exc}") from exc
    try:
        port = int(parts[1])
    except ValueError as exc:
        raise ValueError(f"bad port: {parts[1]!r}") from exc
    if not 0 < port <= 0xFFFF:
        raise ValueError(f"port {port} outside 1-65535")
    labels: dict[str, str] = {}
    for item in parts[2:]:
        if not item:
            continue
        if "=" not in item:
            raise ValueError(f"label {item!r} is not key=value")
        key, value = item.split("=", 1)
        labels[key.strip()] = value.strip()
    return TargetSpec(parts[0], port, labels)


def load_targets(path: str | Path) -> tuple[list[TargetSpec], list[RejectedLine]]:
    """One TargetSpec per parseable line; malformed lines go to the rejects."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    targets: list[TargetSpec] = []
    rejects: list[RejectedLine] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line_no == 1 and line.lower().startswith("addr,"):
            continue
        try:
            targets.append(parse_target_line(line, line_no))
        except ValueError as exc:
            rejects.append(RejectedLine(line_no, line, str(exc)))
    return targets, rejects


def load_blacklist(path: str | Path) -> list[ipaddress.IPv4Network]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    return parse_cidrs(text.splitlines())


def parse_cidrs(lines: list[str]) -> list[ipaddress.IPv4Network]:
    networks = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            networks.append(ipaddress.IPv4Network(line, strict=False))
        except ValueError as exc:
            raise BadCidr(f"bad CIDR {line!r}: {exc}") from exc
    return networks


@dataclass
class Removal:
    target: TargetSpec
    matched_prefix: str


def apply_blacklist(
    targets: list[TargetSpec], cidrs: list[ipaddress.IPv4Network]
) -> tuple[list[TargetSpec], list[Removal]]:
    """Drop targets inside any blacklisted prefix; first match is logged."""
    kept: list[TargetSpec] = []
    removed: list[Removal] = []
    for target in targets:
        addr = ipaddress.IPv4Address(target.addr)
        match = next((net for net in cidrs if addr in net), None)
        if match is None:
            kept.append(target)
        else:
            removed.append(Removal(target, str(match)))
    return kept, removed


def dedup_and_sample(
    targets: list[TargetSpec], per_group_cap: int, seed: int
) -> list[TargetSpec]:
    """Collapse duplicate (addr, port) entries, then cap each group.

    Duplicates merge their labels (first occurrence wins on conflicts).
    Sampling is uniform within a group and reproducible: the RNG is seeded
    per group from (seed, group name).
    """
    if per_group_cap <= 0:
        raise ValueError(f"per_group_cap must be positive, got {per_group_cap}")
    merged: dict[tuple[str, int], TargetSpec] = {}
    for target in targets:
        existing = merged.get(target.key)
        if existing is None:
            merged[target.key] = TargetSpec(target.addr, target.port, dict(target.labels))
        else:
            for key, value in target.labels.items():
                existing.labels.setdefault(key, value)

    groups: dict[str, list[TargetSpec]] = {}
    for target in merged.values():
        groups.setdefault(target.group(), []).append(target)

    sampled: list[TargetSpec] = []
    for name in sorted(groups):
        members = sorted(groups[name], key=lambda t: t.key)
        if len(members) > per_group_cap:
            rng = random.Random(f"{seed}:{name}")
            members = sorted(rng.sample(members, per_group_cap), key=lambda t: t.key)
        sampled.extend(members)
    return sampled


@dataclass
class DomainPair:
    domain: str
    www_target: Optional[TargetSpec] = None
    bare_target: Optional[TargetSpec] = None


def pair_www(targets: list[TargetSpec]) -> list[DomainPair]:
    """Pair the www and bare variants of each domain; partial domains drop out."""
    by_domain: dict[str, DomainPair] = {}
    for target in targets:
        domain = target.labels.get("domain")
        www = target.labels.get("www")
        if not domain or www is None:
            continue
        pair = by_domain.setdefault(domain, DomainPair(domain))
        if www.lower() in ("true", "1", "yes"):
            if pair.www_target is None:
                pair.www_target = target
        else:
            if pair.bare_target is None:
                pair.bare_target = target
    return [
        pair
        for domain, pair in sorted(by_domain.items())
        if pair.www_target is not None and pair.bare_target is not None
    ]
