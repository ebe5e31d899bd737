"""Synthetic traces with known ground truth, driven by an INI spec.

Background traffic is a ring: host i sends to host i+1 (mod N), the
same number of flows per slice, so every background host generates
exactly as many flows as it receives and its ratio sits at +1. Scanners
send many flows and receive none. Decoy entries add ground truth labels
(a DoS entry, say) without any matching traffic.

Given the same spec and seed the outputs are byte-identical.
"""

from __future__ import annotations

import configparser
import ipaddress
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional
from xml.sax.saxutils import quoteattr

from .core import ConfigError, FlowRecord, IpAddress, PROTO_TCP, ip_sort_key, parse_ip
from .ingest import (
    Category,
    GroundTruthEntry,
    GroundTruthSet,
    SourceFile,
    write_flow_file,
)

US_PER_SECOND = 1_000_000

KIND_NETSCAN = "netscan"
KIND_PORTSCAN = "portscan"

_DEFAULT_LABELS = {KIND_NETSCAN: "ntscSYN", KIND_PORTSCAN: "ptscSYN"}


@dataclass(frozen=True)
class TraceSpec:
    start_us: int = 0
    slice_seconds: float = 30.0
    slices: int = 10


@dataclass(frozen=True)
class BackgroundSpec:
    hosts: int = 100
    flows_per_host_per_slice: int = 2
    subnet: ipaddress.IPv4Network | ipaddress.IPv6Network = ipaddress.ip_network(
        "10.0.0.0/16"
    )


@dataclass(frozen=True)
class ScannerSpec:
    name: str
    kind: str
    ip: IpAddress
    flows_per_slice: int
    target_subnet: Optional[ipaddress.IPv4Network | ipaddress.IPv6Network] = None
    target: Optional[IpAddress] = None
    port: int = 80
    port_start: int = 1
    labeled: bool = True
    label: str = ""

    def taxonomy_label(self) -> str:
        return self.label or _DEFAULT_LABELS[self.kind]


@dataclass(frozen=True)
class DecoySpec:
    name: str
    label: str
    src_ip: Optional[IpAddress] = None
    dst_ip: Optional[IpAddress] = None
    category: Category = Category.ANOMALOUS
    file: SourceFile = SourceFile.ANOMALOUS


@dataclass(frozen=True)
class SynthSpec:
    trace: TraceSpec = TraceSpec()
    background: Optional[BackgroundSpec] = None
    scanners: tuple[ScannerSpec, ...] = ()
    decoys: tuple[DecoySpec, ...] = ()


def _require_positive(value: int, name: str) -> int:
    if value < 1:
        raise ConfigError(f"{name} must be >= 1, got {value}")
    return value


def load_spec(path: str | Path) -> SynthSpec:
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return _spec_from_parser(parser)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _spec_from_parser(parser: configparser.ConfigParser) -> SynthSpec:
    trace = TraceSpec()
    if parser.has_section("trace"):
        sec = parser["trace"]
        trace = TraceSpec(
            start_us=sec.getint("start_us", fallback=0),
            slice_seconds=sec.getfloat("slice_seconds", fallback=30.0),
            slices=_require_positive(sec.getint("slices", fallback=10), "trace.slices"),
        )
    if trace.slice_seconds <= 0:
        raise ConfigError("trace.slice_seconds must be > 0")

    background = None
    if parser.has_section("background"):
        sec = parser["background"]
        subnet = ipaddress.ip_network(sec.get("subnet", fallback="10.0.0.0/16"))
        hosts = _require_positive(sec.getint("hosts", fallback=100), "background.hosts")
        if hosts > subnet.num_addresses - 2:
            raise ConfigError(
                f"background.hosts {hosts} does not fit in {subnet}"
            )
        background = BackgroundSpec(
            hosts=hosts,
            flows_per_host_per_slice=_require_positive(
                sec.getint("flows_per_host_per_slice", fallback=2),
                "background.flows_per_host_per_slice",
            ),
            subnet=subnet,
        )

    scanners = []
    decoys = []
    for section in parser.sections():
        if section.startswith("scanner:"):
            scanners.append(_scanner_from(parser[section], section[8:]))
        elif section.startswith("decoy:"):
            decoys.append(_decoy_from(parser[section], section[6:]))
        elif section not in ("trace", "background"):
            raise ConfigError(f"unknown section [{section}]")
    _check_distinct_sources(background, scanners)
    return SynthSpec(
        trace=trace,
        background=background,
        scanners=tuple(scanners),
        decoys=tuple(decoys),
    )


def _scanner_from(sec: configparser.SectionProxy, name: str) -> ScannerSpec:
    kind = sec.get("kind", fallback=KIND_NETSCAN)
    if kind not in (KIND_NETSCAN, KIND_PORTSCAN):
        raise ConfigError(f"scanner:{name}.kind must be netscan or portscan, got {kind!r}")
    ip = parse_ip(sec["ip"])
    flows = _require_positive(
        sec.getint("flows_per_slice", fallback=120), f"scanner:{name}.flows_per_slice"
    )
    target_subnet = None
    target = None
    if kind == KIND_NETSCAN:
        target_subnet = ipaddress.ip_network(sec["target_subnet"])
        if target_subnet.num_addresses < 4:
            raise ConfigError(f"scanner:{name}.target_subnet too small")
    else:
        target = parse_ip(sec["target"])
    return ScannerSpec(
        name=name,
        kind=kind,
        ip=ip,
        flows_per_slice=flows,
        target_subnet=target_subnet,
        target=target,
        port=sec.getint("port", fallback=80),
        port_start=sec.getint("port_start", fallback=1),
        labeled=sec.getboolean("labeled", fallback=True),
        label=sec.get("label", fallback=""),
    )


def _decoy_from(sec: configparser.SectionProxy, name: str) -> DecoySpec:
    src = sec.get("src_ip", fallback=None)
    dst = sec.get("dst_ip", fallback=None)
    if not src and not dst:
        raise ConfigError(f"decoy:{name} needs src_ip or dst_ip")
    try:
        category = Category(sec.get("category", fallback="anomalous"))
    except ValueError as exc:
        raise ConfigError(f"decoy:{name}.category: {exc}") from exc
    try:
        file = SourceFile(sec.get("file", fallback="anomalous"))
    except ValueError as exc:
        raise ConfigError(f"decoy:{name}.file: {exc}") from exc
    return DecoySpec(
        name=name,
        label=sec.get("label", fallback="dosAttack"),
        src_ip=parse_ip(src) if src else None,
        dst_ip=parse_ip(dst) if dst else None,
        category=category,
        file=file,
    )


def _check_distinct_sources(
    background: Optional[BackgroundSpec], scanners: Iterable[ScannerSpec]
) -> None:
    seen: set[IpAddress] = set()
    for scanner in scanners:
        if scanner.ip in seen:
            raise ConfigError(f"duplicate scanner ip {scanner.ip}")
        if background is not None and scanner.ip in background.subnet:
            raise ConfigError(
                f"scanner ip {scanner.ip} collides with background subnet "
                f"{background.subnet}"
            )
        seen.add(scanner.ip)


def _background_hosts(background: BackgroundSpec) -> list[IpAddress]:
    base = background.subnet.network_address
    return [base + (1 + i) for i in range(background.hosts)]


def generate(
    spec: SynthSpec, seed: int = 0
) -> tuple[list[FlowRecord], GroundTruthSet]:
    """Materialize the trace and its ground truth, flows sorted by start
    time so the file reads back as an in-order stream."""
    rng = random.Random(seed)
    duration_us = round(spec.trace.slice_seconds * US_PER_SECOND)
    flows: list[FlowRecord] = []
    hosts = _background_hosts(spec.background) if spec.background else []

    for slice_index in range(spec.trace.slices):
        slice_start = spec.trace.start_us + slice_index * duration_us
        if spec.background:
            per_host = spec.background.flows_per_host_per_slice
            count = len(hosts)
            for i, src in enumerate(hosts):
                dst = hosts[(i + 1) % count]
                for _ in range(per_host):
                    flows.append(_mk_flow(rng, src, dst, 80, slice_start, duration_us))
        for scanner in spec.scanners:
            flows.extend(_scanner_flows(rng, scanner, slice_start, duration_us))

    flows.sort(
        key=lambda f: (
            f.first_seen_us,
            ip_sort_key(f.src),
            ip_sort_key(f.dst),
            f.src_port,
            f.dst_port,
        )
    )
    return flows, _ground_truth(spec)


def _mk_flow(
    rng: random.Random,
    src: IpAddress,
    dst: IpAddress,
    dst_port: int,
    slice_start: int,
    duration_us: int,
) -> FlowRecord:
    first = slice_start + rng.randrange(duration_us)
    return FlowRecord(
        src=src,
        dst=dst,
        src_port=rng.randrange(1024, 65536),
        dst_port=dst_port,
        protocol=PROTO_TCP,
        first_seen_us=first,
        last_seen_us=first + rng.randrange(US_PER_SECOND),
        packet_count=1 + rng.randrange(4),
        byte_count=40 + rng.randrange(1460),
    )


def _scanner_flows(
    rng: random.Random, scanner: ScannerSpec, slice_start: int, duration_us: int
) -> list[FlowRecord]:
    out = []
    if scanner.kind == KIND_NETSCAN:
        subnet = scanner.target_subnet
        assert subnet is not None
        base = subnet.network_address
        capacity = subnet.num_addresses - 2
        for j in range(scanner.flows_per_slice):
            dst = base + (1 + j % capacity)
            out.append(
                _mk_flow(rng, scanner.ip, dst, scanner.port, slice_start, duration_us)
            )
    else:
        assert scanner.target is not None
        for j in range(scanner.flows_per_slice):
            port = (scanner.port_start + j - 1) % 65535 + 1
            out.append(
                _mk_flow(rng, scanner.ip, scanner.target, port, slice_start, duration_us)
            )
    return out


def _ground_truth(spec: SynthSpec) -> GroundTruthSet:
    entries = []
    for scanner in spec.scanners:
        if not scanner.labeled:
            continue
        entries.append(
            GroundTruthEntry(
                category=Category.ANOMALOUS,
                taxonomy_label=scanner.taxonomy_label(),
                src_ips=frozenset({scanner.ip}),
                dst_ips=frozenset(),
                source_file=SourceFile.ANOMALOUS,
            )
        )
    for decoy in spec.decoys:
        entries.append(
            GroundTruthEntry(
                category=decoy.category,
                taxonomy_label=decoy.label,
                src_ips=frozenset({decoy.src_ip} if decoy.src_ip else set()),
                dst_ips=frozenset({decoy.dst_ip} if decoy.dst_ip else set()),
                source_file=decoy.file,
            )
        )
    return GroundTruthSet(entries)


def render_ground_truth_xml(
    gt: GroundTruthSet,
    source_file: SourceFile,
    manifest_name: Optional[str] = None,
) -> str:
    """The entries destined for one XML file, in entry order."""
    lines = ['<?xml version="1.0" encoding="UTF-8"?>']
    if manifest_name:
        lines.append(f"<!-- manifest={manifest_name} -->")
    lines.append("<data>")
    for entry in gt.entries:
        if entry.source_file is not source_file:
            continue
        lines.append(
            f"  <anomaly type={quoteattr(entry.category.value)} "
            f"value={quoteattr(entry.taxonomy_label)}>"
        )
        for ip in sorted(entry.src_ips, key=ip_sort_key):
            lines.append(f"    <filter src_ip={quoteattr(str(ip))}/>")
        for ip in sorted(entry.dst_ips, key=ip_sort_key):
            lines.append(f"    <filter dst_ip={quoteattr(str(ip))}/>")
        lines.append("  </anomaly>")
    lines.append("</data>")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SynthOutputs:
    flow_path: Path
    anomalous_path: Path
    notice_path: Path
    flow_count: int


def write_outputs(
    spec: SynthSpec,
    seed: int,
    out_base: str | Path,
    manifest_name: Optional[str] = None,
) -> SynthOutputs:
    """Write `<base>.flows.csv`, `<base>.anomalous.xml`, `<base>.notice.xml`.

    The XML files carry the manifest reference as a comment when given;
    the flow file cannot, its header line is fixed by contract.
    """
    base = Path(out_base)
    flows, gt = generate(spec, seed)
    flow_path = base.with_name(base.name + ".flows.csv")
    anomalous_path = base.with_name(base.name + ".anomalous.xml")
    notice_path = base.with_name(base.name + ".notice.xml")
    count = write_flow_file(flow_path, flows)
    anomalous_path.write_text(
        render_ground_truth_xml(gt, SourceFile.ANOMALOUS, manifest_name),
        encoding="utf-8",
    )
    notice_path.write_text(
        render_ground_truth_xml(gt, SourceFile.NOTICE, manifest_name),
        encoding="utf-8",
    )
    return SynthOutputs(
        flow_path=flow_path,
        anomalous_path=anomalous_path,
        notice_path=notice_path,
        flow_count=count,
    )
