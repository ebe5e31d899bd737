"""Heuristic classification of flagged IPs into scan types.

Three rules, each judged on the IP's outbound flows only:

* net scan: enough distinct destination hosts inside one subnet,
  anywhere in the trace
* port scan: one destination host probed on more than a cutoff number
  of distinct ports
* combined scan: enough distinct destination hosts contacted on
  well-known ports within a single time slice

A destination is counted once per rule evaluation regardless of how
many flows touch it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .core import FlowRecord, IpAddress, SliceConfig, slice_of


class ScanLabel(Enum):
    NETSCAN = "netscan"
    PORTSCAN = "portscan"
    NETSCAN_AND_PORTSCAN = "netscan_and_portscan"


def _default_known_ports() -> frozenset[int]:
    return frozenset(range(0, 1024))


@dataclass(frozen=True)
class RuleConfig:
    netscan_min_hosts: int = 20
    portscan_min_ports: int = 10
    combined_min_hosts: int = 20
    subnet_prefix: int = 24
    known_ports: frozenset[int] = field(default_factory=_default_known_ports)

    def __post_init__(self) -> None:
        if self.netscan_min_hosts < 1:
            raise ValueError("netscan_min_hosts must be >= 1")
        if self.portscan_min_ports < 1:
            raise ValueError("portscan_min_ports must be >= 1")
        if self.combined_min_hosts < 1:
            raise ValueError("combined_min_hosts must be >= 1")
        if not 0 <= self.subnet_prefix <= 128:
            raise ValueError(f"subnet_prefix out of range: {self.subnet_prefix}")


def subnet_key(ip: IpAddress, prefix: int) -> tuple[int, int]:
    """Subnet identity of an address under the given prefix length,
    clamped to the family's width."""
    bits = 32 if ip.version == 4 else 128
    return (ip.version, int(ip) >> (bits - min(prefix, bits)))


@dataclass(frozen=True)
class Classification:
    ip: IpAddress
    labels: frozenset[ScanLabel]
    # strongest observation per rule: hosts in the densest subnet,
    # ports on the most-probed host, known-port hosts in the busiest slice
    netscan_hosts: int = 0
    portscan_ports: int = 0
    combined_hosts: int = 0


def classify(
    ip: IpAddress,
    flows: Iterable[FlowRecord],
    cfg: RuleConfig,
    slices: SliceConfig,
) -> Classification:
    """Apply all three rules to the flows generated by `ip`."""
    outbound = [f for f in flows if f.src == ip]
    return classify_outbound(ip, outbound, cfg, slices)


def classify_outbound(
    ip: IpAddress,
    outbound: Iterable[FlowRecord],
    cfg: RuleConfig,
    slices: SliceConfig,
) -> Classification:
    """Same as classify, for flows already known to originate at `ip`."""
    by_subnet: dict[tuple[int, int], set[IpAddress]] = {}
    by_dst_ports: dict[IpAddress, set[int]] = {}
    by_slice_known: dict[int, set[IpAddress]] = {}
    known = cfg.known_ports
    prefix = cfg.subnet_prefix
    for flow in outbound:
        dst = flow.dst
        by_subnet.setdefault(subnet_key(dst, prefix), set()).add(dst)
        by_dst_ports.setdefault(dst, set()).add(flow.dst_port)
        if flow.dst_port in known:
            by_slice_known.setdefault(slice_of(flow, slices), set()).add(dst)

    netscan_hosts = max((len(v) for v in by_subnet.values()), default=0)
    portscan_ports = max((len(v) for v in by_dst_ports.values()), default=0)
    combined_hosts = max((len(v) for v in by_slice_known.values()), default=0)

    labels = set()
    if netscan_hosts >= cfg.netscan_min_hosts:
        labels.add(ScanLabel.NETSCAN)
    if portscan_ports > cfg.portscan_min_ports:
        labels.add(ScanLabel.PORTSCAN)
    if combined_hosts >= cfg.combined_min_hosts:
        labels.add(ScanLabel.NETSCAN_AND_PORTSCAN)
    return Classification(
        ip=ip,
        labels=frozenset(labels),
        netscan_hosts=netscan_hosts,
        portscan_ports=portscan_ports,
        combined_hosts=combined_hosts,
    )


def classify_all(
    ips: Iterable[IpAddress],
    flows: Iterable[FlowRecord],
    cfg: RuleConfig,
    slices: SliceConfig,
) -> dict[IpAddress, Classification]:
    """Classify several IPs in one pass over the flows."""
    wanted = set(ips)
    outbound: dict[IpAddress, list[FlowRecord]] = {ip: [] for ip in wanted}
    for flow in flows:
        if flow.src in wanted:
            outbound[flow.src].append(flow)
    return {
        ip: classify_outbound(ip, outbound[ip], cfg, slices) for ip in wanted
    }


def reintegrate(
    false_positives: Iterable[IpAddress],
    classifications: Mapping[IpAddress, Classification],
) -> set[IpAddress]:
    """False positives confirmed by at least one rule; these move back
    into the true positive set during evaluation."""
    confirmed = set()
    for ip in false_positives:
        cls = classifications.get(ip)
        if cls is not None and cls.labels:
            confirmed.add(ip)
    return confirmed
