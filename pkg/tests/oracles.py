"""Independent reference implementations the real code is checked against.

Everything here is written naively and separately from the package
internals: plain tuples, brute force loops, no shared helpers beyond
the domain types themselves.
"""

from __future__ import annotations

from flowscan.core import FlowRecord
from flowscan.detector import RatioVerdict
from flowscan.ingest import PacketSummary

VerdictRow = tuple  # (slice_index, ip, direction_str, generated, received, ratio)


def naive_verdicts(
    flows: list[FlowRecord],
    trace_start_us: int,
    slice_us: int,
    threshold: float,
) -> list[VerdictRow]:
    generated: dict = {}
    received: dict = {}
    for flow in flows:
        index = (flow.first_seen_us - trace_start_us) // slice_us
        key = (flow.src, index)
        generated[key] = generated.get(key, 0) + 1
        key = (flow.dst, index)
        received[key] = received.get(key, 0) + 1
    rows = []
    for ip_addr, index in set(generated) | set(received):
        gen = generated.get((ip_addr, index), 0)
        recv = received.get((ip_addr, index), 0)
        if gen >= recv:
            ratio = gen / max(recv, 1)
        else:
            ratio = -(recv / max(gen, 1))
        if ratio > threshold:
            rows.append((index, ip_addr, "sender", gen, recv, ratio))
        elif ratio < -threshold:
            rows.append((index, ip_addr, "receiver", gen, recv, ratio))
    rows.sort(key=lambda row: (row[0], row[1].version, int(row[1])))
    return rows


def verdict_as_row(verdict: RatioVerdict) -> VerdictRow:
    return (
        verdict.key.slice_index,
        verdict.key.ip,
        verdict.direction.value,
        verdict.generated,
        verdict.received,
        verdict.ratio,
    )


def render_rows(rows: list[VerdictRow]) -> bytes:
    """Fixed textual rendering so comparisons are at the byte level."""
    lines = [
        f"{index},{ip_addr},{direction},{gen},{recv},{ratio!r}"
        for index, ip_addr, direction, gen, recv, ratio in rows
    ]
    return ("\n".join(lines) + "\n").encode()


def naive_aggregate(packets: list[PacketSummary], timeout_us: int) -> list[tuple]:
    """O(n^2)-ish per-key grouping: collect each 5-tuple's packets in
    arrival order, split on idle gaps. Returns (key, first, last,
    packets, bytes) tuples as a set-comparable list."""
    order: list[tuple] = []
    per_key: dict[tuple, list[PacketSummary]] = {}
    for pkt in packets:
        key = (pkt.src, pkt.dst, pkt.src_port, pkt.dst_port, pkt.protocol)
        if key not in per_key:
            per_key[key] = []
            order.append(key)
        per_key[key].append(pkt)
    flows = []
    for key in order:
        group: list[PacketSummary] = []
        last_ts = None
        for pkt in per_key[key]:
            if last_ts is not None and pkt.timestamp_us - last_ts >= timeout_us:
                flows.append(_summarize(key, group))
                group = []
            group.append(pkt)
            last_ts = pkt.timestamp_us
        if group:
            flows.append(_summarize(key, group))
    return flows


def _summarize(key: tuple, group: list[PacketSummary]) -> tuple:
    stamps = [p.timestamp_us for p in group]
    return (
        key,
        min(stamps),
        max(stamps),
        len(group),
        sum(p.length for p in group),
    )


def brute_force_labels(
    ip_addr,
    flows: list[FlowRecord],
    trace_start_us: int,
    slice_us: int,
    netscan_min: int = 20,
    portscan_min: int = 10,
    combined_min: int = 20,
    prefix: int = 24,
    known_port_max: int = 1023,
) -> set[str]:
    """Direct restatement of the three scan rules over explicit loops."""
    outbound = [f for f in flows if f.src == ip_addr]
    labels = set()

    subnets = {(f.dst.version, int(f.dst) >> (32 - prefix)) for f in outbound
               if f.dst.version == 4}
    for subnet in subnets:
        dsts = {
            f.dst
            for f in outbound
            if f.dst.version == 4 and (4, int(f.dst) >> (32 - prefix)) == subnet
        }
        if len(dsts) >= netscan_min:
            labels.add("netscan")

    for dst in {f.dst for f in outbound}:
        ports = {f.dst_port for f in outbound if f.dst == dst}
        if len(ports) > portscan_min:
            labels.add("portscan")

    slices = {(f.first_seen_us - trace_start_us) // slice_us for f in outbound}
    for index in slices:
        dsts = {
            f.dst
            for f in outbound
            if (f.first_seen_us - trace_start_us) // slice_us == index
            and f.dst_port <= known_port_max
        }
        if len(dsts) >= combined_min:
            labels.add("netscan_and_portscan")
    return labels
