from __future__ import annotations

import random
import tempfile
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowscan.core import FlowRecord
from flowscan.ingest import (
    FLOW_HEADER,
    Category,
    FlowFileError,
    GroundTruthError,
    PacketSummary,
    SourceFile,
    aggregate_packets,
    parse_ground_truth,
    read_flow_file,
    read_ground_truth,
    write_flow_file,
)

from helpers import ip
from oracles import naive_aggregate

FIXTURE = """\
first_seen_us,last_seen_us,src_ip,dst_ip,src_port,dst_port,proto,packets,bytes
1000000,2000000,10.0.0.1,10.0.0.2,40000,80,TCP,3,1800
2500000,2500000,10.0.0.2,10.0.0.1,80,40000,6,1,60
3000000,4000000,2001:db8::1,10.0.0.3,5353,53,UDP,2,240
"""


def _write(tmp_path: Path, text: str, name: str = "flows.csv") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_empty_file_with_header(tmp_path: Path) -> None:
    path = _write(tmp_path, FLOW_HEADER + "\n")
    reader = read_flow_file(path)
    assert list(reader) == []
    assert reader.errors == 0


def test_three_line_fixture_field_by_field(tmp_path: Path) -> None:
    path = _write(tmp_path, FIXTURE)
    flows = list(read_flow_file(path))
    assert len(flows) == 3
    first = flows[0]
    assert first.src == ip("10.0.0.1")
    assert first.dst == ip("10.0.0.2")
    assert first.src_port == 40000
    assert first.dst_port == 80
    assert first.protocol == 6
    assert first.first_seen_us == 1_000_000
    assert first.last_seen_us == 2_000_000
    assert first.packet_count == 3
    assert first.byte_count == 1800
    # decimal protocol spelled as a number reads the same as TCP
    assert flows[1].protocol == 6
    assert flows[2].src == ip("2001:db8::1")
    assert flows[2].protocol == 17


def test_out_of_range_port_skipped_and_counted(tmp_path: Path) -> None:
    bad = FLOW_HEADER + "\n" + "0,1,10.0.0.1,10.0.0.2,70000,80,TCP,1,60\n"
    good = "0,1,10.0.0.1,10.0.0.2,4000,80,TCP,1,60\n"
    path = _write(tmp_path, bad + good * 20)
    reader = read_flow_file(path)
    assert len(list(reader)) == 20
    assert reader.errors == 1


def test_strict_mode_aborts_on_first_malformed_line(tmp_path: Path) -> None:
    path = _write(tmp_path, FLOW_HEADER + "\n0,1,10.0.0.1,10.0.0.2,70000,80,TCP,1,60\n")
    with pytest.raises(FlowFileError, match=":2:"):
        list(read_flow_file(path, strict=True))


def test_header_mismatch(tmp_path: Path) -> None:
    path = _write(tmp_path, "time,src,dst\n")
    with pytest.raises(FlowFileError, match="header"):
        list(read_flow_file(path))


def test_missing_file_raises_oserror(tmp_path: Path) -> None:
    with pytest.raises(OSError):
        list(read_flow_file(tmp_path / "nope.csv"))


def test_error_ratio_guard_in_lenient_mode(tmp_path: Path) -> None:
    lines = [FLOW_HEADER]
    lines += ["garbage"] * 3
    lines += ["0,1,10.0.0.1,10.0.0.2,4000,80,TCP,1,60"] * 5
    path = _write(tmp_path, "\n".join(lines) + "\n")
    with pytest.raises(FlowFileError, match="malformed"):
        list(read_flow_file(path))


def test_round_trip_is_bit_identical(tmp_path: Path) -> None:
    src = _write(tmp_path, FIXTURE)
    flows = list(read_flow_file(src))
    out = tmp_path / "copy.csv"
    write_flow_file(out, flows)
    # the fixture uses "6" where the canonical spelling is TCP, so
    # round-trip identity is over the canonical form
    canonical = tmp_path / "canonical.csv"
    write_flow_file(canonical, flows)
    assert out.read_bytes() == canonical.read_bytes()
    assert list(read_flow_file(out)) == flows


_flow_strategy = st.builds(
    FlowRecord,
    src=st.ip_addresses(),
    dst=st.ip_addresses(),
    src_port=st.integers(0, 65535),
    dst_port=st.integers(0, 65535),
    protocol=st.integers(0, 255),
    first_seen_us=st.integers(0, 10**9),
    last_seen_us=st.integers(10**9, 10**10),
    packet_count=st.integers(1, 100),
    byte_count=st.integers(0, 10**6),
)


@given(st.lists(_flow_strategy, max_size=30))
def test_write_read_round_trip_property(flows: list[FlowRecord]) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "flows.csv"
        write_flow_file(path, flows)
        first_pass = path.read_bytes()
        back = list(read_flow_file(path))
        write_flow_file(path, back)
        assert back == flows
        assert path.read_bytes() == first_pass


def _pkt(
    ts: int,
    src: str = "10.0.0.1",
    dst: str = "10.0.0.2",
    sport: int = 4000,
    dport: int = 80,
    proto: int = 6,
    length: int = 60,
) -> PacketSummary:
    return PacketSummary(
        timestamp_us=ts,
        src=ip(src),
        dst=ip(dst),
        src_port=sport,
        dst_port=dport,
        protocol=proto,
        length=length,
    )


def test_single_packet_single_flow() -> None:
    flows = list(aggregate_packets([_pkt(5_000_000)]))
    assert len(flows) == 1
    flow = flows[0]
    assert flow.packet_count == 1
    assert flow.first_seen_us == flow.last_seen_us == 5_000_000
    assert flow.byte_count == 60


def test_two_packets_within_timeout_merge() -> None:
    flows = list(aggregate_packets([_pkt(0), _pkt(10_000_000)], idle_timeout_s=60))
    assert len(flows) == 1
    assert flows[0].packet_count == 2
    assert flows[0].byte_count == 120
    assert flows[0].last_seen_us == 10_000_000


def test_idle_gap_splits_flow() -> None:
    flows = list(aggregate_packets([_pkt(0), _pkt(120_000_000)], idle_timeout_s=60))
    assert len(flows) == 2
    assert all(f.packet_count == 1 for f in flows)


def test_directions_stay_distinct() -> None:
    packets = [_pkt(0), _pkt(1, src="10.0.0.2", dst="10.0.0.1", sport=80, dport=4000)]
    flows = list(aggregate_packets(packets))
    assert len(flows) == 2


def test_out_of_order_strict_raises() -> None:
    packets = [_pkt(10_000_000), _pkt(1_000_000)]
    with pytest.raises(ValueError, match="behind"):
        list(aggregate_packets(packets, strict=True))
    # lenient mode still aggregates
    assert len(list(aggregate_packets(packets))) == 1


def test_reorder_tolerance_allows_small_skew() -> None:
    packets = [_pkt(10_000_000), _pkt(9_500_000)]
    flows = list(aggregate_packets(packets, reorder_tolerance_s=1.0, strict=True))
    assert len(flows) == 1
    assert flows[0].first_seen_us == 9_500_000


def test_aggregation_matches_brute_force_on_random_input(rng: random.Random) -> None:
    hosts = [f"10.0.0.{i}" for i in range(1, 6)]
    timeout_us = 60_000_000
    for _ in range(20):
        ts = 0
        packets = []
        for _ in range(rng.randrange(0, 400)):
            ts += rng.randrange(0, 90_000_000)
            packets.append(
                _pkt(
                    ts,
                    src=rng.choice(hosts),
                    dst=rng.choice(hosts),
                    sport=rng.choice((4000, 4001)),
                    dport=rng.choice((80, 443)),
                    length=rng.randrange(40, 1500),
                )
            )
        got = [
            (f.five_tuple, f.first_seen_us, f.last_seen_us, f.packet_count, f.byte_count)
            for f in aggregate_packets(packets, idle_timeout_s=60)
        ]
        assert sorted(got) == sorted(naive_aggregate(packets, timeout_us))


@given(
    st.lists(
        st.tuples(
            st.integers(0, 5),  # host pair selector
            st.integers(0, 200_000_000),  # timestamp
            st.integers(40, 1500),
        ),
        max_size=200,
    )
)
def test_aggregation_conserves_packets_and_bytes(raw) -> None:
    pairs = [("10.0.0.1", "10.0.0.2"), ("10.0.0.2", "10.0.0.1"), ("10.0.0.3", "10.0.0.4")]
    packets = [
        _pkt(ts, src=pairs[sel % 3][0], dst=pairs[sel % 3][1], length=length)
        for sel, ts, length in sorted(raw, key=lambda t: t[1])
    ]
    flows = list(aggregate_packets(packets))
    assert sum(f.packet_count for f in flows) == len(packets)
    assert sum(f.byte_count for f in flows) == sum(p.length for p in packets)


ANOMALOUS_XML = """\
<?xml version="1.0" encoding="UTF-8"?>
<admd:data xmlns:admd="http://example.invalid/admd" type="mawi">
  <anomaly type="anomalous" value="ntscACK">
    <filter>
      <filter_details src_ip="192.0.2.7" extra="ignored"/>
    </filter>
  </anomaly>
  <anomaly type="suspicious" value="ptscSYN">
    <filter_details src_ip="192.0.2.8" src_port="1234"/>
    <filter_details src_ip="192.0.2.9"/>
    <filter_details dst_ip="198.51.100.1" dst_port="80"/>
  </anomaly>
</admd:data>
"""

NOTICE_XML = """\
<?xml version="1.0" encoding="UTF-8"?>
<data>
  <anomaly type="notice" value="dosAttack">
    <filter_details dst_ip="203.0.113.5"/>
  </anomaly>
  <anomaly type="benign" value="heavyHitter">
    <filter_details src_ip="203.0.113.6"/>
  </anomaly>
</data>
"""


def test_zero_anomalies_parse_to_empty_set(tmp_path: Path) -> None:
    path = _write(tmp_path, '<?xml version="1.0"?><data></data>', "empty.xml")
    assert parse_ground_truth(path, SourceFile.ANOMALOUS) == []


def test_single_anomaly_entry(tmp_path: Path) -> None:
    path = _write(tmp_path, ANOMALOUS_XML, "anomalous.xml")
    entries = parse_ground_truth(path, SourceFile.ANOMALOUS)
    assert len(entries) == 2
    first = entries[0]
    assert first.category is Category.ANOMALOUS
    assert first.taxonomy_label == "ntscACK"
    assert first.src_ips == frozenset({ip("192.0.2.7")})
    assert first.dst_ips == frozenset()
    assert first.source_file is SourceFile.ANOMALOUS


def test_multi_ip_entry_ip_set(tmp_path: Path) -> None:
    path = _write(tmp_path, ANOMALOUS_XML, "anomalous.xml")
    entries = parse_ground_truth(path, SourceFile.ANOMALOUS)
    entry = entries[1]
    assert entry.ip_set() == {
        ip("192.0.2.8"),
        ip("192.0.2.9"),
        ip("198.51.100.1"),
    }
    # port filters are captured but play no further role
    assert entry.src_ports == frozenset({1234})
    assert entry.dst_ports == frozenset({80})


def test_both_files_combine_with_source_tags(tmp_path: Path) -> None:
    anomalous = _write(tmp_path, ANOMALOUS_XML, "anomalous.xml")
    notice = _write(tmp_path, NOTICE_XML, "notice.xml")
    gt = read_ground_truth(anomalous, notice)
    assert len(gt.entries) == 4
    assert gt.ip_set(sources=[SourceFile.NOTICE]) == {
        ip("203.0.113.5"),
        ip("203.0.113.6"),
    }
    assert gt.ip_set(categories=[Category.BENIGN]) == {ip("203.0.113.6")}
    assert len(gt.ip_set()) == 6


def test_unknown_category_lenient_vs_strict(tmp_path: Path) -> None:
    xml = """<?xml version="1.0"?>
    <data>
      <anomaly type="weird" value="x"><f src_ip="10.0.0.1"/></anomaly>
      <anomaly type="notice" value="ok"><f src_ip="10.0.0.2"/></anomaly>
    </data>
    """
    path = _write(tmp_path, xml, "odd.xml")
    entries = parse_ground_truth(path, SourceFile.NOTICE)
    assert len(entries) == 1
    assert entries[0].taxonomy_label == "ok"
    with pytest.raises(GroundTruthError, match="weird"):
        parse_ground_truth(path, SourceFile.NOTICE, strict=True)


def test_entry_without_ips_dropped(tmp_path: Path) -> None:
    xml = '<?xml version="1.0"?><data><anomaly type="notice" value="x"/></data>'
    path = _write(tmp_path, xml, "noip.xml")
    assert parse_ground_truth(path, SourceFile.NOTICE) == []
    with pytest.raises(GroundTruthError, match="without any IP"):
        parse_ground_truth(path, SourceFile.NOTICE, strict=True)


def test_unparseable_xml(tmp_path: Path) -> None:
    path = _write(tmp_path, "<data><anomaly", "broken.xml")
    with pytest.raises(GroundTruthError, match="XML"):
        parse_ground_truth(path, SourceFile.ANOMALOUS)
