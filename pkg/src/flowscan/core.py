"""Core domain types: addresses, flow records, and time-slice arithmetic."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import NamedTuple, Union

IpAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

US_PER_SECOND = 1_000_000

# IANA protocol numbers for the two protocols we name explicitly.
PROTO_TCP = 6
PROTO_UDP = 17

_PROTO_NAMES = {PROTO_TCP: "TCP", PROTO_UDP: "UDP"}
_PROTO_CODES = {"TCP": PROTO_TCP, "UDP": PROTO_UDP}


class ConfigError(ValueError):
    """A configuration value violates its contract."""


def parse_ip(text: str) -> IpAddress:
    """Parse an IPv4 or IPv6 address into its canonical binary form."""
    return ipaddress.ip_address(text)


def format_ip(ip: IpAddress) -> str:
    return str(ip)


def ip_sort_key(ip: IpAddress) -> tuple[int, int]:
    """Total order over mixed v4/v6 addresses (family first, then value)."""
    return (ip.version, int(ip))


def parse_protocol(text: str) -> int:
    """Accept TCP, UDP, or a decimal protocol number."""
    code = _PROTO_CODES.get(text.upper())
    if code is not None:
        return code
    code = int(text)
    if not 0 <= code <= 255:
        raise ValueError(f"protocol number out of range: {code}")
    return code


def format_protocol(proto: int) -> str:
    """Canonical spelling: TCP/UDP by name, anything else as its number."""
    return _PROTO_NAMES.get(proto, str(proto))


@dataclass(frozen=True, slots=True)
class FlowRecord:
    """One unidirectional flow summary keyed by its 5-tuple.

    Timestamps are integer microseconds since the Unix epoch; a flow is
    anchored to the slice of its first packet only.
    """

    src: IpAddress
    dst: IpAddress
    src_port: int
    dst_port: int
    protocol: int
    first_seen_us: int
    last_seen_us: int
    packet_count: int = 1
    byte_count: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.src_port <= 65535:
            raise ValueError(f"src_port out of range: {self.src_port}")
        if not 0 <= self.dst_port <= 65535:
            raise ValueError(f"dst_port out of range: {self.dst_port}")
        if not 0 <= self.protocol <= 255:
            raise ValueError(f"protocol out of range: {self.protocol}")
        if self.first_seen_us > self.last_seen_us:
            raise ValueError("first_seen_us after last_seen_us")
        if self.packet_count < 1:
            raise ValueError(f"packet_count must be >= 1, got {self.packet_count}")
        if self.byte_count < 0:
            raise ValueError(f"byte_count must be >= 0, got {self.byte_count}")

    @property
    def five_tuple(self) -> tuple[IpAddress, IpAddress, int, int, int]:
        return (self.src, self.dst, self.src_port, self.dst_port, self.protocol)


class SliceKey(NamedTuple):
    """An (IP address, slice index) pair, the grain of all counting."""

    ip: IpAddress
    slice_index: int

    def sort_key(self) -> tuple[int, int, int]:
        return (self.slice_index, self.ip.version, int(self.ip))


@dataclass(frozen=True, slots=True)
class SliceConfig:
    """Fixed-duration half-open windows [k*d, (k+1)*d) aligned to trace start."""

    trace_start_us: int
    slice_seconds: float = 30.0

    def __post_init__(self) -> None:
        if self.slice_seconds <= 0:
            raise ConfigError(f"slice_seconds must be > 0, got {self.slice_seconds}")

    @property
    def duration_us(self) -> int:
        return round(self.slice_seconds * US_PER_SECOND)

    def slice_start_us(self, slice_index: int) -> int:
        return self.trace_start_us + slice_index * self.duration_us

    def slice_end_us(self, slice_index: int) -> int:
        return self.trace_start_us + (slice_index + 1) * self.duration_us


def slice_of(flow: FlowRecord, cfg: SliceConfig) -> int:
    """Index of the slice holding the flow's first packet.

    Raises ValueError for flows starting before the trace start.
    """
    offset = flow.first_seen_us - cfg.trace_start_us
    if offset < 0:
        raise ValueError(
            f"flow first_seen {flow.first_seen_us} precedes trace start {cfg.trace_start_us}"
        )
    return offset // cfg.duration_us
