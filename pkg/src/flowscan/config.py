"""Run configuration: built-in defaults, an INI file, then CLI overrides.

The config file path comes from --config when given, else from the
FLOWSCAN_CONFIG environment variable, else everything stays at the
defaults below. Unknown sections or keys are errors; so is any value
out of range. Both report the offending field by name.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import ConfigError
from .engine import DEFAULT_WATERMARK_LAG_S, Mode, Partitioning
from .evaluation import DEFAULT_SCAN_EXCLUDE, DEFAULT_SCAN_WHITELIST
from .rules import RuleConfig

ENV_CONFIG = "FLOWSCAN_CONFIG"

DEFAULT_THRESHOLD = 100.0
DEFAULT_THRESHOLD_SWEEP = (50.0, 100.0, 200.0)
DEFAULT_SLICE_SECONDS = 30.0


@dataclass(frozen=True)
class AppConfig:
    slice_seconds: float = DEFAULT_SLICE_SECONDS
    trace_start_us: Optional[int] = None
    threshold: float = DEFAULT_THRESHOLD
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLD_SWEEP
    workers: int = 1
    mode: Mode = Mode.BATCH
    partitioning: Partitioning = Partitioning.BY_SLICE_INDEX
    watermark_lag_seconds: float = DEFAULT_WATERMARK_LAG_S
    rules: RuleConfig = field(default_factory=RuleConfig)
    whitelist: frozenset[str] = DEFAULT_SCAN_WHITELIST
    exclude: frozenset[str] = DEFAULT_SCAN_EXCLUDE
    strict: bool = False

    def validate(self) -> None:
        if self.slice_seconds <= 0:
            raise ConfigError(
                f"detector.slice_seconds must be > 0, got {self.slice_seconds}"
            )
        if self.threshold <= 0:
            raise ConfigError(f"detector.threshold must be > 0, got {self.threshold}")
        if not self.thresholds:
            raise ConfigError("evaluation.thresholds must not be empty")
        for value in self.thresholds:
            if value <= 0:
                raise ConfigError(
                    f"evaluation.thresholds entries must be > 0, got {value}"
                )
        if self.workers < 1:
            raise ConfigError(f"engine.workers must be >= 1, got {self.workers}")
        if self.watermark_lag_seconds < 0:
            raise ConfigError(
                "engine.watermark_lag_seconds must be >= 0, "
                f"got {self.watermark_lag_seconds}"
            )

    def replace(self, **changes) -> "AppConfig":
        return dataclasses.replace(self, **changes)


def parse_port_set(text: str) -> frozenset[int]:
    """Comma-separated ports and inclusive ranges, e.g. `0-1023,8080`."""
    ports: set[int] = set()
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk:
            low_text, high_text = chunk.split("-", 1)
            low, high = int(low_text), int(high_text)
            if low > high:
                raise ValueError(f"empty port range {chunk!r}")
            ports.update(range(low, high + 1))
        else:
            ports.add(int(chunk))
    for port in ports:
        if not 0 <= port <= 65535:
            raise ValueError(f"port out of range: {port}")
    return frozenset(ports)


def format_port_set(ports: frozenset[int]) -> str:
    """Inverse of parse_port_set, with runs collapsed to ranges."""
    if not ports:
        return ""
    ordered = sorted(ports)
    chunks: list[str] = []
    run_start = prev = ordered[0]
    for port in ordered[1:] + [None]:  # type: ignore[list-item]
        if port is not None and port == prev + 1:
            prev = port
            continue
        chunks.append(str(run_start) if run_start == prev else f"{run_start}-{prev}")
        if port is not None:
            run_start = prev = port
    return ",".join(chunks)


def parse_thresholds(text: str) -> tuple[float, ...]:
    values = tuple(float(chunk) for chunk in text.split(",") if chunk.strip())
    if not values:
        raise ValueError("no thresholds given")
    return values


def _parse_terms(text: str) -> frozenset[str]:
    return frozenset(t.strip().lower() for t in text.split(",") if t.strip())


_KNOWN_KEYS = {
    "detector": {"slice_seconds", "threshold", "trace_start_us"},
    "engine": {"workers", "partitioning", "mode", "watermark_lag_seconds"},
    "rules": {
        "netscan_min_hosts",
        "portscan_min_ports",
        "combined_min_hosts",
        "subnet_prefix",
        "known_ports",
    },
    "evaluation": {"thresholds", "whitelist", "exclude"},
    "io": {"strict"},
}


def load_config(path: Optional[str | Path] = None) -> AppConfig:
    """Build an AppConfig from the file at `path`, the FLOWSCAN_CONFIG
    file, or pure defaults. Raises ConfigError for anything invalid."""
    if path is None:
        env_path = os.environ.get(ENV_CONFIG)
        if not env_path:
            return AppConfig()
        path = env_path
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        cfg = _config_from_parser(parser)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg.validate()
    return cfg


def _config_from_parser(parser: configparser.ConfigParser) -> AppConfig:
    for section in parser.sections():
        known = _KNOWN_KEYS.get(section)
        if known is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")

    cfg = AppConfig()
    if parser.has_section("detector"):
        sec = parser["detector"]
        changes: dict = {}
        if "slice_seconds" in sec:
            changes["slice_seconds"] = _field(sec.getfloat, "detector.slice_seconds")
        if "threshold" in sec:
            changes["threshold"] = _field(sec.getfloat, "detector.threshold")
        if "trace_start_us" in sec:
            changes["trace_start_us"] = _field(sec.getint, "detector.trace_start_us")
        cfg = cfg.replace(**changes)
    if parser.has_section("engine"):
        sec = parser["engine"]
        changes = {}
        if "workers" in sec:
            changes["workers"] = _field(sec.getint, "engine.workers")
        if "partitioning" in sec:
            changes["partitioning"] = _enum_field(
                Partitioning, sec["partitioning"], "engine.partitioning"
            )
        if "mode" in sec:
            changes["mode"] = _enum_field(Mode, sec["mode"], "engine.mode")
        if "watermark_lag_seconds" in sec:
            changes["watermark_lag_seconds"] = _field(
                sec.getfloat, "engine.watermark_lag_seconds"
            )
        cfg = cfg.replace(**changes)
    if parser.has_section("rules"):
        sec = parser["rules"]
        kwargs: dict = {}
        for name in ("netscan_min_hosts", "portscan_min_ports", "combined_min_hosts",
                     "subnet_prefix"):
            if name in sec:
                kwargs[name] = _field(sec.getint, f"rules.{name}", name)
        if "known_ports" in sec:
            try:
                kwargs["known_ports"] = parse_port_set(sec["known_ports"])
            except ValueError as exc:
                raise ConfigError(f"rules.known_ports: {exc}") from exc
        try:
            cfg = cfg.replace(rules=RuleConfig(**kwargs))
        except ValueError as exc:
            raise ConfigError(f"rules: {exc}") from exc
    if parser.has_section("evaluation"):
        sec = parser["evaluation"]
        changes = {}
        if "thresholds" in sec:
            try:
                changes["thresholds"] = parse_thresholds(sec["thresholds"])
            except ValueError as exc:
                raise ConfigError(f"evaluation.thresholds: {exc}") from exc
        if "whitelist" in sec:
            changes["whitelist"] = _parse_terms(sec["whitelist"])
        if "exclude" in sec:
            changes["exclude"] = _parse_terms(sec["exclude"])
        cfg = cfg.replace(**changes)
    if parser.has_section("io") and "strict" in parser["io"]:
        cfg = cfg.replace(strict=_field(parser["io"].getboolean, "io.strict"))
    return cfg


def _field(getter, label: str, key: Optional[str] = None):
    if key is None:
        key = label.split(".", 1)[1]
    try:
        return getter(key)
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from exc


def _enum_field(enum_cls, raw: str, label: str):
    try:
        return enum_cls(raw.strip().lower())
    except ValueError:
        choices = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{label} must be one of {choices}, got {raw!r}") from None
