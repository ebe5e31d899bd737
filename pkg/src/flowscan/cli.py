"""Command line driver: detect, evaluate, bench, synth.

Every command writes a JSON run manifest next to its main output
(`<out>.manifest.json`) recording the config snapshot, input and output
digests, tool version, and wall-clock bounds. Text outputs reference
the manifest in a leading comment where the format allows one; flow
files cannot, their header line is fixed.

Exit codes: 0 success, 1 I/O or input parse failure, 2 invalid
configuration, 3 ground truth parse failure. Errors print one
machine-parseable line to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import statistics
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import (
    AppConfig,
    format_port_set,
    load_config,
    parse_thresholds,
)
from .core import ConfigError, SliceConfig, format_ip
from .detector import DetectorConfig, Direction, RatioVerdict, anomalous_ips
from .engine import EngineConfig, Mode, RunStats, run_batch, run_streaming
from .evaluation import (
    EvalCase,
    EvalRow,
    evaluate_case,
    trace_universe,
    write_report,
)
from .ingest import (
    FlowFileError,
    GroundTruthError,
    GroundTruthSet,
    SourceFile,
    read_flow_file,
    read_ground_truth,
)
from .rules import Classification, classify_all
from .synth import load_spec, write_outputs

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_GROUND_TRUTH = 3

VERDICT_HEADER = "slice_index,ip,direction,generated,received,ratio,labels"
BENCH_HEADER = (
    "workers,rep,wall_time_s,trace_duration_s,time_ratio,records_in,verdicts_out"
)
BENCH_SUMMARY_HEADER = "workers,min,q1,median,q3,max"


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except GroundTruthError as exc:
        return _fail(EXIT_GROUND_TRUTH, "ground-truth", exc)
    except (FlowFileError, OSError) as exc:
        return _fail(EXIT_IO, "io", exc)


def _fail(code: int, kind: str, exc: BaseException) -> int:
    detail = " ".join(str(exc).split())
    sys.stderr.write(f"flowscan: error kind={kind} exit={code} detail={detail}\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowscan",
        description="Flag scanning IPs from flow counts and score the results.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    detect_p = sub.add_parser("detect", help="flag anomalous IPs in a flow file")
    detect_p.add_argument("flows", help="flow file to analyze")
    detect_p.add_argument("-o", "--out", required=True, help="verdict file to write")
    _add_common_flags(detect_p)
    detect_p.add_argument("--threshold", type=float, help="ratio cut, must be > 0")
    detect_p.add_argument("--workers", type=int, help="worker processes for counting")
    detect_p.add_argument(
        "--mode", choices=[m.value for m in Mode], help="batch or stream execution"
    )
    detect_p.set_defaults(func=cmd_detect)

    eval_p = sub.add_parser("evaluate", help="score detections against ground truth")
    eval_p.add_argument(
        "--trace",
        action="append",
        required=True,
        metavar="FLOWS,ANOMALOUS_XML[,NOTICE_XML]",
        help="trace to evaluate; repeat for multi-trace aggregation",
    )
    eval_p.add_argument("-o", "--out", required=True, help="report file to write")
    _add_common_flags(eval_p)
    eval_p.add_argument(
        "--case", type=int, choices=[c.value for c in EvalCase], default=1
    )
    eval_p.add_argument(
        "--thresholds", help="comma-separated ratio cuts, e.g. 50,100,200"
    )
    eval_p.add_argument("--workers", type=int)
    eval_p.add_argument(
        "--directional",
        action="store_true",
        help="match verdict direction against ground truth src/dst sides",
    )
    eval_p.set_defaults(func=cmd_evaluate)

    bench_p = sub.add_parser("bench", help="time repeated detector runs")
    bench_p.add_argument("flows")
    bench_p.add_argument("-o", "--out", required=True, help="timing table to write")
    _add_common_flags(bench_p)
    bench_p.add_argument("--threshold", type=float)
    bench_p.add_argument(
        "--workers", default="1,2,4", help="comma-separated worker counts to sweep"
    )
    bench_p.add_argument("--reps", type=int, default=5, help="runs per worker count")
    bench_p.set_defaults(func=cmd_bench)

    synth_p = sub.add_parser("synth", help="generate a trace with known ground truth")
    synth_p.add_argument("spec", help="INI trace spec")
    synth_p.add_argument(
        "-o", "--out", required=True, help="output base path (suffixes are added)"
    )
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.set_defaults(func=cmd_synth)
    return parser


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file (else $FLOWSCAN_CONFIG)")
    parser.add_argument("--slice-seconds", type=float, dest="slice_seconds")
    parser.add_argument("--trace-start-us", type=int, dest="trace_start_us")
    parser.add_argument(
        "--strict",
        action="store_true",
        default=None,
        help="abort on the first malformed input line",
    )


def _resolve_config(args: argparse.Namespace) -> AppConfig:
    cfg = load_config(getattr(args, "config", None))
    changes: dict = {}
    for attr in ("threshold", "slice_seconds", "trace_start_us", "strict"):
        value = getattr(args, attr, None)
        if value is not None:
            changes[attr] = value
    workers = getattr(args, "workers", None)
    if isinstance(workers, int):
        changes["workers"] = workers
    mode = getattr(args, "mode", None)
    if mode is not None:
        changes["mode"] = Mode(mode)
    thresholds = getattr(args, "thresholds", None)
    if thresholds is not None:
        try:
            changes["thresholds"] = parse_thresholds(thresholds)
        except ValueError as exc:
            raise ConfigError(f"evaluation.thresholds: {exc}") from exc
    cfg = cfg.replace(**changes)
    cfg.validate()
    return cfg


def _config_snapshot(cfg: AppConfig) -> dict:
    return {
        "slice_seconds": cfg.slice_seconds,
        "trace_start_us": cfg.trace_start_us,
        "threshold": cfg.threshold,
        "thresholds": list(cfg.thresholds),
        "workers": cfg.workers,
        "mode": cfg.mode.value,
        "partitioning": cfg.partitioning.value,
        "watermark_lag_seconds": cfg.watermark_lag_seconds,
        "rules": {
            "netscan_min_hosts": cfg.rules.netscan_min_hosts,
            "portscan_min_ports": cfg.rules.portscan_min_ports,
            "combined_min_hosts": cfg.rules.combined_min_hosts,
            "subnet_prefix": cfg.rules.subnet_prefix,
            "known_ports": format_port_set(cfg.rules.known_ports),
        },
        "whitelist": sorted(cfg.whitelist),
        "exclude": sorted(cfg.exclude),
        "strict": cfg.strict,
    }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, timezone.utc).isoformat()


def manifest_path_for(out_path: str | Path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def _write_manifest(
    out_path: Path,
    command: str,
    snapshot: dict,
    inputs: Sequence[Path],
    outputs: Sequence[Path],
    started: float,
    extra: Optional[dict] = None,
) -> Path:
    doc = {
        "tool": "flowscan",
        "version": __version__,
        "command": command,
        "config": snapshot,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "started_at": _iso(started),
        "finished_at": _iso(time.time()),
    }
    if extra:
        doc.update(extra)
    path = manifest_path_for(out_path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _slice_config(cfg: AppConfig, flows: Sequence) -> SliceConfig:
    start = cfg.trace_start_us
    if start is None:
        start = min((f.first_seen_us for f in flows), default=0)
    return SliceConfig(trace_start_us=start, slice_seconds=cfg.slice_seconds)


def format_verdict_row(verdict: RatioVerdict, labels: str = "") -> str:
    return ",".join(
        (
            str(verdict.key.slice_index),
            format_ip(verdict.key.ip),
            verdict.direction.value,
            str(verdict.generated),
            str(verdict.received),
            repr(verdict.ratio),
            labels,
        )
    )


def _verdict_labels(
    verdicts: Sequence[RatioVerdict],
    classifications: dict,
) -> list[str]:
    rendered = []
    for verdict in verdicts:
        if verdict.direction is Direction.SENDER:
            cls: Optional[Classification] = classifications.get(verdict.key.ip)
            labels = ";".join(sorted(l.value for l in cls.labels)) if cls else ""
        else:
            labels = ""
        rendered.append(labels)
    return rendered


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    started = time.time()
    flow_path = Path(args.flows)
    out_path = Path(args.out)
    flows = list(read_flow_file(flow_path, strict=cfg.strict))
    slices = _slice_config(cfg, flows)
    detector_cfg = DetectorConfig(slices=slices, threshold=cfg.threshold)
    engine_cfg = EngineConfig(
        workers=cfg.workers,
        partitioning=cfg.partitioning,
        mode=cfg.mode,
        watermark_lag_seconds=cfg.watermark_lag_seconds,
    )
    if cfg.mode is Mode.STREAM:
        collected: list[RatioVerdict] = []

        def emit(_slice_index: int, emitted: list[RatioVerdict]) -> None:
            collected.extend(emitted)

        stats = run_streaming(iter(flows), detector_cfg, engine_cfg, emit)
        verdicts = collected
    else:
        verdicts, stats = run_batch(flows, detector_cfg, engine_cfg)

    sender_ips = {v.key.ip for v in verdicts if v.direction is Direction.SENDER}
    classifications = classify_all(sender_ips, flows, cfg.rules, slices)
    labels = _verdict_labels(verdicts, classifications)

    manifest_name = manifest_path_for(out_path).name
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# manifest={manifest_name}\n")
        fh.write(VERDICT_HEADER + "\n")
        for verdict, label_text in zip(verdicts, labels):
            fh.write(format_verdict_row(verdict, label_text) + "\n")
    _write_manifest(
        out_path,
        "detect",
        _config_snapshot(cfg),
        [flow_path],
        [out_path],
        started,
        extra={"stats": _stats_dict(stats)},
    )
    print(f"{len(verdicts)} verdicts from {stats.records_in} flows -> {out_path}")
    return EXIT_OK


def _stats_dict(stats: RunStats) -> dict:
    return {
        "wall_time_s": stats.wall_time_s,
        "trace_duration_s": stats.trace_duration_s,
        "time_ratio": stats.time_ratio,
        "records_in": stats.records_in,
        "verdicts_out": stats.verdicts_out,
        "late_dropped": stats.late_dropped,
    }


def _parse_trace_arg(raw: str) -> tuple[Path, Path, Optional[Path]]:
    parts = [Path(p) for p in raw.split(",") if p]
    if len(parts) not in (2, 3):
        raise ConfigError(
            f"--trace expects FLOWS,ANOMALOUS_XML[,NOTICE_XML], got {raw!r}"
        )
    flows, anomalous = parts[0], parts[1]
    notice = parts[2] if len(parts) == 3 else None
    return flows, anomalous, notice


def _trace_id(flow_path: Path) -> str:
    stem = flow_path.stem
    if stem.endswith(".flows"):
        stem = stem[: -len(".flows")]
    return stem


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    case = EvalCase(args.case)
    started = time.time()
    out_path = Path(args.out)
    traces = [_parse_trace_arg(raw) for raw in args.trace]

    rows: list[EvalRow] = []
    inputs: list[Path] = []
    for flow_path, anomalous_path, notice_path in traces:
        inputs.append(flow_path)
        inputs.append(anomalous_path)
        if notice_path is not None:
            inputs.append(notice_path)
        flows = list(read_flow_file(flow_path, strict=cfg.strict))
        gt = read_ground_truth(anomalous_path, notice_path, strict=cfg.strict)
        universe = trace_universe(flows)
        slices = _slice_config(cfg, flows)
        sources = [("anomalous", (SourceFile.ANOMALOUS,))]
        if notice_path is not None:
            sources.append(("notice", (SourceFile.NOTICE,)))
            sources.append(("total", (SourceFile.ANOMALOUS, SourceFile.NOTICE)))
        for threshold in cfg.thresholds:
            detector_cfg = DetectorConfig(slices=slices, threshold=threshold)
            engine_cfg = EngineConfig(
                workers=cfg.workers, partitioning=cfg.partitioning
            )
            verdicts, _stats = run_batch(flows, detector_cfg, engine_cfg)
            pairs = anomalous_ips(verdicts)
            detected = pairs if args.directional else {ip for ip, _ in pairs}
            for source_name, wanted in sources:
                sub_gt = GroundTruthSet(
                    [e for e in gt.entries if e.source_file in wanted]
                )
                result = evaluate_case(
                    case,
                    detected,
                    sub_gt,
                    flows=flows,
                    rule_cfg=cfg.rules,
                    slice_cfg=slices,
                    universe=universe,
                    whitelist=cfg.whitelist,
                    exclude=cfg.exclude,
                    directional=args.directional,
                )
                rows.append(
                    EvalRow(
                        trace_id=_trace_id(flow_path),
                        case=case,
                        threshold=threshold,
                        source=source_name,
                        result=result,
                    )
                )

    manifest_name = manifest_path_for(out_path).name
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        write_report(fh, rows, manifest_name=manifest_name)
    _write_manifest(
        out_path, "evaluate", _config_snapshot(cfg), inputs, [out_path], started
    )
    print(f"{len(rows)} report rows -> {out_path}")
    return EXIT_OK


def _parse_worker_sweep(raw: str) -> list[int]:
    try:
        workers = [int(chunk) for chunk in raw.split(",") if chunk.strip()]
    except ValueError as exc:
        raise ConfigError(f"engine.workers: {exc}") from exc
    if not workers or any(w < 1 for w in workers):
        raise ConfigError(f"engine.workers sweep must be counts >= 1, got {raw!r}")
    return workers


def _quartiles(values: list[float]) -> tuple[float, float, float, float, float]:
    if len(values) == 1:
        v = values[0]
        return v, v, v, v, v
    q1, median, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return min(values), q1, median, q3, max(values)


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if args.reps < 1:
        raise ConfigError(f"bench.reps must be >= 1, got {args.reps}")
    sweep = _parse_worker_sweep(args.workers)
    started = time.time()
    flow_path = Path(args.flows)
    out_path = Path(args.out)
    flows = list(read_flow_file(flow_path, strict=cfg.strict))
    slices = _slice_config(cfg, flows)
    detector_cfg = DetectorConfig(slices=slices, threshold=cfg.threshold)

    runs: list[tuple[int, int, RunStats]] = []
    for workers in sweep:
        engine_cfg = EngineConfig(workers=workers, partitioning=cfg.partitioning)
        for rep in range(1, args.reps + 1):
            _verdicts, stats = run_batch(flows, detector_cfg, engine_cfg)
            runs.append((workers, rep, stats))

    manifest_name = manifest_path_for(out_path).name
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# manifest={manifest_name}\n")
        fh.write(BENCH_HEADER + "\n")
        for workers, rep, stats in runs:
            fh.write(
                ",".join(
                    (
                        str(workers),
                        str(rep),
                        repr(stats.wall_time_s),
                        repr(stats.trace_duration_s),
                        repr(stats.time_ratio),
                        str(stats.records_in),
                        str(stats.verdicts_out),
                    )
                )
                + "\n"
            )
        fh.write("# summary\n")
        fh.write(BENCH_SUMMARY_HEADER + "\n")
        for workers in sweep:
            ratios = [s.time_ratio for w, _, s in runs if w == workers]
            low, q1, median, q3, high = _quartiles(ratios)
            fh.write(
                ",".join(
                    (str(workers), repr(low), repr(q1), repr(median), repr(q3), repr(high))
                )
                + "\n"
            )
    _write_manifest(
        out_path, "bench", _config_snapshot(cfg), [flow_path], [out_path], started
    )
    print(f"{len(runs)} timed runs over workers {sweep} -> {out_path}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.time()
    spec_path = Path(args.spec)
    out_base = Path(args.out)
    spec = load_spec(spec_path)
    manifest_name = manifest_path_for(out_base).name
    outputs = write_outputs(spec, args.seed, out_base, manifest_name=manifest_name)
    produced = [outputs.flow_path, outputs.anomalous_path, outputs.notice_path]
    _write_manifest(
        out_base,
        "synth",
        {"seed": args.seed},
        [spec_path],
        produced,
        started,
    )
    print(f"{outputs.flow_count} flows -> {outputs.flow_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
