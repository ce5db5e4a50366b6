"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 rule/taxonomy error, 64 usage error.
Data goes to standard output (or ``-o``); diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, TextIO

from . import intensity as _intensity
from . import report as _report
from .compensate import parse_duration
from .errors import InputError, NsprofError, TaxonomyError, ZeroWallTime
from .ingest import DEFAULT_PROFILER_PREFIXES, FORMATS, emit_canonical, load
from .pipeline import Analysis, analyze
from .taxonomy import RULES_ENV, classify, resolve_rules
from .calltree import OpRecord
from .trace import Device, TraceSet, validate

EXIT_OK, EXIT_INPUT, EXIT_TAXONOMY, EXIT_USAGE = 0, 2, 3, 64
TRACE_SUFFIXES = (".json", ".prof", ".pstats", ".txt")

logger = logging.getLogger("nsprof")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    inputs: List[Path]
    input_format: Optional[str] = None
    rules: Optional[str] = None
    baseline_wall_ns: Optional[int] = None
    bytes_per_element: int = _intensity.DEFAULT_BYTES_PER_ELEMENT
    machine_balance: Optional[float] = None
    output_format: str = "table"
    output: Optional[Path] = None
    strict: bool = False
    per_device: bool = False
    clip: bool = False
    raw: bool = False
    multiplier: int = 1
    stamp: bool = False
    show_intensity: bool = False
    profiler_prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES
    svg_width: int = 800
    svg_height: int = 420
    colors: Sequence[str] = field(default_factory=lambda: list(_report.PALETTE))


def expand_inputs(paths: Sequence[Path]) -> List[Path]:
    """Files as given; directories become their trace files in name order."""
    out = []
    for p in paths:
        if p.is_dir():
            found = sorted(
                f for f in p.iterdir()
                if f.is_file() and any(f.name.endswith(s) or f.name.endswith(s + ".gz") for s in TRACE_SUFFIXES)
            )
            if not found:
                raise InputError(f"{p}: no trace files found")
            out.extend(found)
        elif p.exists():
            out.append(p)
        else:
            raise InputError(f"{p}: no such file")
    return out


def _read_trace(path: Path, cfg: RunConfig) -> TraceSet:
    trace = load(path, cfg.input_format, strict=cfg.strict, profiler_prefixes=cfg.profiler_prefixes)
    problems = validate(trace)
    if problems:
        shown = "; ".join(str(v) for v in problems[:5])
        raise InputError(f"{path}: {len(problems)} invariant violation(s): {shown}")
    return trace


def _analyses(cfg: RunConfig, err: TextIO) -> List[Analysis]:
    rules = resolve_rules(cfg.rules)
    paths = expand_inputs(cfg.inputs)

    def one(path: Path) -> Analysis:
        trace = _read_trace(path, cfg)
        return analyze(
            trace, rules, clip=cfg.clip, baseline_wall_ns=cfg.baseline_wall_ns,
            profiler_prefixes=cfg.profiler_prefixes, raw=cfg.raw,
        )

    if len(paths) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(paths))) as pool:
            results = list(pool.map(one, paths))
    else:
        results = [one(p) for p in paths]

    for a in results:
        for lane in a.conservation:
            verdict = "ok" if lane.ok else "MISMATCH"
            err.write(f"[{a.label}] lane {lane.lane_id}: sum(self)={lane.self_sum_ns} ns, "
                      f"sum(roots)={lane.root_sum_ns} ns {verdict}\n")
        if a.clipped_ns:
            err.write(f"[{a.label}] clipped {a.clipped_ns} ns from partially overlapping spans\n")
        if a.stripped_ns:
            err.write(f"[{a.label}] removed {a.stripped_ns} ns of profiler bookkeeping\n")
        if a.compensation is not None:
            flag = " (baseline slower than profiled run)" if a.compensation.flagged else ""
            err.write(f"[{a.label}] compensation scale {a.compensation.scale}{flag}\n")
        err.write(f"[{a.label}] {a.unmatched.summary()}\n")
    return results


def _breakdowns(results: Sequence[Analysis], cfg: RunConfig) -> List[_report.Breakdown]:
    out = []
    for a in results:
        if cfg.per_device:
            for dev, b in a.per_device.items():
                out.append(b.relabel(f"{a.label} [{dev.value}]"))
        else:
            out.append(a.breakdown)
    if cfg.multiplier != 1:
        out = [_report.scale_to_pipeline(b, cfg.multiplier) for b in out]
    return out


def _stamp_text(fmt: str) -> str:
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return f"<!-- generated {now} -->\n" if fmt == "svg" else f"# generated {now}\n"


def _write(data: bytes, cfg: RunConfig, out: TextIO) -> None:
    if cfg.stamp and cfg.output_format in ("table", "svg"):
        data += _stamp_text(cfg.output_format).encode("utf-8")
    if cfg.output is not None:
        cfg.output.write_bytes(data)
    else:
        out.buffer.write(data) if hasattr(out, "buffer") else out.write(data.decode("utf-8"))
        out.flush()


def _intensity_summary(results: Sequence[Analysis], cfg: RunConfig, err: TextIO) -> None:
    rules = resolve_rules(cfg.rules)
    machine = _intensity.MachineModel.from_balance(cfg.machine_balance) if cfg.machine_balance else None
    for a in results:
        seen = set()
        for r in a.records:
            key = (r.name, r.shapes)
            if r.shapes is None or key in seen:
                continue
            seen.add(key)
            rule = rules.match(r)
            c = rule.ops_per_element if rule is not None else 1
            est = _intensity.estimate_record(r, cfg.bytes_per_element, machine, c)
            if est is None:
                continue
            bound = f" {est.bound.value}" if est.bound else ""
            ts = " tall-skinny" if est.tall_skinny else ""
            err.write(f"[{a.label}] {r.name} {[list(s) for s in r.shapes]}: W={est.work_flops} "
                      f"Q={est.traffic_bytes} I={float(est.intensity):.4g}{ts}{bound}\n")


def cmd_report(cfg: RunConfig, out: TextIO = sys.stdout, err: TextIO = sys.stderr, kind: str = "report") -> int:
    results = _analyses(cfg, err)
    items = _breakdowns(results, cfg)
    if cfg.show_intensity:
        _intensity_summary(results, cfg, err)
    fmt = cfg.output_format
    svg = dict(width=cfg.svg_width, height=cfg.svg_height, colors=cfg.colors)
    if kind == "heatmap":
        if fmt == "table":
            fmt = cfg.output_format = "csv"
        data = _report.emit(_report.heatmap(items), fmt, **svg)
    elif fmt == "table":
        data = _report.format_table(items).encode("utf-8")
    else:
        data = _report.emit(items, fmt, **svg)
    _write(data, cfg, out)
    return EXIT_OK


def cmd_diff(cfg: RunConfig, out: TextIO = sys.stdout, err: TextIO = sys.stderr) -> int:
    results = _analyses(cfg, err)
    items = _breakdowns(results, cfg)
    if len(items) != 2:
        raise UsageError(f"diff needs exactly two inputs, got {len(items)}")
    a, b = items
    delta = _report.diff(a, b)
    fmt = cfg.output_format
    if fmt == "json":
        payload = {
            "a": a.label, "b": b.label,
            "deltas": {c: {"delta_ns": d, "delta_share": float(f)} for c, (d, f) in delta.items()},
        }
        data = (json.dumps(payload, indent=2) + "\n").encode("utf-8")
    elif fmt == "csv":
        data = _report._csv_bytes(_report.diff_rows(a, b))
    elif fmt == "table":
        rows = [f"{a.label} - {b.label}"]
        for c, (d, f) in delta.items():
            rows.append(f"  {c:<20} {_report.format_duration(d):>10}  {float(f) * 100:+8.2f} pp")
        data = ("\n".join(rows) + "\n").encode("utf-8")
    else:
        raise UsageError(f"diff cannot be written as {fmt}")
    _write(data, cfg, out)
    return EXIT_OK


def cmd_convert(cfg: RunConfig, out: TextIO = sys.stdout, err: TextIO = sys.stderr, label: Optional[str] = None) -> int:
    if len(cfg.inputs) != 1:
        raise UsageError("convert takes exactly one input file")
    path = cfg.inputs[0]
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    trace = load(path, cfg.input_format, label=label, strict=cfg.strict, profiler_prefixes=cfg.profiler_prefixes)
    problems = validate(trace)
    if problems:
        raise InputError(f"{path}: " + "; ".join(str(v) for v in problems[:5]))
    err.write(f"[{trace.label}] {len(trace.events)} event(s) on {len(trace.lanes())} lane(s)\n")
    _write(emit_canonical(trace), cfg, out)
    return EXIT_OK


def cmd_intensity(m: int, k: int, n: int, bytes_per_element: int = 4, balance: Optional[float] = None,
                  threshold: float = _intensity.DEFAULT_TALL_SKINNY_RATIO, out: TextIO = sys.stdout) -> int:
    try:
        dims = _intensity.GemmDims(m, k, n)
        est = _intensity.gemm_intensity(dims, bytes_per_element, threshold)
        if balance is not None:
            machine = _intensity.MachineModel.from_balance(balance)
            est = _intensity.IntensityEstimate(est.work_flops, est.traffic_bytes, est.intensity,
                                               est.tall_skinny, est.kind, _intensity.boundedness(est, machine))
    except (ValueError, OverflowError) as exc:
        raise UsageError(str(exc)) from None
    out.write(f"gemm      m={m} k={k} n={n} bytes/element={bytes_per_element}\n")
    for line in _intensity.describe(est):
        out.write(line + "\n")
    return EXIT_OK


def cmd_rules_check(source: Optional[str], names: Sequence[str], out: TextIO = sys.stdout) -> int:
    rules = resolve_rules(source)
    cats = ", ".join(rules.categories)
    out.write(f"taxonomy {rules.taxonomy_name}: {len(rules.categories)} categories ({cats}), {len(rules.rules)} rules\n")
    for name in names:
        cat = classify(OpRecord(name, Device.CPU, "-", 0, 0), rules)
        out.write(f"{name}\t{cat.category_name}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _duration(text: str) -> int:
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser, default_output: str, output_choices: Sequence[str]) -> None:
    p.add_argument("inputs", nargs="+", type=Path, help="trace files or directories of trace files")
    p.add_argument("--format", dest="input_format", choices=FORMATS, help="input format (default: by file name/content)")
    p.add_argument("--rules", help=f"rule file or builtin:ml8 / builtin:symbolic (default: ${RULES_ENV} or builtin:ml8)")
    p.add_argument("--strict", action="store_true", help="reject unknown fields in canonical traces")
    p.add_argument("--clip", action="store_true", help="truncate partially overlapping spans instead of failing")
    p.add_argument("--baseline-wall", type=_duration, help="wall time of an unprofiled run, e.g. 90ms, 1.5s, 123456")
    p.add_argument("--raw", action="store_true", help="report measured times even when --baseline-wall is given")
    p.add_argument("--per-device", action="store_true", help="split every breakdown into CPU and GPU rows")
    p.add_argument("--profiler-prefix", action="append", dest="profiler_prefixes",
                   help="name prefix of profiler bookkeeping events (repeatable)")
    p.add_argument("--output-format", default=default_output, choices=output_choices)
    p.add_argument("-o", "--output", type=Path, help="write to this file instead of standard output")
    p.add_argument("--stamp", action="store_true", help="append a generation timestamp (table and svg output)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nsprof", description="Classify profiler traces into per-category runtime breakdowns.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help="convert a profiler export to a canonical trace")
    p.add_argument("inputs", nargs=1, type=Path)
    p.add_argument("--format", dest="input_format", choices=FORMATS)
    p.add_argument("--label")
    p.add_argument("--strict", action="store_true")
    p.add_argument("-o", "--output", type=Path)

    for name, default, choices, help_ in (
        ("report", "table", ("table", "csv", "json", "svg"), "per-category runtime breakdowns"),
        ("heatmap", "csv", ("csv", "json", "svg"), "per-model category proportions"),
        ("diff", "table", ("table", "csv", "json"), "difference between two breakdowns"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p, default, choices)
        if name != "diff":
            p.add_argument("--scale", type=_positive_int, default=1, dest="multiplier",
                           help="multiply every breakdown, e.g. 25 frames per video")
        if name == "report":
            p.add_argument("--intensity", action="store_true", dest="show_intensity",
                           help="print operational intensity of shaped DenseMM/ElementWise ops to stderr")
            p.add_argument("--bytes", type=int, default=4, choices=_intensity.ELEMENT_SIZES, dest="bytes_per_element")
            p.add_argument("--balance", type=float, help="machine balance in FLOP/byte")
        if name != "diff":
            p.add_argument("--svg-width", type=_positive_int, default=800)
            p.add_argument("--svg-height", type=_positive_int, default=420)
            p.add_argument("--colors", help="comma-separated SVG colours, one per category")

    p = sub.add_parser("intensity", help="operational intensity of one GEMM")
    p.add_argument("--m", type=_positive_int, required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--bytes", type=int, default=4, choices=_intensity.ELEMENT_SIZES)
    p.add_argument("--balance", type=float, help="machine balance in FLOP/byte")
    p.add_argument("--threshold", type=float, default=_intensity.DEFAULT_TALL_SKINNY_RATIO,
                   help="max/min dimension ratio that counts as tall-and-skinny")

    p = sub.add_parser("rules", help="rule-file utilities")
    rsub = p.add_subparsers(dest="rules_command", required=True, parser_class=_Parser)
    c = rsub.add_parser("check", help="load and validate a rule file")
    c.add_argument("source", nargs="?", help="rule file or builtin:<name>")
    c.add_argument("--name", action="append", default=[], help="also classify this operation name")
    return parser


def _config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(inputs=list(ns.inputs))
    for key in ("input_format", "rules", "strict", "clip", "raw", "per_device", "output_format", "output",
                "stamp", "multiplier", "show_intensity", "bytes_per_element", "svg_width", "svg_height"):
        if hasattr(ns, key):
            setattr(cfg, key, getattr(ns, key))
    cfg.baseline_wall_ns = getattr(ns, "baseline_wall", None)
    cfg.machine_balance = getattr(ns, "balance", None)
    if getattr(ns, "profiler_prefixes", None):
        cfg.profiler_prefixes = tuple(ns.profiler_prefixes)
    if getattr(ns, "colors", None):
        cfg.colors = [c.strip() for c in ns.colors.split(",") if c.strip()]
    return cfg


def main(argv: Optional[Sequence[str]] = None, out: TextIO = None, err: TextIO = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        ns = build_parser().parse_args(argv)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE

    handler = logging.StreamHandler(err)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("nsprof")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if ns.verbose else logging.WARNING)
    root.propagate = False

    try:
        if ns.command == "intensity":
            return cmd_intensity(ns.m, ns.k, ns.n, ns.bytes, ns.balance, ns.threshold, out)
        if ns.command == "rules":
            return cmd_rules_check(ns.source, ns.name, out)
        cfg = _config(ns)
        if ns.command == "convert":
            return cmd_convert(cfg, out, err, label=ns.label)
        if ns.command == "diff":
            return cmd_diff(cfg, out, err)
        return cmd_report(cfg, out, err, kind=ns.command)
    except UsageError as exc:
        err.write(f"nsprof: {exc}\n")
        return EXIT_USAGE
    except TaxonomyError as exc:
        err.write(f"nsprof: rules: {exc}\n")
        return EXIT_TAXONOMY
    except (InputError, ZeroWallTime) as exc:
        err.write(f"nsprof: input: {exc}\n")
        return EXIT_INPUT
    except (NsprofError, ValueError, OSError) as exc:
        err.write(f"nsprof: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
