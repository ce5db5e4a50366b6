"""Parsers for profiler output and the canonical trace file format.

Three inputs are understood:

* span traces in trace-event JSON (``traceEvents`` with ``X``/``B``/``E``
  phases, timestamps in microseconds), as exported by framework profilers;
* flat per-function profiles (cProfile ``pstats`` dumps, their printed
  text table, or a JSON list of rows);
* the canonical JSON trace written by :func:`emit_canonical`.

Every entry point accepts ``bytes``, ``str`` or a binary file object and
transparently decompresses gzip input.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
import marshal
import pstats
import re
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import IO, Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .calltree import find_partial_overlaps
from .errors import MalformedInput, NegativeTime, StrictModeUnknownField, UnmatchedSpan
from .trace import Device, Shapes, SourceFormat, TraceEvent, TraceSet, to_ns

logger = logging.getLogger(__name__)

Source = Union[bytes, bytearray, str, IO[bytes]]

DEFAULT_PROFILER_PREFIXES: Tuple[str, ...] = ("ProfilerStep", "profiler::")
SHAPE_KEYS: Tuple[str, ...] = ("Input Dims", "input_dims", "shapes")
GPU_CATEGORIES = frozenset({"kernel", "gpu_memcpy", "gpu_memset", "gpu_user_annotation", "cuda_kernel"})

FLAT_LANE = "main"

_CANONICAL_KEYS = ("name", "lane", "device", "start_ns", "dur_ns", "count", "shapes", "bytes")
_CANONICAL_EXTRA_KEYS = ("self_ns",)
_CANONICAL_TOP_KEYS = ("label", "wall_time_ns", "events")


def read_source(source: Source) -> bytes:
    """Return the raw bytes of ``source``, gunzipping when the magic matches."""
    if isinstance(source, str):
        data = source.encode("utf-8")
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise MalformedInput(f"corrupt gzip stream: {exc}") from exc
    return data


def is_internal(name: str, prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES) -> bool:
    return any(name.startswith(p) for p in prefixes)


def _load_json(data: bytes) -> Any:
    try:
        return json.loads(data.decode("utf-8"), parse_float=Decimal)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"not a JSON document: {exc}") from exc


# ---------------------------------------------------------------------------
# span traces


def _shapes_from_args(args: Dict[str, Any]) -> Optional[Shapes]:
    for key in SHAPE_KEYS:
        if key not in args:
            continue
        raw = args[key]
        if not isinstance(raw, list):
            return None
        shapes = []
        for dims in raw:
            if not isinstance(dims, list) or not all(
                isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in dims
            ):
                logger.debug("discarding unusable shape metadata %r", raw)
                return None
            shapes.append(tuple(dims))
        return tuple(shapes)
    return None


def _device_of(raw: Dict[str, Any]) -> Device:
    cat = str(raw.get("cat", "")).lower()
    if cat in GPU_CATEGORIES:
        return Device.GPU
    args = raw.get("args") or {}
    if isinstance(args, dict) and str(args.get("device_type", "")).lower() in ("cuda", "gpu"):
        return Device.GPU
    return Device.CPU


def _lane_of(raw: Dict[str, Any]) -> str:
    if "tid" not in raw:
        raise MalformedInput(f"event {raw.get('name')!r} has no 'tid'")
    tid = raw["tid"]
    return f"{raw['pid']}/{tid}" if "pid" in raw else str(tid)


def _require(raw: Dict[str, Any], *keys: str) -> None:
    for key in keys:
        if key not in raw:
            raise MalformedInput(f"trace event {raw.get('name', '?')!r} (ph={raw.get('ph')!r}) is missing {key!r}")


def _us(value: Any, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, Decimal, float)):
        raise MalformedInput(f"{what} must be a number, got {value!r}")
    return to_ns(value, 1000)


def parse_span_trace(
    source: Source,
    label: str,
    profiler_prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES,
) -> TraceSet:
    """Parse a trace-event JSON document into a :class:`TraceSet`.

    Complete (``X``) events become one event each; ``B``/``E`` pairs are
    matched per lane, innermost first, and merged into one span placed at the
    position of its ``B`` record. Other phases are ignored.
    """
    doc = _load_json(read_source(source))
    if isinstance(doc, dict):
        if "traceEvents" not in doc:
            raise MalformedInput("JSON object has no 'traceEvents' array")
        raw_events = doc["traceEvents"]
    else:
        raw_events = doc
    if not isinstance(raw_events, list):
        raise MalformedInput("trace events must be a JSON array")

    slots: List[Optional[TraceEvent]] = []
    open_spans: Dict[str, List[Tuple[int, Dict[str, Any], int]]] = {}

    def make(raw, lane, start, dur) -> TraceEvent:
        name = raw["name"]
        if not isinstance(name, str):
            raise MalformedInput(f"event name must be a string, got {name!r}")
        args = raw.get("args") or {}
        if not isinstance(args, dict):
            args = {}
        nbytes = args.get("bytes")
        return TraceEvent(
            name=name,
            lane_id=lane,
            device=_device_of(raw),
            start_ns=start,
            duration_ns=dur,
            shapes=_shapes_from_args(args),
            bytes_moved=nbytes if isinstance(nbytes, int) and not isinstance(nbytes, bool) else None,
            internal=is_internal(name, profiler_prefixes),
        )

    for raw in raw_events:
        if not isinstance(raw, dict):
            raise MalformedInput(f"trace event must be an object, got {raw!r}")
        ph = raw.get("ph")
        if ph == "X":
            _require(raw, "name", "ts", "dur")
            lane = _lane_of(raw)
            slots.append(make(raw, lane, _us(raw["ts"], "ts"), _us(raw["dur"], "dur")))
        elif ph == "B":
            _require(raw, "name", "ts")
            lane = _lane_of(raw)
            open_spans.setdefault(lane, []).append((len(slots), raw, _us(raw["ts"], "ts")))
            slots.append(None)
        elif ph == "E":
            _require(raw, "ts")
            lane = _lane_of(raw)
            stack = open_spans.get(lane)
            if not stack:
                raise UnmatchedSpan(lane, str(raw.get("name", "?")), "end without begin")
            slot, begin, start = stack.pop()
            end = _us(raw["ts"], "ts")
            if end < start:
                raise MalformedInput(f"span {begin['name']!r} on lane {lane!r} ends before it begins")
            slots[slot] = make(begin, lane, start, end - start)

    for lane, stack in open_spans.items():
        if stack:
            raise UnmatchedSpan(lane, str(stack[-1][1]["name"]))

    events = tuple(slots)  # every slot is filled once all stacks are empty
    wall = None
    if events:
        wall = max(e.end_ns for e in events) - min(e.start_ns for e in events)
    trace = TraceSet(events, label, wall, SourceFormat.CHROME_SPANS)
    for lane, a, b in find_partial_overlaps(trace):
        logger.warning(
            "lane %s: %r [%d, %d) and %r [%d, %d) overlap without nesting",
            lane, a.name, a.start_ns, a.end_ns, b.name, b.start_ns, b.end_ns,
        )
    return trace


# ---------------------------------------------------------------------------
# flat profiles


@dataclass(frozen=True)
class FlatProfileEntry:
    name: str
    call_count: int
    self_ns: int
    total_ns: int

    def check(self) -> None:
        if self.self_ns < 0 or self.total_ns < 0:
            raise NegativeTime(f"{self.name!r}: negative time (self={self.self_ns}, total={self.total_ns})")
        if self.total_ns < self.self_ns:
            raise NegativeTime(
                f"{self.name!r}: total time {self.total_ns} ns is less than self time {self.self_ns} ns"
            )
        if self.call_count < 1:
            raise MalformedInput(f"{self.name!r}: call count must be >= 1, got {self.call_count}")


_TABLE_HEADER = re.compile(r"^\s*ncalls\s+tottime\s+percall\s+cumtime\s+percall\s+filename:lineno\(function\)\s*$")
_TABLE_ROW = re.compile(
    r"^\s*(?P<ncalls>\d+(?:/\d+)?)\s+(?P<tottime>\S+)\s+(?P<p1>\S+)\s+(?P<cumtime>\S+)\s+(?P<p2>\S+)\s+(?P<name>.+?)\s*$"
)
_TOTAL_LINE = re.compile(r"function calls.*\bin\s+(?P<secs>[0-9.]+)\s+seconds")


def _seconds(text: str, name: str) -> int:
    try:
        return to_ns(Decimal(text), 10**9)
    except ArithmeticError as exc:
        raise MalformedInput(f"{name!r}: bad time value {text!r}") from exc


def _entries_from_table(text: str) -> Tuple[List[FlatProfileEntry], Optional[int]]:
    entries: List[FlatProfileEntry] = []
    wall = None
    in_table = False
    for lineno, line in enumerate(text.splitlines(), 1):
        if not in_table:
            m = _TOTAL_LINE.search(line)
            if m:
                wall = _seconds(m.group("secs"), "<total>")
            if _TABLE_HEADER.match(line):
                in_table = True
            continue
        if not line.strip():
            continue
        m = _TABLE_ROW.match(line)
        if not m:
            raise MalformedInput(f"line {lineno}: not a profile row: {line!r}")
        name = m.group("name")
        ncalls = int(m.group("ncalls").split("/")[0])
        entries.append(FlatProfileEntry(name, ncalls, _seconds(m.group("tottime"), name), _seconds(m.group("cumtime"), name)))
    if not in_table:
        raise MalformedInput("no 'ncalls tottime percall cumtime percall filename:lineno(function)' header found")
    return entries, wall


def _entries_from_json(doc: Any) -> List[FlatProfileEntry]:
    if not isinstance(doc, list):
        raise MalformedInput("flat profile JSON must be a list of rows")
    out = []
    for row in doc:
        if not isinstance(row, dict):
            raise MalformedInput(f"flat profile row must be an object, got {row!r}")
        try:
            name, count, self_ns, total_ns = row["name"], row["count"], row["self_ns"], row["total_ns"]
        except KeyError as exc:
            raise MalformedInput(f"flat profile row is missing {exc.args[0]!r}") from None
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (count, self_ns, total_ns)):
            raise MalformedInput(f"flat profile row {name!r}: count/self_ns/total_ns must be integers")
        out.append(FlatProfileEntry(str(name), count, self_ns, total_ns))
    return out


def _entries_from_marshal(data: bytes) -> List[FlatProfileEntry]:
    try:
        stats = marshal.loads(data)
    except (EOFError, ValueError, TypeError) as exc:
        raise MalformedInput(f"unrecognised flat profile: {exc}") from exc
    if not isinstance(stats, dict):
        raise MalformedInput("statistics dump is not a mapping")
    out = []
    for func, row in stats.items():
        try:
            _cc, nc, tt, ct, _callers = row
            name = pstats.func_std_string(func)
        except (TypeError, ValueError) as exc:
            raise MalformedInput(f"bad statistics row for {func!r}") from exc
        out.append(FlatProfileEntry(name, nc, to_ns(tt, 10**9), to_ns(ct, 10**9)))
    return out


def flat_entries(source: Source) -> Tuple[List[FlatProfileEntry], Optional[int]]:
    """Read flat-profile rows plus the profiled wall time when the input states it."""
    data = read_source(source)
    head = data.lstrip()[:1]
    if head == b"[":
        return _entries_from_json(_load_json(data)), None
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        text = None
    if text is not None and any(_TABLE_HEADER.match(l) for l in text.splitlines()):
        return _entries_from_table(text)
    return _entries_from_marshal(data), None


def parse_flat_profile(
    source: Source,
    label: str,
    profiler_prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES,
) -> TraceSet:
    """Turn a per-function profile into a trace of unstructured rows.

    Every row becomes one CPU event at ``start_ns=0`` whose duration is the
    row's total time; the row's own self time travels in ``self_ns``.
    """
    entries, wall = flat_entries(source)
    events = []
    for entry in entries:
        entry.check()
        events.append(
            TraceEvent(
                name=entry.name,
                lane_id=FLAT_LANE,
                device=Device.CPU,
                start_ns=0,
                duration_ns=entry.total_ns,
                call_count=entry.call_count,
                self_ns=entry.self_ns,
                internal=is_internal(entry.name, profiler_prefixes),
            )
        )
    return TraceSet(tuple(events), label, wall, SourceFormat.FLAT_PROFILE)


def format_flat_table(entries: Iterable[FlatProfileEntry], wall_ns: Optional[int] = None) -> str:
    """Render rows as a cProfile-style text table with microsecond precision."""
    entries = list(entries)
    calls = sum(e.call_count for e in entries)
    secs = wall_ns if wall_ns is not None else sum(e.self_ns for e in entries)
    lines = [
        f"         {calls} function calls in {secs / 1e9:.9f} seconds",
        "",
        "   Ordered by: internal time",
        "",
        "   ncalls    tottime    percall    cumtime    percall filename:lineno(function)",
    ]
    for e in entries:
        lines.append(
            f"{e.call_count:>9} {_fmt_s(e.self_ns):>10} {_fmt_s(e.self_ns // e.call_count):>10} "
            f"{_fmt_s(e.total_ns):>10} {_fmt_s(e.total_ns // e.call_count):>10} {e.name}"
        )
    return "\n".join(lines) + "\n"


def _fmt_s(ns: int) -> str:
    return f"{ns // 10**9}.{ns % 10**9:09d}"


# ---------------------------------------------------------------------------
# canonical format


def _int_or_none(ev: Dict[str, Any], key: str, idx: int) -> Optional[int]:
    value = ev.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedInput(f"event {idx}: {key!r} must be an integer or null, got {value!r}")
    return value


def parse_canonical(
    source: Source,
    strict: bool = False,
    profiler_prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES,
) -> TraceSet:
    """Read a canonical trace file.

    Only the structure and JSON types are checked here; value invariants
    (non-negative durations and so on) are reported by :func:`nsprof.trace.validate`.
    Unknown fields raise :class:`StrictModeUnknownField` when ``strict``,
    otherwise they are dropped with a warning.
    """
    doc = _load_json(read_source(source))
    if not isinstance(doc, dict):
        raise MalformedInput("canonical trace must be a JSON object")

    def unknown(keys, where):
        if not keys:
            return
        msg = f"{where}: unknown field(s) {sorted(keys)}"
        if strict:
            raise StrictModeUnknownField(msg)
        logger.warning(msg)

    unknown(set(doc) - set(_CANONICAL_TOP_KEYS), "trace")
    for key in ("label", "events"):
        if key not in doc:
            raise MalformedInput(f"canonical trace is missing {key!r}")
    label = doc["label"]
    if not isinstance(label, str):
        raise MalformedInput("'label' must be a string")
    wall = _int_or_none(doc, "wall_time_ns", -1)
    if not isinstance(doc["events"], list):
        raise MalformedInput("'events' must be an array")

    events = []
    for idx, ev in enumerate(doc["events"]):
        if not isinstance(ev, dict):
            raise MalformedInput(f"event {idx} must be an object")
        unknown(set(ev) - set(_CANONICAL_KEYS) - set(_CANONICAL_EXTRA_KEYS), f"event {idx}")
        for key in ("name", "lane", "device", "start_ns", "dur_ns"):
            if key not in ev:
                raise MalformedInput(f"event {idx} is missing {key!r}")
        name, lane = ev["name"], ev["lane"]
        if not isinstance(name, str) or not isinstance(lane, str):
            raise MalformedInput(f"event {idx}: 'name' and 'lane' must be strings")
        try:
            device = Device(ev["device"])
        except ValueError:
            raise MalformedInput(f"event {idx}: device must be 'cpu' or 'gpu', got {ev['device']!r}") from None
        start = _int_or_none(ev, "start_ns", idx)
        dur = _int_or_none(ev, "dur_ns", idx)
        if start is None or dur is None:
            raise MalformedInput(f"event {idx}: start_ns and dur_ns are required integers")
        count = _int_or_none(ev, "count", idx)
        raw_shapes = ev.get("shapes")
        shapes = None
        if raw_shapes is not None:
            if not isinstance(raw_shapes, list) or not all(isinstance(s, list) for s in raw_shapes):
                raise MalformedInput(f"event {idx}: 'shapes' must be a list of lists or null")
            for s in raw_shapes:
                if not all(isinstance(d, int) and not isinstance(d, bool) for d in s):
                    raise MalformedInput(f"event {idx}: shape dimensions must be integers")
            shapes = tuple(tuple(s) for s in raw_shapes)
        events.append(
            TraceEvent(
                name=name,
                lane_id=lane,
                device=device,
                start_ns=start,
                duration_ns=dur,
                call_count=1 if count is None else count,
                shapes=shapes,
                bytes_moved=_int_or_none(ev, "bytes", idx),
                self_ns=_int_or_none(ev, "self_ns", idx),
                internal=is_internal(name, profiler_prefixes),
            )
        )
    flat = bool(events) and all(e.self_ns is not None for e in events)
    fmt = SourceFormat.FLAT_PROFILE if flat else SourceFormat.CANONICAL
    return TraceSet(tuple(events), label, wall, fmt)


def _event_json(ev: TraceEvent) -> Dict[str, Any]:
    out = {
        "name": ev.name,
        "lane": ev.lane_id,
        "device": ev.device.value,
        "start_ns": ev.start_ns,
        "dur_ns": ev.duration_ns,
        "count": ev.call_count,
        "shapes": None if ev.shapes is None else [list(s) for s in ev.shapes],
        "bytes": ev.bytes_moved,
    }
    if ev.self_ns is not None:
        out["self_ns"] = ev.self_ns
    return out


def emit_canonical(trace: TraceSet) -> bytes:
    """Serialise ``trace`` deterministically, one event per line."""
    head = json.dumps({"label": trace.label, "wall_time_ns": trace.wall_time_ns}, ensure_ascii=False)
    buf = io.StringIO()
    buf.write(head[:-1])
    if not trace.events:
        buf.write(', "events": []}\n')
        return buf.getvalue().encode("utf-8")
    buf.write(', "events": [\n')
    body = ",\n".join(json.dumps(_event_json(e), ensure_ascii=False) for e in trace.events)
    buf.write(body)
    buf.write("\n]}\n")
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# convenience


FORMATS = ("span", "flat", "canonical")


def guess_format(path: Union[str, Path]) -> str:
    """Pick a parser from the file name, falling back to content sniffing."""
    p = Path(path)
    suffixes = [s.lower() for s in p.suffixes if s.lower() != ".gz"]
    if suffixes and suffixes[-1] in (".prof", ".pstats", ".txt"):
        return "flat"
    data = read_source(p.read_bytes())
    if data.lstrip()[:1] != b"{" and data.lstrip()[:1] != b"[":
        return "flat"
    try:
        doc = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError):
        return "flat"
    if isinstance(doc, dict) and "traceEvents" in doc:
        return "span"
    if isinstance(doc, list):
        return "span" if doc and isinstance(doc[0], dict) and "ph" in doc[0] else "flat"
    return "canonical"


def load(
    path: Union[str, Path],
    fmt: Optional[str] = None,
    label: Optional[str] = None,
    strict: bool = False,
    profiler_prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES,
) -> TraceSet:
    """Parse a trace file; the label defaults to the file name without suffixes."""
    p = Path(path)
    fmt = fmt or guess_format(p)
    default_label = p.name.split(".")[0] or p.name
    with open(p, "rb") as fh:
        if fmt == "span":
            return parse_span_trace(fh, label or default_label, profiler_prefixes)
        if fmt == "flat":
            return parse_flat_profile(fh, label or default_label, profiler_prefixes)
        if fmt == "canonical":
            trace = parse_canonical(fh, strict, profiler_prefixes)
            if label:
                trace = TraceSet(trace.events, label, trace.wall_time_ns, trace.source_format)
            return trace
    raise ValueError(f"unknown trace format {fmt!r}; expected one of {FORMATS}")
