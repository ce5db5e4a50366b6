"""In-memory trace model: timed events grouped into one profiled run."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import List, Optional, Tuple

INT64_MAX = 2**63 - 1

Shapes = Tuple[Tuple[int, ...], ...]


class Device(str, enum.Enum):
    CPU = "cpu"
    GPU = "gpu"


class SourceFormat(enum.Enum):
    CHROME_SPANS = "chrome_spans"
    FLAT_PROFILE = "flat_profile"
    CANONICAL = "canonical"


@dataclass(frozen=True)
class TraceEvent:
    """One timed span, or one function row of a flat profile.

    ``self_ns`` is only set for flat-profile rows, which carry their own
    self time instead of a reconstructable call structure.
    ``internal`` marks profiler bookkeeping events; it is derived from the
    name at parse time and does not take part in equality.
    """

    name: str
    lane_id: str
    device: Device
    start_ns: int
    duration_ns: int
    call_count: int = 1
    shapes: Optional[Shapes] = None
    bytes_moved: Optional[int] = None
    self_ns: Optional[int] = None
    internal: bool = field(default=False, compare=False)

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.duration_ns


@dataclass(frozen=True)
class TraceSet:
    events: Tuple[TraceEvent, ...]
    label: str
    wall_time_ns: Optional[int] = None
    source_format: SourceFormat = SourceFormat.CANONICAL

    def __post_init__(self):
        if not isinstance(self.events, tuple):
            object.__setattr__(self, "events", tuple(self.events))

    def lanes(self) -> List[str]:
        """Lane ids in order of first appearance."""
        return list(dict.fromkeys(e.lane_id for e in self.events))


@dataclass(frozen=True)
class Violation:
    index: Optional[int]  # None for set-level problems
    field: str
    message: str

    def __str__(self) -> str:
        where = "trace" if self.index is None else f"event {self.index}"
        return f"{where}: {self.field}: {self.message}"


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate(trace: TraceSet) -> List[Violation]:
    """Return every invariant violation in ``trace``; empty iff well formed."""
    out: List[Violation] = []
    if not isinstance(trace.label, str) or not trace.label:
        out.append(Violation(None, "label", "label must be a non-empty string"))
    if trace.wall_time_ns is not None:
        if not _is_int(trace.wall_time_ns) or trace.wall_time_ns < 0:
            out.append(Violation(None, "wall_time_ns", f"must be a non-negative integer, got {trace.wall_time_ns!r}"))

    for i, ev in enumerate(trace.events):
        if not isinstance(ev.name, str):
            out.append(Violation(i, "name", "name must be a string"))
        if not isinstance(ev.lane_id, str):
            out.append(Violation(i, "lane_id", "lane id must be a string"))
        if not isinstance(ev.device, Device):
            out.append(Violation(i, "device", f"unknown device {ev.device!r}"))
        start_ok = _is_int(ev.start_ns)
        if not start_ok:
            out.append(Violation(i, "start_ns", f"must be an integer, got {ev.start_ns!r}"))
        if not _is_int(ev.duration_ns) or ev.duration_ns < 0:
            out.append(Violation(i, "duration_ns", f"must be a non-negative integer, got {ev.duration_ns!r}"))
        elif start_ok and not (-INT64_MAX - 1 <= ev.start_ns and ev.start_ns + ev.duration_ns <= INT64_MAX):
            out.append(Violation(i, "duration_ns", "start_ns + duration_ns overflows a signed 64-bit count"))
        if not _is_int(ev.call_count) or ev.call_count < 1:
            out.append(Violation(i, "call_count", f"must be >= 1, got {ev.call_count!r}"))
        if ev.shapes is not None:
            for shape in ev.shapes:
                if not all(_is_int(d) and d >= 1 for d in shape):
                    out.append(Violation(i, "shapes", f"dimensions must be positive integers, got {list(shape)}"))
                    break
        if ev.bytes_moved is not None and (not _is_int(ev.bytes_moved) or ev.bytes_moved < 0):
            out.append(Violation(i, "bytes_moved", f"must be a non-negative integer, got {ev.bytes_moved!r}"))
        if ev.self_ns is not None:
            if not _is_int(ev.self_ns) or ev.self_ns < 0:
                out.append(Violation(i, "self_ns", f"must be a non-negative integer, got {ev.self_ns!r}"))
            elif _is_int(ev.duration_ns) and ev.self_ns > ev.duration_ns:
                out.append(Violation(i, "self_ns", "self time exceeds total time"))
    return out


def to_ns(value, unit_ns: int = 1) -> int:
    """Convert a number of ``unit_ns``-sized units to integer nanoseconds.

    Rounds half to even. Floats go through their shortest repr so that
    ``0.0012`` seconds is treated as the decimal the producer wrote.
    """
    if isinstance(value, bool):
        raise TypeError("boolean is not a time value")
    if isinstance(value, int):
        return value * unit_ns
    if isinstance(value, float):
        value = Decimal(repr(value))
    elif not isinstance(value, Decimal):
        value = Decimal(value)
    if not value.is_finite():
        raise ValueError(f"non-finite time value {value}")
    return int((value * unit_ns).to_integral_value(rounding=ROUND_HALF_EVEN))
