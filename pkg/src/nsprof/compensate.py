"""Profiler-overhead compensation by uniform rescaling against an unprofiled run."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Iterable, List, Sequence, Tuple

from .calltree import OpRecord
from .errors import ZeroWallTime
from .ingest import DEFAULT_PROFILER_PREFIXES
from .trace import to_ns

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompensationModel:
    baseline_wall_ns: int
    profiled_wall_ns: int

    @property
    def scale(self) -> Fraction:
        return Fraction(self.baseline_wall_ns, self.profiled_wall_ns)

    @property
    def flagged(self) -> bool:
        """True when the unprofiled run was the slower one, which points at noise."""
        return self.scale > 1


def derive(baseline_wall_ns: int, profiled_wall_ns: int) -> CompensationModel:
    if baseline_wall_ns <= 0 or profiled_wall_ns <= 0:
        raise ZeroWallTime(
            f"wall times must be positive (baseline={baseline_wall_ns}, profiled={profiled_wall_ns})"
        )
    model = CompensationModel(baseline_wall_ns, profiled_wall_ns)
    if model.flagged:
        logger.warning(
            "baseline run (%d ns) is slower than the profiled run (%d ns); scale %s > 1",
            baseline_wall_ns, profiled_wall_ns, model.scale,
        )
    return model


def scale_ns(ns: int, scale: Fraction) -> int:
    return round(ns * scale)  # Fraction rounds half to even


def apply(records: Iterable[OpRecord], model: CompensationModel) -> List[OpRecord]:
    """Rescale self and total times; the measured values move to ``raw_*``.

    A scale of exactly 1 returns the records untouched.
    """
    scale = model.scale
    if scale == 1:
        return list(records)
    out = []
    for r in records:
        raw_self = r.self_ns if r.raw_self_ns is None else r.raw_self_ns
        raw_total = r.total_ns if r.raw_total_ns is None else r.raw_total_ns
        out.append(
            OpRecord(r.name, r.device, r.lane_id, scale_ns(raw_self, scale), scale_ns(raw_total, scale),
                     r.call_count, r.shapes, r.category, raw_self, raw_total, r.bytes_moved)
        )
    return out


def strip_profiler_artifacts(
    records: Iterable[OpRecord],
    prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES,
) -> Tuple[List[OpRecord], int]:
    """Drop profiler bookkeeping records and return their summed self time."""
    kept, removed = [], 0
    prefixes = tuple(prefixes)
    for r in records:
        if prefixes and r.name.startswith(prefixes):
            removed += r.self_ns
        else:
            kept.append(r)
    return kept, removed


_UNITS = {"ns": 1, "us": 10**3, "µs": 10**3, "ms": 10**6, "s": 10**9}
_DURATION = re.compile(r"^\s*([0-9]+(?:\.[0-9]*)?|\.[0-9]+)\s*(ns|us|µs|ms|s)?\s*$")


def parse_duration(text: str) -> int:
    """``"90ms"``, ``"1.5s"``, ``"250us"`` or a bare integer count of nanoseconds."""
    m = _DURATION.match(text)
    if not m:
        raise ValueError(f"cannot parse duration {text!r}")
    number, unit = m.groups()
    if unit is None and "." in number:
        raise ValueError(f"bare durations are integer nanoseconds, got {text!r}")
    try:
        return to_ns(Decimal(number), _UNITS[unit or "ns"])
    except InvalidOperation:
        raise ValueError(f"cannot parse duration {text!r}") from None
