"""End-to-end analysis of one trace: records, compensation, categories, breakdown."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import compensate
from .calltree import Forest, LaneConservation, OpRecord, conservation, to_records
from .ingest import DEFAULT_PROFILER_PREFIXES
from .report import Breakdown, aggregate
from .taxonomy import RuleSet, UnmatchedReport, classify_all
from .trace import Device, TraceSet


@dataclass
class Analysis:
    label: str
    records: List[OpRecord]
    breakdown: Breakdown
    unmatched: UnmatchedReport
    conservation: List[LaneConservation]
    stripped_ns: int = 0
    clipped_ns: int = 0
    compensation: Optional[compensate.CompensationModel] = None
    per_device: Dict[Device, Breakdown] = field(default_factory=dict)


def analyze(
    trace: TraceSet,
    rules: RuleSet,
    *,
    clip: bool = False,
    baseline_wall_ns: Optional[int] = None,
    profiler_prefixes: Sequence[str] = DEFAULT_PROFILER_PREFIXES,
    raw: bool = False,
) -> Analysis:
    """Run a trace through self-time attribution, artifact removal,
    optional overhead compensation, classification and aggregation.

    With ``raw`` the compensation model is still derived and reported but
    the breakdown is built from measured times.
    """
    records, forest = to_records(trace, clip=clip)
    checks = conservation(forest)
    records, stripped = compensate.strip_profiler_artifacts(records, profiler_prefixes)

    model = None
    if baseline_wall_ns is not None:
        if not trace.wall_time_ns:
            raise ValueError(f"trace {trace.label!r} has no wall time to compensate against")
        model = compensate.derive(baseline_wall_ns, trace.wall_time_ns)
        if not raw:
            records = compensate.apply(records, model)

    records, unmatched = classify_all(records, rules, in_place=True)  # records are ours
    per_device = {
        dev: aggregate(records, rules, trace.label, device=dev)
        for dev in Device
        if any(r.device is dev for r in records)
    }
    return Analysis(
        label=trace.label,
        records=records,
        breakdown=aggregate(records, rules, trace.label),
        unmatched=unmatched,
        conservation=checks,
        stripped_ns=stripped,
        clipped_ns=forest.clipped_ns,
        compensation=model,
        per_device=per_device,
    )
