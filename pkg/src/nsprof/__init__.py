"""Profiler-trace analysis: call-tree self time, rule-based operation
categories, operational intensity and per-category runtime breakdowns."""

from .calltree import CallNode, Forest, OpRecord, build_forest, compute_self_times, flatten, flatten_flat
from .compensate import CompensationModel, apply, derive, strip_profiler_artifacts
from .ingest import emit_canonical, load, parse_canonical, parse_flat_profile, parse_span_trace
from .intensity import (
    Boundedness,
    GemmDims,
    IntensityEstimate,
    MachineModel,
    boundedness,
    estimate_record,
    gemm_intensity,
    gemm_traffic,
    gemm_work,
    is_tall_skinny,
)
from .pipeline import Analysis, analyze
from .report import Breakdown, HeatmapMatrix, aggregate, diff, emit, heatmap, proportions, scale_to_pipeline, table_row
from .taxonomy import CategoryId, Rule, RuleSet, builtin_rules, classify, classify_all, load_rules
from .trace import Device, SourceFormat, TraceEvent, TraceSet, Violation, validate

__version__ = "0.1.0"
