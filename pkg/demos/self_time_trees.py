"""
From nested spans to self time
==============================

A tiny trace-event document with one parent and two children. Self time is
what a span spends outside its direct children; on every lane the self times
add up to the root durations.
"""

import json

from nsprof.calltree import build_forest, compute_self_times, conservation, flatten
from nsprof.ingest import parse_span_trace

doc = {"traceEvents": [
    {"ph": "X", "name": "forward", "ts": 0, "dur": 100, "pid": 0, "tid": 1},
    {"ph": "X", "name": "aten::addmm", "ts": 10, "dur": 20, "pid": 0, "tid": 1},
    {"ph": "B", "name": "aten::relu", "ts": 40, "pid": 0, "tid": 1},
    {"ph": "E", "ts": 90, "pid": 0, "tid": 1},
]}
trace = parse_span_trace(json.dumps(doc).encode(), "toy")

forest = compute_self_times(build_forest(trace))
for rec in flatten(forest):
    print(f"{rec.name:<12} total {rec.total_ns:>7} ns  self {rec.self_ns:>7} ns")

for lane in conservation(forest):
    print(f"lane {lane.lane_id}: self {lane.self_sum_ns} ns == roots {lane.root_sum_ns} ns -> {lane.ok}")

# Spans that overlap without nesting are rejected unless clipping is asked for.
bad = {"traceEvents": [
    {"ph": "X", "name": "a", "ts": 0, "dur": 50, "tid": 1},
    {"ph": "X", "name": "b", "ts": 40, "dur": 20, "tid": 1},
]}
clipped = build_forest(parse_span_trace(json.dumps(bad).encode(), "bad"), clip=True)
print("clipped", clipped.clipped_ns, "ns")
