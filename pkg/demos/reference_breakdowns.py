"""
Runtime breakdowns of the reference workloads
=============================================

Load the shipped reference traces, attribute self time, classify every
operation with the built-in ``ml8`` rules and print the breakdown table and
the share-of-runtime matrix.
"""

import numpy as np

from nsprof import analyze, builtin_rules, heatmap, load
from nsprof.reference import reference_dir
from nsprof.report import dominant, format_table, scale_to_pipeline

rules = builtin_rules("ml8")
paths = sorted(reference_dir().glob("*.json"))
analyses = [analyze(load(p), rules) for p in paths]
breakdowns = [a.breakdown for a in analyses]

# One row per workload, self time per category.
print(format_table(breakdowns))

# Row-normalised shares; every row sums to one because each nanosecond of
# self time belongs to exactly one operation.
m = heatmap(breakdowns)
np.set_printoptions(precision=3, suppress=True)
print(m.column_labels)
for label, row in zip(m.row_labels, m.cells):
    print(f"{label:<20} {row}")

# Largest operation category per workload, leaving the Other bucket aside.
for b in breakdowns:
    if b.total_ns and any(v for c, v in b.entries.items() if c != "Other"):
        print(f"{b.label:<20} {dominant(b, exclude=('Other',))}")

# The frame parser runs once per video frame; 25 frames make one video.
frame = breakdowns[0]
print(f"{frame.label}: {frame.total_ns / 1e6:.1f} ms per frame, "
      f"{scale_to_pipeline(frame, 25).total_ns / 1e6:.0f} ms per 25-frame video")
