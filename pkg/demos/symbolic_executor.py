"""
A per-function profile of a symbolic program executor
=====================================================

Flat profiles (per-function call counts with self and cumulative time) carry
no span structure, so their self times are taken as reported. Under the
tensor-operation rules every row lands in Other; the ``symbolic`` rule set
splits the same time into queries, scalar arithmetic and JSON parsing.
"""

from nsprof import analyze, builtin_rules, load
from nsprof.reference import profiles_dir
from nsprof.report import format_table

trace = load(profiles_dir() / "nsdr_executor.prof.txt", label="NS-DR Executor")

for name in ("ml8", "symbolic"):
    result = analyze(trace, builtin_rules(name))
    print(f"rules: {name}")
    print(format_table([result.breakdown]))

# With a baseline wall time from an unprofiled run, every time is scaled by
# baseline / profiled; the measured values stay on the records.
result = analyze(trace, builtin_rules("symbolic"), baseline_wall_ns=11_610_000)
print(f"scale {result.compensation.scale}")
print(format_table([result.breakdown]))
