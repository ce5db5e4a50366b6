"""Acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict; the verdicts are printed at
the end of the pytest run (see conftest.py) and also when this file is run
directly with ``python3 tests/test_acceptance.py``.
"""

import io
import json
import random
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from nsprof.calltree import OpRecord, build_forest, compute_self_times, to_records
from nsprof.cli import main as cli_main
from nsprof.compensate import apply, derive, strip_profiler_artifacts
from nsprof.ingest import emit_canonical, load, parse_canonical
from nsprof.intensity import GemmDims, gemm_intensity
from nsprof.pipeline import analyze
from nsprof.reference import PUBLISHED, agrees, reference_dir
from nsprof.report import HeatmapMatrix, aggregate, dominant, emit, parse_csv_matrix, scale_to_pipeline
from nsprof.taxonomy import (
    ML8_CATEGORIES,
    OTHER,
    builtin_rules,
    builtin_rules_text,
    classify,
    classify_all,
    load_rules,
)
from nsprof.trace import Device, TraceSet

from oracles import paint_self_times, random_name, random_traceset, random_tree

VERDICTS = {}


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    VERDICTS[number] = line
    print(line)
    assert ok, line


def _cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli_main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


# 1 -------------------------------------------------------------------------


def test_criterion_1_table_reproduction():
    t0 = time.perf_counter()
    code, out, err = _cli("report", reference_dir(), "--output-format", "json")
    elapsed = time.perf_counter() - t0
    rows = {r["label"]: r for r in json.loads(out)} if code == 0 else {}
    bad = []
    checked = 0
    for row in PUBLISHED:
        got = rows.get(row.label)
        if got is None:
            bad.append(f"{row.label}: missing")
            continue
        for cat, text in zip(ML8_CATEGORIES, row.cells):
            ns = got["entries"][cat]
            ok = ns == 0 if text == "N/A" else agrees(ns, text)
            checked += 1
            if not ok:
                bad.append(f"{row.label}/{cat}: {ns} ns vs {text}")
        checked += 1
        if not agrees(got["total_ns"], row.total):
            bad.append(f"{row.label}/total: {got['total_ns']} ns vs {row.total}")
    ok = code == 0 and not bad and elapsed < 1.0
    verdict(1, ok, f"{checked} cells and totals agree at printed precision, {len(bad)} mismatches, "
                   f"cmd_report {elapsed:.2f}s (< 1s)" + (f"; {bad[:3]}" if bad else ""))


# 2 -------------------------------------------------------------------------


def test_criterion_2_heatmap_properties():
    code, out, _ = _cli("heatmap", reference_dir())
    m = parse_csv_matrix(out)
    sums = m.cells.sum(axis=1)
    sums_ok = bool(np.all(np.abs(sums - 1.0) <= 1e-9))

    def argmax(label, exclude=()):
        row = m.row(label)
        return max((c for c in m.column_labels if c not in exclude), key=row.__getitem__)

    # "Dominated by" refers to operation categories; Other is the residual
    # bucket for unclassified work and is ranked separately.
    claims = {
        "Question Parser": "DenseMM",
        "Dynamics Predictor": "DataMovement",
        "NSCL Executor": "ElementWise",
    }
    got = {label: argmax(label, exclude=(OTHER,)) for label in claims}
    full_row_agrees = all(argmax(label) == claims[label] for label in ("Question Parser", "Dynamics Predictor"))
    nscl = m.row("NSCL Executor")
    ok = code == 0 and m.cells.shape == (8, 9) and sums_ok and got == claims and full_row_agrees
    verdict(2, ok, f"8x9 matrix, max |row sum - 1| = {float(np.max(np.abs(sums - 1))):.1e}; "
                   f"argmax over operation categories {got}; NSCL full-row argmax is Other "
                   f"({nscl['Other']:.3f} vs ElementWise {nscl['ElementWise']:.3f}), as in the published cells")


# 3 -------------------------------------------------------------------------


def test_criterion_3_self_time_conservation():
    rng = random.Random(2023)
    t0 = time.perf_counter()
    violations = 0
    nodes = 0
    deepest = 0
    for _ in range(1000):
        # vary the branching so that shallow bushy trees and deep chains both occur
        events = random_tree(rng, 0, rng.randint(2, 200_000), max_depth=12, max_fanout=rng.randint(1, 8),
                             stop=rng.uniform(0.15, 0.75))
        nodes += len(events)
        forest = compute_self_times(build_forest(TraceSet(tuple(events), "tree")))
        # a zero-width span on the root's end boundary becomes a root of its own
        roots = forest["L0"]
        selfs = {id(n.event): n.self_ns for n in forest.nodes()}
        painted = paint_self_times(events)
        if sum(selfs.values()) != events[0].duration_ns or [selfs[id(e)] for e in events] != painted:
            violations += 1
        if sum(r.event.duration_ns for r in roots) != events[0].duration_ns:
            violations += 1
        stack = [(r, 0) for r in roots]
        while stack:
            node, d = stack.pop()
            deepest = max(deepest, d)
            stack.extend((c, d + 1) for c in node.children)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 10
    verdict(3, ok, f"1000 trees (generated depth <= 12, fan-out <= 8, {nodes} spans, forest nesting up to "
                   f"{deepest + 1} levels counting zero-width spans), {violations} conservation or "
                   f"painting-oracle mismatches, {elapsed:.2f}s (< 10s)")


# 4 -------------------------------------------------------------------------


def test_criterion_4_gemm_intensity():
    t0 = time.perf_counter()
    mv = gemm_intensity(GemmDims(1024, 1024, 1), 4).intensity
    small = gemm_intensity(GemmDims(2, 2, 2), 4).intensity
    rng = random.Random(44)
    violations = 0
    for _ in range(10_000):
        m, k, n = (rng.randint(1, 2**16) for _ in range(3))
        b = 4
        if gemm_intensity(GemmDims(m, k, n), b).intensity > Fraction(2, b) * min(m, k, n):
            violations += 1
    elapsed = time.perf_counter() - t0
    ok = mv == Fraction(2097152, 4202496) and small == Fraction(1, 3) and violations == 0 and elapsed < 5
    verdict(4, ok, f"I(1024,1024,1) = {mv} (~{float(mv):.4f}), I(2,2,2) = {small}, "
                   f"{violations} bound violations over 10^4 triples, {elapsed:.2f}s (< 5s)")


# 5 -------------------------------------------------------------------------


def test_criterion_5_pipeline_scaling():
    trace = load(reference_dir() / "01_image_frame_parser.json")
    frame = analyze(trace, builtin_rules("ml8")).breakdown
    total = scale_to_pipeline(frame, 25).total_ns
    verdict(5, total == 865_000_000, f"frame parser {frame.total_ns} ns x 25 = {total} ns (want 865000000)")


# 6 -------------------------------------------------------------------------


def test_criterion_6_classification():
    rng = random.Random(66)
    stems = ["aten::mm", "aten::relu", "aten::conv2d", "aten::copy_", "aten::embedding", "aten::transpose",
             "aten::max_pool2d", "aten::add", "sparse_coalesce", "memcpy HtoD"]
    names = [rng.choice(stems) if rng.random() < 0.5 else random_name(rng, 1, 24) for _ in range(100_000)]
    records = [OpRecord(n, rng.choice(list(Device)), "0", rng.randint(0, 10**6), 0,
                        shapes=rng.choice([None, ((2, 3),)])) for n in names]
    first = classify_all(records, load_rules(builtin_rules_text("ml8")))
    second = classify_all(records, load_rules(builtin_rules_text("ml8")))
    rules = builtin_rules("ml8")
    declared = set(rules.categories)
    total = all(r.category is not None and r.category.taxonomy_name == "ml8"
                and r.category.category_name in declared for r in first[0])
    identical = first[0] == second[0] and first[1] == second[1]

    from test_taxonomy import random_rule

    sample = records[:2000]
    before = [classify(r, rules) for r in sample]
    dominance_failures = 0
    for _ in range(100):
        rule = random_rule(rng, rules)
        extended = rules.with_rule(rule)
        if any(classify(r, extended) not in (old, rule.category) for r, old in zip(sample, before)):
            dominance_failures += 1
    ok = total and identical and dominance_failures == 0
    verdict(6, ok, f"10^5 names: every record has exactly one declared category = {total}, repeat runs "
                   f"identical = {identical}, priority dominance failures in 100 insertions = {dominance_failures}")


# 7 -------------------------------------------------------------------------


def test_criterion_7_round_trips():
    rng = random.Random(77)
    failures = 0
    for _ in range(1000):
        s = random_traceset(rng)
        if parse_canonical(emit_canonical(s)) != s:
            failures += 1
    nrng = np.random.default_rng(77)
    code, out, _ = _cli("heatmap", reference_dir())
    matrices = [parse_csv_matrix(out)] + [
        HeatmapMatrix(tuple(f"row {i}" for i in range(r)), ML8_CATEGORIES, nrng.random((r, 9)) ** 7)
        for r in range(0, 20)
    ]
    csv_failures = sum(parse_csv_matrix(emit(mat, "csv")) != mat for mat in matrices)
    ok = failures == 0 and csv_failures == 0
    verdict(7, ok, f"1000 random TraceSets: {failures} canonical round-trip mismatches; "
                   f"{len(matrices)} matrices: {csv_failures} CSV round-trip mismatches")


# 8 -------------------------------------------------------------------------


def test_criterion_8_compensation():
    rules = builtin_rules("ml8")
    identity = True
    bound_failures = 0
    argmax_changes = 0
    rng = random.Random(88)
    for row in PUBLISHED:
        if row.label == "NS-DR Executor":
            continue  # a single-category row has a trivial argmax
        trace = load(reference_dir() / f"{row.file_stem}.json")
        records, _ = to_records(trace)
        records, _ = strip_profiler_artifacts(records)
        records, _ = classify_all(records, rules)
        identity &= apply(records, derive(7, 7)) == records
        base = dominant(aggregate(records, rules))
        for _ in range(50):
            model = derive(rng.randint(1, 10**9), rng.randint(1, 10**9))
            scaled = apply(records, model)
            exact = model.scale * sum(Fraction(r.self_ns) for r in records)
            if abs(sum(r.self_ns for r in scaled) - exact) > len(records):
                bound_failures += 1
            if dominant(aggregate(scaled, rules)) != base:
                argmax_changes += 1
    ok = identity and bound_failures == 0 and argmax_changes == 0
    verdict(8, ok, f"scale 1 identity = {identity}; over 350 random scales: {bound_failures} rounding-bound "
                   f"violations, {argmax_changes} argmax changes")


# 9 -------------------------------------------------------------------------


def test_criterion_9_throughput():
    rng = random.Random(99)
    pool = ["aten::mm", "aten::addmm", "aten::relu", "aten::add", "aten::conv2d", "aten::copy_", "aten::cat",
            "aten::embedding", "aten::max_pool2d", "aten::index_select", "cudaLaunchKernel", "memcpy HtoD"]
    pool += [f"model.layer{i}.custom_op" for i in range(2000)]
    records = [OpRecord(rng.choice(pool), Device.GPU if rng.random() < 0.3 else Device.CPU, "0",
                        rng.randint(0, 10**6), 0) for _ in range(1_000_000)]
    rules = load_rules(builtin_rules_text("ml8"))  # cold match cache
    t0 = time.perf_counter()
    classified, _ = classify_all(records, rules, in_place=True)
    b = aggregate(classified, rules)
    elapsed = time.perf_counter() - t0
    ok = elapsed < 5 and b.total_ns == sum(r.self_ns for r in records)
    verdict(9, ok, f"classify + aggregate of 10^6 events in {elapsed:.2f}s (< 5s)")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((n, f) for n, f in globals().items() if n.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            failed += 1
    raise SystemExit(1 if failed else 0)
