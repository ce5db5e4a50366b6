import json
import random
from fractions import Fraction

import numpy as np
import pytest

from nsprof.calltree import OpRecord
from nsprof.errors import EmptyBreakdown, MixedTaxonomy, UnsupportedFormat, WrongTaxonomy
from nsprof.ingest import load
from nsprof.pipeline import analyze
from nsprof.reference import PUBLISHED, agrees, reference_dir
from nsprof.report import (
    Breakdown,
    aggregate,
    diff,
    diff_rows,
    dominant,
    emit,
    exact_proportions,
    format_duration,
    format_table,
    heatmap,
    merge,
    parse_csv_matrix,
    proportions,
    scale_to_pipeline,
    table_row,
)
from nsprof.taxonomy import ML8_CATEGORIES, CategoryId
from nsprof.trace import Device

MS = 1_000_000
QP = {"DenseMM": 166 * MS, "ElementWise": 53_500_000, "Embedding": 270_000, "DataMovement": 50_100_000,
      "DataTransformation": 9_900_000, "Other": 17_300_000}


def classified(name, category, self_ns, device=Device.CPU):
    return OpRecord(name, device, "0", self_ns, self_ns, category=CategoryId("ml8", category))


def bd(label, entries):
    return Breakdown(label, "ml8", ML8_CATEGORIES, entries)


@pytest.fixture(scope="module")
def reference(ml8):
    out = {}
    for row in PUBLISHED:
        trace = load(reference_dir() / f"{row.file_stem}.json", label=row.label)
        out[row.label] = analyze(trace, ml8).breakdown
    return out


def test_question_parser_aggregate(ml8):
    records = [classified(f"op{i}", c, v) for i, (c, v) in enumerate(QP.items())]
    b = aggregate(records, ml8, "QP")
    assert {c: v for c, v in b.entries.items() if v} == QP
    assert b.total_ns == 297_070_000
    assert format_duration(b.total_ns) == "297ms"


def test_empty_and_random_aggregates(ml8):
    assert aggregate([], ml8, "e").total_ns == 0
    rng = random.Random(1)
    records = [classified("x", rng.choice(ML8_CATEGORIES), rng.randint(0, 10**9)) for _ in range(5000)]
    assert aggregate(records, ml8).total_ns == sum(r.self_ns for r in records)


def test_aggregate_by_device(ml8):
    records = [classified("a", "DenseMM", 5, Device.GPU), classified("b", "DenseMM", 7)]
    assert aggregate(records, ml8, device=Device.GPU).entries["DenseMM"] == 5


def test_aggregate_rejects_other_taxonomy(ml8):
    wrong = OpRecord("x", Device.CPU, "0", 1, 1, category=CategoryId("symbolic", "Query"))
    with pytest.raises(MixedTaxonomy):
        aggregate([wrong], ml8)
    with pytest.raises(ValueError):
        aggregate([OpRecord("x", Device.CPU, "0", 1, 1)], ml8)


def test_proportions_examples(reference):
    qp = proportions(bd("QP", QP))
    assert round(qp["DenseMM"], 3) == 0.559
    assert proportions(bd("one", {"Regional": 5})) == {c: (1.0 if c == "Regional" else 0.0) for c in ML8_CATEGORIES}
    frame = proportions(reference["Image/Frame Parser"])
    assert round(frame["Convolution"], 3) == 0.341
    assert round(frame["ElementWise"], 3) == 0.321
    with pytest.raises(EmptyBreakdown):
        proportions(bd("zero", {}))


def test_exact_proportions_sum_to_one(reference):
    for b in reference.values():
        assert sum(exact_proportions(b).values()) == 1


def test_heatmap_shapes_and_rows(reference):
    m = heatmap(list(reference.values()))
    assert m.cells.shape == (8, 9)
    assert np.allclose(m.cells.sum(axis=1), 1.0, atol=1e-9, rtol=0)
    one = heatmap([reference["Question Parser"]])
    assert one.row("Question Parser") == proportions(reference["Question Parser"])
    twice = heatmap([reference["NLM Sort"], reference["NLM Sort"]])
    assert np.array_equal(twice.cells[0], twice.cells[1])


def test_empty_row_is_zero(ml8):
    m = heatmap([Breakdown.zero("nothing", ml8)])
    assert not m.cells.any()


def test_dominant(reference):
    assert dominant(reference["Question Parser"]) == "DenseMM"
    assert dominant(reference["Dynamics Predictor"]) == "DataMovement"
    assert dominant(reference["NSCL Executor"]) == "Other"
    assert dominant(reference["NSCL Executor"], exclude=("Other",)) == "ElementWise"
    with pytest.raises(EmptyBreakdown):
        dominant(bd("x", {}), exclude=ML8_CATEGORIES)


@pytest.mark.parametrize("ns, text", [(0, "0"), (7, "7ns"), (39_900, "39.9us"), (488_320, "488us"),
                                      (18_300_000_000, "18.3s"), (999_999, "1.00ms"), (865 * MS, "865ms"),
                                      (-2_500, "-2.50us")])
def test_format_duration(ns, text):
    assert format_duration(ns) == text


def test_table_rows(reference):
    path = table_row(reference["NLM Path"])
    assert path[0] == "NLM Path" and path[-1] == "18.3s"
    nscl = table_row(reference["NSCL Executor"])
    assert nscl[1] == "39.9us"
    assert table_row(reference["NSCL Executor"], sig=4)[-1] == "488.3us"
    assert table_row(bd("z", {}))[1:] == ["0"] * 10


def test_table_cells_match_published_values(reference):
    for row in PUBLISHED:
        cells = table_row(reference[row.label])[1:]
        b = reference[row.label]
        for cat, text in zip(ML8_CATEGORIES, row.cells):
            if text != "N/A":
                assert agrees(b.entries[cat], text), (row.label, cat, text, cells)
        assert agrees(b.total_ns, row.total)


def test_table_needs_ml8(symbolic):
    with pytest.raises(WrongTaxonomy):
        table_row(Breakdown.zero("s", symbolic))
    text = format_table([Breakdown("s", "symbolic", symbolic.categories, {"Query": 3_900_000})])
    assert "Query" in text and "3.90ms" in text
    assert format_table([]) == ""


def test_scale_to_pipeline(reference):
    frame = reference["Image/Frame Parser"]
    assert scale_to_pipeline(frame, 25).total_ns == 865 * MS
    assert scale_to_pipeline(frame, 1) == frame
    rng = random.Random(2)
    b = bd("r", {c: rng.randint(0, 10**12) for c in ML8_CATEGORIES})
    assert scale_to_pipeline(b, 3).entries == {c: 3 * v for c, v in b.entries.items()}
    with pytest.raises(ValueError):
        scale_to_pipeline(b, 0)
    with pytest.raises(OverflowError):
        scale_to_pipeline(bd("big", {"Other": 2**62}), 4)


def test_diff(reference):
    x = reference["NLM Path"]
    assert all(v == (0, 0) for v in diff(x, x).values())
    zero = bd("z", {})
    assert {c: d for c, (d, _) in diff(x, zero).items()} == x.entries
    rng = random.Random(3)
    for _ in range(200):
        a = bd("a", {c: rng.randint(0, 10**9) for c in ML8_CATEGORIES})
        b = bd("b", {c: rng.randint(0, 10**9) for c in ML8_CATEGORIES})
        ab, ba = diff(a, b), diff(b, a)
        assert all(ab[c][0] == -ba[c][0] and ab[c][1] == -ba[c][1] for c in ML8_CATEGORIES)
    assert diff_rows(x, x)[0] == ["category", "delta_ns", "delta_share"]


def test_merge_is_associative_and_checks_taxonomy(symbolic):
    rng = random.Random(4)
    a, b, c = (bd(n, {k: rng.randint(0, 10**6) for k in ML8_CATEGORIES}) for n in "abc")
    assert merge([merge([a, b]), c], "m").entries == merge([a, merge([b, c])], "m").entries
    with pytest.raises(MixedTaxonomy):
        merge([a, Breakdown.zero("s", symbolic)])
    with pytest.raises(MixedTaxonomy):
        Breakdown("x", "ml8", ML8_CATEGORIES, {"Query": 1})


def test_csv_matrix_round_trip(reference):
    m = heatmap(list(reference.values()))
    data = emit(m, "csv")
    assert data.count(b"\r\n") == 9
    assert parse_csv_matrix(data) == m
    single = emit(heatmap([reference["NLM Sort"]]), "csv")
    assert single.count(b"\r\n") == 2


def test_csv_random_matrix_round_trip():
    rng = np.random.default_rng(5)
    from nsprof.report import HeatmapMatrix

    m = HeatmapMatrix(("a,b", 'q"x', "plain"), ML8_CATEGORIES, rng.random((3, 9)))
    assert parse_csv_matrix(emit(m, "csv")) == m


def test_empty_inputs_give_header_only_csv():
    assert emit(heatmap([], ML8_CATEGORIES), "csv") == ("label," + ",".join(ML8_CATEGORIES) + "\r\n").encode()
    assert emit([], "csv", categories=ML8_CATEGORIES).startswith(b"label,DenseMM")


def test_json_and_svg(reference):
    items = list(reference.values())
    doc = json.loads(emit(items, "json"))
    assert doc[1]["label"] == "Question Parser" and doc[1]["total_ns"] == items[1].total_ns
    m = json.loads(emit(heatmap(items), "json"))
    assert len(m["cells"]) == 8 and len(m["cells"][0]) == 9
    svg = emit(items, "svg", colors=["#000000"]).decode()
    assert svg.startswith("<svg") and svg.count("<rect") >= 9 and "#000000" in svg
    assert "NLM Blocks World" in emit(heatmap(items), "svg").decode()
    with pytest.raises(UnsupportedFormat):
        emit(items, "xlsx")
    with pytest.raises(ValueError):
        emit(items, "svg", width=100, height=50)


def test_shares_are_exact_fractions_of_entries(reference):
    b = reference["NSCL Executor"]
    shares = exact_proportions(b)
    assert shares["ElementWise"] == Fraction(b.entries["ElementWise"], b.total_ns)
