"""Per-category runtime breakdowns, proportion heatmaps and their renderings.

Aggregation sums *self* time. Self times partition a run, so the category
shares of one breakdown always add up to one; total times would count
nested operations more than once.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from .calltree import OpRecord
from .errors import EmptyBreakdown, MixedTaxonomy, UnsupportedFormat, WrongTaxonomy
from .taxonomy import ML8_CATEGORIES, RuleSet
from .trace import INT64_MAX, Device

logger = logging.getLogger(__name__)

TABLE_COLUMNS = (
    "GEMM", "Sparse MM", "Conv", "Element-Wise", "Regional",
    "Embedding", "Data Move", "Data Transform", "Other",
)
EMIT_FORMATS = ("csv", "json", "svg")


@dataclass(frozen=True)
class Breakdown:
    label: str
    taxonomy: str
    categories: Tuple[str, ...]
    entries: Mapping[str, int]

    def __post_init__(self):
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        unknown = set(self.entries) - set(cats)
        if unknown:
            raise MixedTaxonomy(f"categories {sorted(unknown)} are not part of taxonomy {self.taxonomy!r}")
        object.__setattr__(self, "entries", {c: int(self.entries.get(c, 0)) for c in cats})

    @property
    def total_ns(self) -> int:
        return sum(self.entries.values())

    @classmethod
    def zero(cls, label: str, rules: RuleSet) -> "Breakdown":
        return cls(label, rules.taxonomy_name, rules.categories, {})

    def relabel(self, label: str) -> "Breakdown":
        return Breakdown(label, self.taxonomy, self.categories, self.entries)


def aggregate(
    records: Iterable[OpRecord],
    taxonomy: RuleSet,
    label: str = "",
    device: Optional[Device] = None,
) -> Breakdown:
    """Sum self time per category, optionally for one device only."""
    name = taxonomy.taxonomy_name
    sums: Dict[str, int] = dict.fromkeys(taxonomy.categories, 0)
    for r in records:
        cat = r.category
        if cat is None:
            raise ValueError(f"record {r.name!r} has not been classified")
        if cat.taxonomy_name != name or cat.category_name not in sums:
            raise MixedTaxonomy(f"record {r.name!r} is classified under {cat}, expected taxonomy {name!r}")
        if device is not None and r.device is not device:
            continue
        sums[cat.category_name] += r.self_ns
    return Breakdown(label, name, taxonomy.categories, sums)


def _same_taxonomy(items: Sequence[Breakdown]) -> None:
    for b in items[1:]:
        if (b.taxonomy, b.categories) != (items[0].taxonomy, items[0].categories):
            raise MixedTaxonomy(f"{b.label!r} uses taxonomy {b.taxonomy!r}, {items[0].label!r} uses {items[0].taxonomy!r}")


def merge(items: Sequence[Breakdown], label: str = "") -> Breakdown:
    """Entry-wise sum of breakdowns over one taxonomy."""
    if not items:
        raise ValueError("nothing to merge")
    _same_taxonomy(items)
    first = items[0]
    sums = {c: sum(b.entries[c] for b in items) for c in first.categories}
    return Breakdown(label or first.label, first.taxonomy, first.categories, sums)


def proportions(b: Breakdown) -> Dict[str, float]:
    total = b.total_ns
    if total == 0:
        raise EmptyBreakdown(f"breakdown {b.label!r} has no recorded time")
    return {c: v / total for c, v in b.entries.items()}


def exact_proportions(b: Breakdown) -> Dict[str, Fraction]:
    total = b.total_ns
    if total == 0:
        raise EmptyBreakdown(f"breakdown {b.label!r} has no recorded time")
    return {c: Fraction(v, total) for c, v in b.entries.items()}


def dominant(b: Breakdown, exclude: Sequence[str] = ()) -> str:
    """Category with the most self time; the first declared one wins ties.

    Categories in ``exclude`` (typically the Other bucket) are skipped.
    """
    pool = [c for c in b.categories if c not in exclude]
    if not pool:
        raise EmptyBreakdown(f"{b.label}: no categories left to rank")
    return max(pool, key=lambda c: b.entries[c])


@dataclass(frozen=True, eq=False)
class HeatmapMatrix:
    row_labels: Tuple[str, ...]
    column_labels: Tuple[str, ...]
    cells: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, HeatmapMatrix):
            return NotImplemented
        return (
            self.row_labels == other.row_labels
            and self.column_labels == other.column_labels
            and self.cells.shape == other.cells.shape
            and bool(np.array_equal(self.cells, other.cells))
        )

    def row(self, label: str) -> Dict[str, float]:
        i = self.row_labels.index(label)
        return dict(zip(self.column_labels, self.cells[i].tolist()))


def heatmap(items: Sequence[Breakdown], categories: Sequence[str] = ()) -> HeatmapMatrix:
    """Stack the category shares of each breakdown into one row each."""
    items = list(items)
    if not items:
        return HeatmapMatrix((), tuple(categories), np.zeros((0, len(categories))))
    _same_taxonomy(items)
    cols = items[0].categories
    cells = np.zeros((len(items), len(cols)))
    for i, b in enumerate(items):
        if b.total_ns == 0:
            logger.warning("breakdown %r is empty; its heatmap row is all zero", b.label)
            continue
        shares = proportions(b)
        cells[i] = [shares[c] for c in cols]
    return HeatmapMatrix(tuple(b.label for b in items), cols, cells)


# ---------------------------------------------------------------------------
# human-readable durations

_UNITS = (("s", 10**9), ("ms", 10**6), ("us", 10**3), ("ns", 1))


def _round_sig(value: Decimal, sig: int) -> Decimal:
    quantum = Decimal(1).scaleb(value.adjusted() - sig + 1)
    rounded = value.quantize(quantum, rounding=ROUND_HALF_EVEN)
    if rounded.adjusted() > value.adjusted():  # 9.99x rounded up to 10.0x
        rounded = rounded.quantize(quantum.scaleb(1), rounding=ROUND_HALF_EVEN)
    return rounded


def format_duration(ns: int, sig: int = 3) -> str:
    """Render with the largest unit that keeps the value at least 1."""
    if ns == 0:
        return "0"
    sign = "-" if ns < 0 else ""
    ns = abs(ns)
    idx = next(i for i, (_, scale) in enumerate(_UNITS) if ns >= scale)
    unit, scale = _UNITS[idx]
    if scale == 1:
        return f"{sign}{ns}ns"  # whole nanoseconds are already exact
    value = _round_sig(Decimal(ns) / scale, sig)
    if value >= 1000 and idx > 0:
        unit, scale = _UNITS[idx - 1]
        value = _round_sig(Decimal(ns) / scale, sig)
    return f"{sign}{value:f}{unit}"


def table_row(b: Breakdown, sig: int = 3) -> List[str]:
    """Label, one cell per ml8 category in column order, then the total."""
    if b.taxonomy != "ml8" or b.categories != ML8_CATEGORIES:
        raise WrongTaxonomy(f"table rows need the ml8 taxonomy, {b.label!r} uses {b.taxonomy!r}")
    cells = [format_duration(b.entries[c], sig) for c in b.categories]
    return [b.label, *cells, format_duration(b.total_ns, sig)]


def format_table(items: Sequence[Breakdown], sig: int = 3) -> str:
    """Aligned text table; ml8 breakdowns get the usual column titles."""
    if not items:
        return ""
    _same_taxonomy(items)
    if items[0].taxonomy == "ml8" and items[0].categories == ML8_CATEGORIES:
        head = TABLE_COLUMNS
        body = [table_row(b, sig) for b in items]
    else:
        head = items[0].categories
        body = [[b.label, *(format_duration(b.entries[c], sig) for c in head), format_duration(b.total_ns, sig)]
                for b in items]
    rows = [["Model", *head, "Total"]] + body
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(cell.rjust(w) if j else cell.ljust(w) for j, (cell, w) in enumerate(zip(r, widths))) for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# transformations


def scale_to_pipeline(b: Breakdown, multiplier: int) -> Breakdown:
    """Per-item cost times item count, e.g. one frame times frames per video."""
    if not isinstance(multiplier, int) or isinstance(multiplier, bool) or multiplier < 1:
        raise ValueError(f"multiplier must be a positive integer, got {multiplier!r}")
    scaled = {c: v * multiplier for c, v in b.entries.items()}
    if any(abs(v) > INT64_MAX for v in scaled.values()) or abs(sum(scaled.values())) > INT64_MAX:
        raise OverflowError(f"scaling {b.label!r} by {multiplier} overflows a signed 64-bit count")
    return Breakdown(b.label, b.taxonomy, b.categories, scaled)


def diff(a: Breakdown, b: Breakdown) -> Dict[str, Tuple[int, Fraction]]:
    """Per category: (time delta in ns, share delta); exactly antisymmetric."""
    _same_taxonomy([a, b])
    ta, tb = a.total_ns, b.total_ns
    out = {}
    for c in a.categories:
        fa = Fraction(a.entries[c], ta) if ta else Fraction(0)
        fb = Fraction(b.entries[c], tb) if tb else Fraction(0)
        out[c] = (a.entries[c] - b.entries[c], fa - fb)
    return out


# ---------------------------------------------------------------------------
# output


def _csv_bytes(rows: Iterable[Sequence]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _matrix_rows(m: HeatmapMatrix):
    yield ["label", *m.column_labels]
    for label, row in zip(m.row_labels, m.cells.tolist()):
        yield [label, *(repr(float(x)) for x in row)]


def _breakdown_rows(items: Sequence[Breakdown], categories: Sequence[str]):
    cats = items[0].categories if items else tuple(categories)
    yield ["label", *cats, "total_ns"]
    for b in items:
        yield [b.label, *(b.entries[c] for c in cats), b.total_ns]


def parse_csv_matrix(data: Union[bytes, str]) -> HeatmapMatrix:
    """Inverse of ``emit(matrix, "csv")``."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    rows = list(csv.reader(io.StringIO(data, newline="")))
    if not rows or rows[0][:1] != ["label"]:
        raise ValueError("not a heatmap CSV: first column must be 'label'")
    cols = tuple(rows[0][1:])
    body = rows[1:]
    cells = np.array([[float(x) for x in r[1:]] for r in body], dtype=float).reshape(len(body), len(cols))
    return HeatmapMatrix(tuple(r[0] for r in body), cols, cells)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)


def _svg(
    labels: Sequence[str],
    columns: Sequence[str],
    values: np.ndarray,
    title: str,
    width: int,
    height: int,
    colors: Sequence[str],
    value_label: str,
) -> bytes:
    colors = list(colors) or list(PALETTE)
    left, right, top, bottom = 60, 170, 40, 90
    plot_w, plot_h = width - left - right, height - top - bottom
    if plot_w <= 0 or plot_h <= 0:
        raise ValueError(f"SVG of {width}x{height} leaves no room for the plot")
    totals = values.sum(axis=1) if len(labels) else np.zeros(0)
    peak = float(totals.max()) if len(labels) and totals.max() > 0 else 1.0
    slot = plot_w / max(len(labels), 1)
    bar_w = slot * 0.7
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="#333"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="#333"/>',
        f'<text x="14" y="{top + plot_h / 2:.1f}" transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
        f'text-anchor="middle" font-family="sans-serif" font-size="11">{escape(value_label)}</text>',
    ]
    for i, label in enumerate(labels):
        x = left + i * slot + (slot - bar_w) / 2
        y = top + plot_h
        for j, col in enumerate(columns):
            v = float(values[i, j])
            if v <= 0:
                continue
            h = v / peak * plot_h
            y -= h
            out.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{h:.2f}" '
                f'fill="{colors[j % len(colors)]}"><title>{escape(label)}: {escape(col)} {v:.6g}</title></rect>'
            )
        cx = x + bar_w / 2
        out.append(
            f'<text x="{cx:.2f}" y="{top + plot_h + 14}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10" transform="rotate(-35 {cx:.2f} {top + plot_h + 14})">{escape(label)}</text>'
        )
    lx = left + plot_w + 20
    for j, col in enumerate(columns):
        ly = top + j * 18
        out.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" fill="{colors[j % len(colors)]}"/>')
        out.append(f'<text x="{lx + 18}" y="{ly + 10}" font-family="sans-serif" font-size="11">{escape(col)}</text>')
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def emit(
    obj: Union[HeatmapMatrix, Sequence[Breakdown]],
    fmt: str,
    *,
    categories: Sequence[str] = (),
    title: str = "",
    width: int = 800,
    height: int = 420,
    colors: Sequence[str] = PALETTE,
) -> bytes:
    """Serialise a heatmap or a list of breakdowns as csv, json or svg."""
    if fmt not in EMIT_FORMATS:
        raise UnsupportedFormat(f"unsupported output format {fmt!r}; expected one of {EMIT_FORMATS}")
    if isinstance(obj, HeatmapMatrix):
        if fmt == "csv":
            return _csv_bytes(_matrix_rows(obj))
        if fmt == "json":
            return _json_bytes({
                "row_labels": list(obj.row_labels),
                "column_labels": list(obj.column_labels),
                "cells": obj.cells.tolist(),
            })
        return _svg(obj.row_labels, obj.column_labels, obj.cells, title or "Share of runtime per category",
                    width, height, colors, "fraction of runtime")

    items = list(obj)
    if items:
        _same_taxonomy(items)
    if fmt == "csv":
        return _csv_bytes(_breakdown_rows(items, categories))
    if fmt == "json":
        return _json_bytes([
            {"label": b.label, "taxonomy": b.taxonomy, "entries": dict(b.entries), "total_ns": b.total_ns}
            for b in items
        ])
    cols = items[0].categories if items else tuple(categories)
    values = np.array([[b.entries[c] / 1e6 for c in cols] for b in items], dtype=float).reshape(len(items), len(cols))
    return _svg([b.label for b in items], cols, values, title or "Runtime breakdown", width, height, colors, "runtime (ms)")


def diff_rows(a: Breakdown, b: Breakdown) -> List[List[str]]:
    rows = [["category", "delta_ns", "delta_share"]]
    for c, (dns, dfrac) in diff(a, b).items():
        rows.append([c, str(dns), repr(float(dfrac))])
    return rows
