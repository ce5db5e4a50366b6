"""Published per-category runtimes and the synthetic traces that encode them.

``PUBLISHED`` lists the single-input runtime breakdowns of eight neural and
neuro-symbolic (sub)models exactly as printed. The raw traces behind those
numbers are not available, so :func:`reference_trace` builds a span trace per
model whose operator names classify (under ``builtin:ml8``) into exactly the
published category totals. The symbolic executor row has no category split;
its trace is a flat per-function profile whose names all fall through to
Other under ml8 and split into query / arithmetic / JSON work under
``builtin:symbolic``.

Regenerate the shipped files with ``python -m nsprof.reference OUTDIR``.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .ingest import FlatProfileEntry, emit_canonical, format_flat_table
from .taxonomy import ML8_CATEGORIES
from .trace import Device, SourceFormat, TraceEvent, TraceSet

_UNIT_NS = {"ns": 1, "us": 10**3, "ms": 10**6, "s": 10**9}
NA = "N/A"


@dataclass(frozen=True)
class PublishedRow:
    label: str
    cells: Tuple[str, ...]  # one per ml8 category, in declaration order
    total: str
    file_stem: str


PUBLISHED: Tuple[PublishedRow, ...] = (
    PublishedRow("Image/Frame Parser",
                 ("0.19ms", "0ms", "11.8ms", "11.1ms", "0.54ms", "0ms", "6.0ms", "2.4ms", "2.6ms"), "34.6ms",
                 "01_image_frame_parser"),
    PublishedRow("Question Parser",
                 ("166ms", "0ms", "0ms", "53.5ms", "0ms", "0.27ms", "50.1ms", "9.9ms", "17.3ms"), "297ms",
                 "02_question_parser"),
    PublishedRow("Dynamics Predictor",
                 ("715ms", "9.9ms", "294ms", "345ms", "0ms", "0ms", "1300ms", "403ms", "125ms"), "3200ms",
                 "03_dynamics_predictor"),
    PublishedRow("NSCL Executor",
                 ("39.9us", "0us", "46.4us", "122.4us", "33.5us", "0.0us", "76.0us", "20.5us", "149.5us"), "488.3us",
                 "04_nscl_executor"),
    PublishedRow("NS-DR Executor",
                 (NA, NA, NA, NA, NA, NA, NA, NA, "12.9ms"), "12.9ms",
                 "05_nsdr_executor"),
    PublishedRow("NLM Path",
                 ("1.2s", "0s", "0s", "4.7s", "0s", "0s", "3.6s", "1.5s", "7.3s"), "18.3s",
                 "06_nlm_path"),
    PublishedRow("NLM Sort",
                 ("2.6s", "0s", "0s", "11.1s", "0s", "0s", "7.5s", "3.4s", "17.1s"), "41.7s",
                 "07_nlm_sort"),
    PublishedRow("NLM Blocks World",
                 ("635ms", "0ms", "0ms", "2100ms", "0ms", "0ms", "1400ms", "618ms", "3100ms"), "7850ms",
                 "08_nlm_blocks_world"),
)

FRAMES_PER_VIDEO = 25
SYMBOLIC_LABEL = "NS-DR Executor"

_PRINTED = re.compile(r"^(?P<num>[0-9]+(?:\.[0-9]+)?)(?P<unit>ns|us|ms|s)$")


def printed_value(text: str) -> Tuple[int, int]:
    """(value in ns, last printed digit in ns) for a cell such as ``"488.3us"``.

    Trailing zeros of a whole number are not significant: ``"3200ms"``
    is known to the hundred milliseconds.
    """
    m = _PRINTED.match(text)
    if not m:
        raise ValueError(f"not a printed duration: {text!r}")
    num, unit = m.group("num"), _UNIT_NS[m.group("unit")]
    value = Decimal(num) * unit
    if "." in num:
        ulp = Decimal(1).scaleb(-len(num.split(".")[1])) * unit
    elif int(num) == 0:
        ulp = Decimal(unit)
    else:
        stripped = num.rstrip("0")
        ulp = Decimal(10 ** (len(num) - len(stripped))) * unit
    return int(value), int(ulp)


def printed_sig_figs(text: str) -> int:
    num = _PRINTED.match(text).group("num")
    digits = num.replace(".", "").lstrip("0")
    if "." not in num:
        digits = digits.rstrip("0")
    return max(len(digits), 1)


def agrees(ns: int, text: str) -> bool:
    """True when ``ns`` rounds to ``text`` at the precision ``text`` was printed."""
    value, ulp = printed_value(text)
    if value == 0:
        return ns == 0
    return 2 * abs(ns - value) <= ulp


# Cells are encoded at their printed value, with two rows nudged so that the
# encoded total equals the printed total. The NSCL executor cells add up to
# 488.2 us against a printed 488.3 us, so three cells carry an extra 0.04 us.
# The image/frame parser cells add up to 34.63 ms against a printed 34.6 ms
# (and 25 frames at 34.6 ms give the quoted 865 ms per video), so data
# movement is encoded as 5.97 ms. Both nudges vanish at the printed precision.
_ADJUST_NS: Dict[str, Dict[str, int]] = {
    "Image/Frame Parser": {"DataMovement": -30_000},
    "NSCL Executor": {"Convolution": 40, "ElementWise": 40, "Other": 40},
}


def encoded_entries(label: str) -> Dict[str, int]:
    """Category totals in ns that the shipped trace for ``label`` encodes."""
    row = published_row(label)
    out = {}
    for cat, cell in zip(ML8_CATEGORIES, row.cells):
        out[cat] = 0 if cell == NA else printed_value(cell)[0]
    for cat, extra in _ADJUST_NS.get(label, {}).items():
        out[cat] += extra
    return out


def published_row(label: str) -> PublishedRow:
    for row in PUBLISHED:
        if row.label == label:
            return row
    raise KeyError(label)


# ---------------------------------------------------------------------------
# span-trace construction

# (name, weight, device, child name, child weight, shapes)
_Op = Tuple[str, int, Device, Optional[str], int, Optional[Tuple[Tuple[int, ...], ...]]]

CPU, GPU = Device.CPU, Device.GPU

_TEMPLATES: Dict[str, List[_Op]] = {
    "DenseMM": [
        ("aten::linear", 1, CPU, "aten::addmm", 6, ((512,), (64, 512), (512, 512))),
        ("aten::matmul", 1, CPU, "aten::mm", 2, ((2048, 1), (1, 2048))),
        ("volta_sgemm_128x64_tn", 2, GPU, None, 0, None),
    ],
    "SparseMM": [
        ("aten::_sparse_mm", 1, CPU, "aten::_sparse_addmm", 3, None),
    ],
    "Convolution": [
        ("aten::conv2d", 1, CPU, "aten::_convolution", 2, ((1, 64, 56, 56), (64, 64, 3, 3))),
        ("implicit_convolve_sgemm", 5, GPU, None, 0, None),
    ],
    "ElementWise": [
        ("aten::relu", 3, CPU, None, 0, ((64, 512),)),
        ("aten::add", 2, CPU, None, 0, ((64, 512), (64, 512))),
        ("aten::softmax", 1, CPU, "aten::_softmax", 2, ((64, 128),)),
        ("aten::layer_norm", 1, CPU, "aten::native_layer_norm", 2, ((64, 512),)),
        ("vectorized_elementwise_kernel", 3, GPU, None, 0, None),
    ],
    "Regional": [
        ("torchvision::roi_align", 3, CPU, None, 0, None),
        ("aten::max_pool2d", 1, CPU, "aten::max_pool2d_with_indices", 2, None),
    ],
    "Embedding": [
        ("aten::embedding", 1, CPU, None, 0, ((32,), (30000, 512))),
    ],
    "DataMovement": [
        ("aten::to", 1, CPU, "aten::copy_", 3, None),
        ("aten::cat", 2, CPU, None, 0, None),
        ("Memcpy HtoD (Pageable -> Device)", 4, GPU, None, 0, None),
    ],
    "DataTransformation": [
        ("aten::transpose", 2, CPU, None, 0, None),
        ("aten::reshape", 1, CPU, "aten::view", 1, None),
        ("aten::masked_select", 1, CPU, None, 0, None),
        ("aten::coalesce", 1, CPU, "aten::_coalesce", 2, None),
    ],
    "Other": [
        ("aten::empty", 1, CPU, None, 0, None),
        ("postprocess_outputs", 1, CPU, None, 0, None),
    ],
}

CPU_LANE = "0/1"
GPU_LANE = "0/7"
PROFILER_ROOT = "ProfilerStep#0"


def _split(total: int, weights: Sequence[int]) -> List[int]:
    w = sum(weights)
    parts = [total * x // w for x in weights]
    parts[-1] += total - sum(parts)
    return parts


def reference_trace(label: str) -> TraceSet:
    """A canonical trace whose classified self times reproduce ``label``'s row."""
    if label == SYMBOLIC_LABEL:
        return symbolic_executor_trace()
    entries = encoded_entries(label)
    total = sum(entries.values())
    cpu: List[Tuple[str, int, int, Optional[tuple]]] = []  # (name, start, dur, shapes)
    gpu: List[Tuple[str, int, int, Optional[tuple]]] = []
    wrapper_name = f"nn.Module: {label}"

    # The module wrapper keeps a quarter of Other as self time.
    wrapper_self = entries["Other"] // 4
    work = dict(entries)
    work["Other"] -= wrapper_self

    overhead = total // 100  # profiler bookkeeping attributed to the root step
    cursor = 0
    gpu_cursor = 0
    for cat in ML8_CATEGORIES:
        t = work[cat]
        if t == 0:
            continue
        ops = _TEMPLATES[cat]
        shares = _split(t, [op[1] + op[4] for op in ops])
        for (name, w, dev, child, cw, shapes), share in zip(ops, shares):
            if dev is GPU:
                gpu.append((name, gpu_cursor, share, None))
                gpu_cursor += share
                continue
            if child is None:
                cpu.append((name, cursor, share, shapes))
            else:
                own, sub = _split(share, [w, cw])
                cpu.append((name, cursor, share, None))
                cpu.append((child, cursor + own, sub, shapes))
            cursor += share

    cpu_body = cursor + wrapper_self
    events = [
        TraceEvent(PROFILER_ROOT, CPU_LANE, CPU, 0, cpu_body + overhead, internal=True),
        TraceEvent(wrapper_name, CPU_LANE, CPU, overhead, cpu_body),
    ]
    base = overhead + wrapper_self
    for name, start, dur, shapes in cpu:
        events.append(TraceEvent(name, CPU_LANE, CPU, base + start, dur, shapes=shapes))
    for name, start, dur, _ in gpu:
        nbytes = dur // 10 if name.startswith("Memcpy") else None
        events.append(TraceEvent(name, GPU_LANE, GPU, overhead + start, dur, bytes_moved=nbytes))
    wall = max(e.end_ns for e in events)
    return TraceSet(tuple(events), label, wall, SourceFormat.CANONICAL)


# ---------------------------------------------------------------------------
# symbolic executor flat profile (self times in us; they add up to 12.9 ms)

_LIB = "/usr/lib/python3.8"
_NP = "/usr/lib/python3/dist-packages/numpy/core"

SYMBOLIC_ROWS: Tuple[Tuple[str, int, int, int], ...] = (
    # name, calls, self us, total us
    ("/srv/nsdr/executor.py:210(run_program)", 24, 650, 11400),
    ("/srv/nsdr/executor.py:96(__init__)", 1, 900, 2400),
    ("/srv/nsdr/program.py:45(parse_tokens)", 24, 1100, 1250),
    ("{method 'append' of 'list' objects}", 5200, 800, 800),
    ("{built-in method builtins.isinstance}", 3100, 600, 600),
    ("/srv/nsdr/executor.py:150(_dispatch)", 240, 700, 7600),
    ("{method 'items' of 'dict' objects}", 900, 150, 150),
    ("{built-in method builtins.len}", 2400, 300, 300),
    ("/srv/nsdr/executor.py:310(query_object_by_attr)", 96, 1300, 1900),
    ("/srv/nsdr/executor.py:352(get_attribute)", 410, 950, 950),
    ("/srv/nsdr/executor.py:401(filter_collision)", 48, 800, 1100),
    ("/srv/nsdr/executor.py:438(find_closest_neighbor)", 12, 850, 1400),
    ("{built-in method builtins.sum}", 620, 900, 900),
    ("{method 'reduce' of 'numpy.ufunc' objects}", 240, 700, 700),
    (f"{_NP}/fromnumeric.py:2123(sum)", 240, 300, 1000),
    ("{built-in method math.sqrt}", 1500, 400, 400),
    (f"{_LIB}/json/__init__.py:299(loads)", 400, 200, 1500),
    (f"{_LIB}/json/decoder.py:332(decode)", 400, 150, 1300),
    (f"{_LIB}/json/decoder.py:343(raw_decode)", 400, 250, 1150),
    ("{built-in method _json.scanstring}", 8800, 900, 900),
)
SYMBOLIC_WALL_NS = 12_900_000


def symbolic_entries() -> List[FlatProfileEntry]:
    return [FlatProfileEntry(n, c, s * 1000, t * 1000) for n, c, s, t in SYMBOLIC_ROWS]


def symbolic_executor_trace() -> TraceSet:
    events = tuple(
        TraceEvent(e.name, "main", CPU, 0, e.total_ns, e.call_count, self_ns=e.self_ns)
        for e in symbolic_entries()
    )
    return TraceSet(events, SYMBOLIC_LABEL, SYMBOLIC_WALL_NS, SourceFormat.FLAT_PROFILE)


def symbolic_profile_text() -> str:
    return format_flat_table(symbolic_entries(), SYMBOLIC_WALL_NS)


# ---------------------------------------------------------------------------
# shipped files


def reference_dir() -> Path:
    return Path(str(resources.files("nsprof").joinpath("data", "reference")))


def profiles_dir() -> Path:
    return Path(str(resources.files("nsprof").joinpath("data", "profiles")))


def write_reference(outdir: Path) -> List[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for row in PUBLISHED:
        path = outdir / f"{row.file_stem}.json"
        path.write_bytes(emit_canonical(reference_trace(row.label)))
        written.append(path)
    return written


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if len(args) != 1:
        print("usage: python -m nsprof.reference OUTDIR", file=sys.stderr)
        return 64
    out = Path(args[0])
    for p in write_reference(out):
        print(p)
    prof = out.parent / "profiles" / "nsdr_executor.prof.txt"
    prof.parent.mkdir(parents=True, exist_ok=True)
    prof.write_text(symbolic_profile_text())
    print(prof)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
