"""Operational intensity of shape-annotated operations.

Work is counted in FLOPs with a fused multiply-add as two operations, and
traffic is the compulsory movement of every operand and result once. All
core quantities are exact integers or :class:`fractions.Fraction`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Optional, Sequence, Tuple

from .calltree import OpRecord
from .errors import ShapeMismatch
from .trace import INT64_MAX

DEFAULT_BYTES_PER_ELEMENT = 4
DEFAULT_TALL_SKINNY_RATIO = 64
BALANCE_TOLERANCE = Fraction(1, 20)
ELEMENT_SIZES = (1, 2, 4, 8)


def _checked(value: int, what: str) -> int:
    if value > INT64_MAX:
        raise OverflowError(f"{what} = {value} does not fit in a signed 64-bit integer")
    return value


@dataclass(frozen=True)
class GemmDims:
    """An (m x k) by (k x n) product."""

    m: int
    k: int
    n: int

    def __post_init__(self):
        for name in ("m", "k", "n"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"GEMM dimension {name} must be a positive integer, got {v!r}")


class Boundedness(str, enum.Enum):
    MEMORY_BOUND = "MemoryBound"
    COMPUTE_BOUND = "ComputeBound"
    BALANCED = "Balanced"


@dataclass(frozen=True)
class IntensityEstimate:
    work_flops: int
    traffic_bytes: int
    intensity: Fraction
    tall_skinny: bool = False
    kind: str = "gemm"
    bound: Optional[Boundedness] = None


@dataclass(frozen=True)
class MachineModel:
    peak_flops_per_s: Real
    peak_bytes_per_s: Real

    def __post_init__(self):
        if not self.peak_flops_per_s > 0 or not self.peak_bytes_per_s > 0:
            raise ValueError("peak compute and bandwidth must both be positive")

    @classmethod
    def from_balance(cls, flops_per_byte: Real) -> "MachineModel":
        return cls(flops_per_byte, 1)

    @property
    def machine_balance(self) -> Fraction:
        return _exact(self.peak_flops_per_s) / _exact(self.peak_bytes_per_s)


def _exact(x: Real) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _check_bytes(b: int) -> None:
    if b not in ELEMENT_SIZES:
        raise ValueError(f"bytes per element must be one of {ELEMENT_SIZES}, got {b!r}")


def gemm_work(d: GemmDims) -> int:
    return _checked(2 * d.m * d.k * d.n, "work")


def gemm_traffic(d: GemmDims, bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT) -> int:
    _check_bytes(bytes_per_element)
    return _checked(bytes_per_element * (d.m * d.k + d.k * d.n + d.m * d.n), "traffic")


def is_tall_skinny(d: GemmDims, ratio_threshold: Real = DEFAULT_TALL_SKINNY_RATIO) -> bool:
    if ratio_threshold < 1:
        raise ValueError("tall-and-skinny ratio threshold must be >= 1")
    dims = (d.m, d.k, d.n)
    return Fraction(max(dims), min(dims)) >= _exact(ratio_threshold)


def gemm_intensity(
    d: GemmDims,
    bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT,
    ratio_threshold: Real = DEFAULT_TALL_SKINNY_RATIO,
) -> IntensityEstimate:
    work = gemm_work(d)
    traffic = gemm_traffic(d, bytes_per_element)
    return IntensityEstimate(work, traffic, Fraction(work, traffic), is_tall_skinny(d, ratio_threshold))


def boundedness(estimate: IntensityEstimate, machine: MachineModel) -> Boundedness:
    """Compare intensity with machine balance, allowing a 5% band either side."""
    balance = machine.machine_balance
    if estimate.intensity < balance * (1 - BALANCE_TOLERANCE):
        return Boundedness.MEMORY_BOUND
    if estimate.intensity > balance * (1 + BALANCE_TOLERANCE):
        return Boundedness.COMPUTE_BOUND
    return Boundedness.BALANCED


def elementwise_estimate(
    elements: int,
    ops_per_element: int = 1,
    bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT,
) -> IntensityEstimate:
    """Each element read once and written once, ``ops_per_element`` FLOPs each."""
    _check_bytes(bytes_per_element)
    if elements < 1 or ops_per_element < 1:
        raise ValueError("element count and ops per element must be positive")
    work = _checked(ops_per_element * elements, "work")
    traffic = _checked(2 * bytes_per_element * elements, "traffic")
    return IntensityEstimate(work, traffic, Fraction(work, traffic), False, "elementwise")


def gemm_dims_from_shapes(shapes: Sequence[Sequence[int]]) -> Optional[GemmDims]:
    """Dims of the last two 2-D operands, or ``None`` if there are fewer than two.

    The last two are used so that ``addmm(bias, a, b)`` with a 2-D bias
    resolves to ``a @ b``.
    """
    mats = [tuple(s) for s in shapes if len(s) == 2]
    if len(mats) < 2:
        return None
    (m, k1), (k2, n) = mats[-2], mats[-1]
    if k1 != k2:
        raise ShapeMismatch(f"operands {list(mats[-2])} and {list(mats[-1])} are not conformable")
    return GemmDims(m, k1, n)


def estimate_record(
    record: OpRecord,
    bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT,
    machine: Optional[MachineModel] = None,
    ops_per_element: int = 1,
    ratio_threshold: Real = DEFAULT_TALL_SKINNY_RATIO,
) -> Optional[IntensityEstimate]:
    """Estimate a classified record: GEMM for DenseMM, streaming for ElementWise.

    Other categories, and records without usable shapes, give ``None``.
    """
    if record.category is None:
        raise ValueError(f"record {record.name!r} has not been classified")
    if not record.shapes:
        return None
    cat = record.category.category_name
    if cat == "DenseMM":
        dims = gemm_dims_from_shapes(record.shapes)
        if dims is None:
            return None
        est = gemm_intensity(dims, bytes_per_element, ratio_threshold)
    elif cat == "ElementWise":
        elements = max(math.prod(s) for s in record.shapes)
        est = elementwise_estimate(elements, ops_per_element, bytes_per_element)
    else:
        return None
    if machine is not None:
        est = IntensityEstimate(est.work_flops, est.traffic_bytes, est.intensity,
                                est.tall_skinny, est.kind, boundedness(est, machine))
    return est


def intensity_bound(d: GemmDims, bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT) -> Fraction:
    """Upper bound ``(2 / b) * min(m, k, n)`` on GEMM intensity."""
    return Fraction(2, bytes_per_element) * min(d.m, d.k, d.n)


def describe(est: IntensityEstimate) -> Tuple[str, ...]:
    lines = (
        f"work      {est.work_flops} FLOP",
        f"traffic   {est.traffic_bytes} B",
        f"intensity {est.intensity.numerator}/{est.intensity.denominator} FLOP/B (~{float(est.intensity):.4g})",
        f"tall-skinny {'yes' if est.tall_skinny else 'no'}",
    )
    if est.bound is not None:
        lines += (f"bound     {est.bound.value}",)
    return lines
