"""Per-lane call trees and self-time attribution.

Spans on one lane nest by interval containment. A node's self time is its
duration minus the durations of its direct children, so on every lane the
self times of all nodes add up exactly to the summed root durations.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, Iterator, List, Optional, Tuple

from .errors import NegativeSelf, PartialOverlap
from .trace import Device, Shapes, SourceFormat, TraceEvent, TraceSet

if TYPE_CHECKING:
    from .taxonomy import CategoryId


@dataclass(frozen=True)
class CallNode:
    event: TraceEvent
    children: List["CallNode"] = field(default_factory=list)
    self_ns: Optional[int] = None


@dataclass(slots=True)
class OpRecord:
    """The unit of classification and aggregation.

    ``raw_self_ns``/``raw_total_ns`` hold the measured values once a
    compensation has rescaled ``self_ns``/``total_ns``; they stay ``None``
    on unscaled records.
    """

    name: str
    device: Device
    lane_id: str
    self_ns: int
    total_ns: int
    call_count: int = 1
    shapes: Optional[Shapes] = None
    category: Optional["CategoryId"] = None
    raw_self_ns: Optional[int] = None
    raw_total_ns: Optional[int] = None
    bytes_moved: Optional[int] = None

    def with_category(self, category: "CategoryId") -> "OpRecord":
        return OpRecord(
            self.name, self.device, self.lane_id, self.self_ns, self.total_ns, self.call_count,
            self.shapes, category, self.raw_self_ns, self.raw_total_ns, self.bytes_moved,
        )


@dataclass(frozen=True)
class Clip:
    lane_id: str
    name: str
    clipped_ns: int


@dataclass
class Forest:
    """Root call nodes per lane, in order of first appearance of each lane."""

    lanes: Dict[str, List[CallNode]]
    clips: List[Clip] = field(default_factory=list)

    @property
    def clipped_ns(self) -> int:
        return sum(c.clipped_ns for c in self.clips)

    def __getitem__(self, lane: str) -> List[CallNode]:
        return self.lanes[lane]

    def __iter__(self):
        return iter(self.lanes)

    def __len__(self) -> int:
        return len(self.lanes)

    def nodes(self, lane: Optional[str] = None) -> Iterator[CallNode]:
        """Pre-order walk over one lane, or over all lanes in order."""
        lanes = [lane] if lane is not None else list(self.lanes)
        for ln in lanes:
            stack = list(reversed(self.lanes[ln]))
            while stack:
                node = stack.pop()
                yield node
                stack.extend(reversed(node.children))


def _lane_groups(trace: TraceSet) -> Dict[str, List[TraceEvent]]:
    groups: Dict[str, List[TraceEvent]] = {}
    for ev in trace.events:
        groups.setdefault(ev.lane_id, []).append(ev)
    return groups


def _sweep(
    lane: str,
    events: List[TraceEvent],
    on_overlap: Callable[[TraceEvent, TraceEvent], Optional[TraceEvent]],
) -> List[CallNode]:
    # Sorting by (start, -duration, input position) puts every parent before
    # its children; for identical intervals the later input becomes the child.
    order = sorted(range(len(events)), key=lambda i: (events[i].start_ns, -events[i].duration_ns, i))
    roots: List[CallNode] = []
    stack: List[CallNode] = []
    for i in order:
        ev = events[i]
        while stack and stack[-1].event.end_ns <= ev.start_ns:
            stack.pop()
        if stack and ev.end_ns > stack[-1].event.end_ns:
            replacement = on_overlap(stack[-1].event, ev)
            if replacement is not None:
                ev = replacement
        node = CallNode(ev)
        (stack[-1].children if stack else roots).append(node)
        stack.append(node)
    return roots


def build_forest(trace: TraceSet, clip: bool = False) -> Forest:
    """Nest the spans of every lane by interval containment.

    Shared boundaries count as containment. Two spans that overlap without
    one containing the other raise :class:`PartialOverlap`, unless ``clip``
    is set, in which case the later span is truncated at its parent's end
    and the truncated amount is recorded in :attr:`Forest.clips`.
    """
    if trace.source_format is SourceFormat.FLAT_PROFILE:
        raise ValueError("flat profiles carry no span structure; use flatten_flat")
    clips: List[Clip] = []
    lanes: Dict[str, List[CallNode]] = {}
    for lane, events in _lane_groups(trace).items():

        def overlap(parent: TraceEvent, ev: TraceEvent, lane=lane) -> TraceEvent:
            if not clip:
                raise PartialOverlap(lane, parent, ev)
            clips.append(Clip(lane, ev.name, ev.end_ns - parent.end_ns))
            return dataclasses.replace(ev, duration_ns=parent.end_ns - ev.start_ns)

        lanes[lane] = _sweep(lane, events, overlap)
    return Forest(lanes, clips)


def find_partial_overlaps(trace: TraceSet) -> List[Tuple[str, TraceEvent, TraceEvent]]:
    """Every (lane, enclosing span, offending span) pair that breaks nesting."""
    found: List[Tuple[str, TraceEvent, TraceEvent]] = []
    if trace.source_format is SourceFormat.FLAT_PROFILE:
        return found
    for lane, events in _lane_groups(trace).items():

        def overlap(parent, ev, lane=lane):
            found.append((lane, parent, ev))
            return dataclasses.replace(ev, duration_ns=parent.end_ns - ev.start_ns)

        _sweep(lane, events, overlap)
    return found


def _self_timed(root: CallNode) -> CallNode:
    done: Dict[int, CallNode] = {}
    stack: List[Tuple[CallNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if not expanded:
            stack.append((node, True))
            stack.extend((c, False) for c in node.children)
            continue
        kids = [done.pop(id(c)) for c in node.children]
        self_ns = node.event.duration_ns - sum(k.event.duration_ns for k in kids)
        if self_ns < 0:
            raise NegativeSelf(
                f"children of {node.event.name!r} last {-self_ns} ns longer than the span itself"
            )
        done[id(node)] = CallNode(node.event, kids, self_ns)
    return done[id(root)]


def compute_self_times(forest: Forest) -> Forest:
    """Return a copy of ``forest`` with ``self_ns`` set on every node."""
    lanes = {lane: [_self_timed(r) for r in roots] for lane, roots in forest.lanes.items()}
    return Forest(lanes, list(forest.clips))


def flatten(forest: Forest) -> List[OpRecord]:
    """One record per node, lanes in order, nodes in pre-order."""
    out: List[OpRecord] = []
    for node in forest.nodes():
        ev = node.event
        if node.self_ns is None:
            raise ValueError("self times have not been computed for this forest")
        out.append(
            OpRecord(ev.name, ev.device, ev.lane_id, node.self_ns, ev.duration_ns,
                     ev.call_count, ev.shapes, bytes_moved=ev.bytes_moved)
        )
    return out


def flatten_flat(trace: TraceSet) -> List[OpRecord]:
    """Records straight from flat-profile rows, trusting their self times."""
    if trace.source_format is not SourceFormat.FLAT_PROFILE:
        raise ValueError("flatten_flat needs a flat profile")
    return [
        OpRecord(ev.name, ev.device, ev.lane_id, ev.self_ns, ev.duration_ns, ev.call_count,
                 ev.shapes, bytes_moved=ev.bytes_moved)
        for ev in trace.events
    ]


def to_records(trace: TraceSet, clip: bool = False) -> Tuple[List[OpRecord], Forest]:
    """Records for any trace; the forest is empty for flat profiles."""
    if trace.source_format is SourceFormat.FLAT_PROFILE:
        return flatten_flat(trace), Forest({})
    forest = compute_self_times(build_forest(trace, clip=clip))
    return flatten(forest), forest


@dataclass(frozen=True)
class LaneConservation:
    lane_id: str
    self_sum_ns: int
    root_sum_ns: int

    @property
    def ok(self) -> bool:
        return self.self_sum_ns == self.root_sum_ns


def conservation(forest: Forest) -> List[LaneConservation]:
    """Per lane, the summed self time against the summed root durations."""
    out = []
    for lane, roots in forest.lanes.items():
        self_sum = sum(n.self_ns for n in forest.nodes(lane))
        out.append(LaneConservation(lane, self_sum, sum(r.event.duration_ns for r in roots)))
    return out
