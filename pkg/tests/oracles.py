"""Independent reference computations and random generators used by the tests.

Nothing in here calls into the code paths it is used to check.
"""

import random
import string
from fractions import Fraction

import numpy as np

from nsprof.trace import Device, SourceFormat, TraceEvent, TraceSet


def random_tree(rng, start, end, depth=0, max_depth=12, max_fanout=8, lane="L0", out=None, min_width=0,
                stop=None):
    """Random properly nested spans inside [start, end); pre-order list of TraceEvents.

    With ``min_width`` > 0 no span is narrower than that, which keeps
    containment unambiguous for the brute-force parent oracle. ``stop`` fixes
    the chance that a non-root node gets no children; by default it grows
    with depth. The root always gets children when it is wide enough.
    """
    if out is None:
        out = []
    out.append(TraceEvent(f"op{len(out)}", lane, Device.CPU, start, end - start))
    p_stop = 0.25 + depth * 0.06 if stop is None else stop
    if depth >= max_depth or end - start < 2 or (depth and rng.random() < p_stop):
        return out
    k = rng.randint(1, max_fanout)
    cuts = sorted(rng.randint(start, end) for _ in range(2 * k))
    for i in range(k):
        a, b = cuts[2 * i], cuts[2 * i + 1]
        if b - a < min_width:
            continue
        random_tree(rng, a, b, depth + 1, max_depth, max_fanout, lane, out, min_width, stop)
    return out


def paint_self_times(events):
    """Self time per event by painting each nanosecond with its deepest owner.

    ``events`` must be one properly nested tree listed parents-first.
    Returns a list of self times aligned with ``events``.
    """
    lo = min(e.start_ns for e in events)
    hi = max(e.end_ns for e in events)
    owner = np.full(hi - lo, -1, dtype=np.int64)
    for i, e in enumerate(events):
        owner[e.start_ns - lo:e.end_ns - lo] = i
    counts = np.bincount(owner[owner >= 0], minlength=len(events))
    return counts.tolist()


def brute_force_parents(events):
    """Parent index per event by O(n^2) containment, smallest container wins."""
    parents = []
    for i, e in enumerate(events):
        best = None
        for j, p in enumerate(events):
            if i == j:
                continue
            contains = p.start_ns <= e.start_ns and e.end_ns <= p.end_ns
            if not contains:
                continue
            if p.duration_ns == e.duration_ns and p.start_ns == e.start_ns and j > i:
                continue  # identical interval: the earlier one is the parent
            if best is None or p.duration_ns < events[best].duration_ns or (
                p.duration_ns == events[best].duration_ns and j > best
            ):
                best = j
        parents.append(best)
    return parents


def random_name(rng, lo=3, hi=14):
    return "".join(rng.choice(string.ascii_lowercase + "_:") for _ in range(rng.randint(lo, hi)))


def random_event(rng, lane_count=3):
    shapes = None
    if rng.random() < 0.4:
        shapes = tuple(tuple(rng.randint(1, 4096) for _ in range(rng.randint(0, 4))) for _ in range(rng.randint(0, 3)))
    return TraceEvent(
        name=random_name(rng, 1, 30) + rng.choice(["", "é", "\"q\"", "\\", "ü✓"]),
        lane_id=str(rng.randrange(lane_count)),
        device=rng.choice(list(Device)),
        start_ns=rng.randint(-10**12, 10**15),
        duration_ns=rng.randint(0, 10**12),
        call_count=rng.randint(1, 10**6),
        shapes=shapes,
        bytes_moved=rng.choice([None, rng.randint(0, 2**40)]),
    )


def random_traceset(rng, max_events=30):
    events = tuple(random_event(rng) for _ in range(rng.randint(0, max_events)))
    wall = rng.choice([None, rng.randint(0, 10**15)])
    return TraceSet(events, "run-" + random_name(rng), wall, SourceFormat.CANONICAL)


def exact_sum(values):
    return sum(Fraction(v) for v in values)
