"""Trip-layer descriptors: timing, daily motifs, tours and co-travel.

Motif parsing works on the collapsed daily purpose walk ``s0 ... sn``. The
walk is cut into segments at every return to ``s0``; each segment is then
labelled with this table (k = number of edges):

===========================================  ====================
segment shape                                motif
===========================================  ====================
open, k = 1                                  single_no_return
closed, one intermediate node                out_and_back
open, k >= 2, all nodes distinct             chain
closed, >= 2 intermediates, none repeated    single_cycle
closed, one intermediate visited twice,      double_cycle
both loops through it have >= 3 edges
closed, one intermediate visited twice,      cycle_chain
one loop >= 3 edges and the other a spur
open, walk ends by closing a >= 3-edge       cycle_chain
loop on an earlier node
anything else                                other
===========================================  ====================

``other`` segments are tallied but excluded from motif fractions.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from itertools import groupby

import numpy as np

from .config import DEFAULT_ANCHORS, DEFAULT_PEAK_WINDOWS

MOTIFS = (
    "single_no_return", "out_and_back", "chain",
    "single_cycle", "double_cycle", "cycle_chain",
)
OTHER = "other"


# -- spatiotemporal ------------------------------------------------------------

def in_peak(minute, windows=DEFAULT_PEAK_WINDOWS):
    return any(lo <= minute < hi for lo, hi in windows)


def spatiotemporal_stats(trips, peak_windows=DEFAULT_PEAK_WINDOWS):
    if not trips:
        raise ValueError("spatiotemporal_stats needs at least one trip")
    dep = np.array([t.depart for t in trips], dtype=float)
    dur = np.array([t.duration_min for t in trips], dtype=float)
    dist = np.array([t.distance_km for t in trips], dtype=float)
    speed = dist / (dur / 60.0)
    f_rush = float(np.mean([in_peak(t.depart, peak_windows) for t in trips]))
    return {
        "f_rush": f_rush,
        "f_offpeak": 1.0 - f_rush,
        "f_weekend": float(np.mean([t.weekday >= 5 for t in trips])),
        "depart_first": float(dep.min()),
        "depart_mean": float(dep.mean()),
        "depart_last": float(dep.max()),
        "duration_mean": float(dur.mean()),
        "duration_max": float(dur.max()),
        "speed_mean": float(speed.mean()),
        "speed_max": float(speed.max()),
        "distance_mean": float(dist.mean()),
        "distance_max": float(dist.max()),
    }


# -- motifs --------------------------------------------------------------------

@dataclass
class DaySequence:
    day_id: object
    walk: tuple
    trips: list = field(default_factory=list)

    @property
    def n_edges(self):
        return len(self.walk) - 1


def collapse_walk(purposes):
    return tuple(k for k, _ in groupby(purposes))


def collapse_day(day_trips):
    """Purpose walk of one day with consecutive duplicates merged."""
    if not day_trips:
        raise ValueError("empty day")
    seq = [day_trips[0].origin_purpose]
    for t in day_trips:
        if t.origin_purpose != seq[-1]:
            seq.append(t.origin_purpose)
        seq.append(t.dest_purpose)
    return DaySequence(day_trips[0].day, collapse_walk(seq), list(day_trips))


def split_segments(walk):
    """Cut a collapsed walk at every return to its first node."""
    walk = tuple(walk)
    if len(walk) < 2:
        return []
    s0 = walk[0]
    segs, start = [], 0
    for i in range(1, len(walk)):
        if walk[i] == s0:
            segs.append(walk[start:i + 1])
            start = i
    if start < len(walk) - 1:
        segs.append(walk[start:])
    return segs


def classify_segment(seg):
    k = len(seg) - 1
    closed = seg[-1] == seg[0]
    inner = seg[1:-1] if closed else seg[1:]
    counts = Counter(inner)
    repeated = [v for v, c in counts.items() if c > 1]

    if not repeated:
        if closed:
            return "out_and_back" if k == 2 else "single_cycle"
        return "single_no_return" if k == 1 else "chain"

    if len(repeated) != 1 or counts[repeated[0]] != 2:
        return OTHER
    x = repeated[0]
    i = seg.index(x)
    j = seg.index(x, i + 1)
    loop = j - i
    if closed:
        outer = k - loop
        if loop >= 3 and outer >= 3:
            return "double_cycle"
        if max(loop, outer) >= 3 and min(loop, outer) == 2:
            return "cycle_chain"
        return OTHER
    if j == k and loop >= 3:
        return "cycle_chain"
    return OTHER


@dataclass
class MotifTally:
    counts: dict = field(default_factory=lambda: dict.fromkeys(MOTIFS + (OTHER,), 0))

    @property
    def M(self):
        return sum(self.counts[m] for m in MOTIFS)

    def add(self, label, n=1):
        self.counts[label] += n

    def fractions(self):
        m = self.M
        if m == 0:
            return {k: float("nan") for k in MOTIFS}
        return {k: self.counts[k] / m for k in MOTIFS}


def segment_and_classify_motifs(day, tally=None):
    """Classify every segment of a collapsed day into ``tally``."""
    tally = tally if tally is not None else MotifTally()
    walk = day.walk if isinstance(day, DaySequence) else tuple(day)
    for seg in split_segments(walk):
        tally.add(classify_segment(seg))
    return tally


def motif_entropy(tally):
    """Entropy (bits) over the six canonical motifs; 0 when M = 0."""
    counts = np.array([tally.counts[m] for m in MOTIFS], dtype=float)
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    h = -float(np.sum(p * np.log2(p)))
    return h if h > 0 else 0.0


def days_of(trips):
    return [list(g) for _, g in groupby(trips, key=lambda t: t.day)]


def motif_tally(trips):
    tally = MotifTally()
    for day in days_of(trips):
        segment_and_classify_motifs(collapse_day(day), tally)
    return tally


# -- tours ---------------------------------------------------------------------

@dataclass(frozen=True)
class Tour:
    anchor: str
    start: int
    end: int
    modes: frozenset
    closed: bool

    @property
    def multimodal(self):
        return len(self.modes) >= 2


def extract_tours(trips, anchors=DEFAULT_ANCHORS):
    """Tours run from a departure at an anchor to the next arrival at any anchor.

    A tour still open when the data end is returned with ``closed=False``.
    """
    anchors = set(anchors)
    tours = []
    start = anchor = None
    modes = set()
    for i, t in enumerate(trips):
        if start is None:
            if t.origin_purpose not in anchors:
                continue
            start, anchor, modes = i, t.origin_purpose, set()
        modes.update(t.modes)
        if t.dest_purpose in anchors:
            tours.append(Tour(anchor, start, i, frozenset(modes), True))
            start = None
    if start is not None:
        tours.append(Tour(anchor, start, len(trips) - 1, frozenset(modes), False))
    return tours


def n_closed(tours):
    return sum(1 for t in tours if t.closed)


def multimodal_fraction(tours):
    """Share of closed tours with at least two distinct modes (0 if none)."""
    closed = [t for t in tours if t.closed]
    if not closed:
        return 0.0
    return sum(t.multimodal for t in closed) / len(closed)


def anchor_shares(tours, anchors=DEFAULT_ANCHORS):
    closed = [t for t in tours if t.closed]
    if not closed:
        return {a: float("nan") for a in anchors}
    c = Counter(t.anchor for t in closed)
    return {a: c[a] / len(closed) for a in anchors}


# -- co-travel -----------------------------------------------------------------

def companion_type(trip):
    """'hh' wins over 'nonhh' when both companion kinds are present."""
    if trip.n_hh_companions > 0:
        return "hh"
    if trip.n_nonhh_companions > 0:
        return "nonhh"
    return "solo"


def cotravel_fractions(trips):
    if not trips:
        raise ValueError("cotravel_fractions needs at least one trip")
    c = Counter(companion_type(t) for t in trips)
    n = len(trips)
    f_solo = c["solo"] / n
    return {
        "f_solo": f_solo,
        "f_hh": c["hh"] / n,
        "f_nonhh": c["nonhh"] / n,
        # same as 1 - f_solo, but exact as a ratio of counts
        "f_comp": (c["hh"] + c["nonhh"]) / n,
    }
