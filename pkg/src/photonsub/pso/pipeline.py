"""Event-forming pipeline: sliding-window coincidence trigger and the
hold-time, seed-rejection and zero-detection stages.

The trigger emulates the hardware exactly: the 9-sub-bin window slides one
sub-bin per clock; when the combined-count centroid lands in the middle
bins {4, 5, 6} the event is recorded with the full signature at that
alignment and the contributing pulses are consumed.  The herald output
fires a fixed pipeline depth after the trigger alignment.

Pulses separated by more than the window length can never interact, so the
scan runs per pulse cluster; single-position clusters (the overwhelmingly
common case) take a closed-form vectorized path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .centroid import TRIGGER_BINS, centroid_bins, pack_signature

PIPELINE_DEPTH_SUBBINS = 27
SUBBINS_PER_COARSE = 3
ZERO_DETECTION_RATE_CAP = 2 ** 17


@dataclass
class EventBatch:
    """Triggered events in time order (struct-of-arrays)."""

    alignment: np.ndarray      # window start, 300-MHz sub-bins
    coarse: np.ndarray         # 100-MHz timetag of the event
    signature: np.ndarray      # packed 64-bit detection signature
    emit_subbin: np.ndarray    # herald output time, sub-bins
    sum_a: np.ndarray
    sum_b: np.ndarray

    @property
    def size(self) -> int:
        return self.alignment.size

    def take(self, mask_or_idx) -> "EventBatch":
        return EventBatch(*(getattr(self, f)[mask_or_idx] for f in
                            ("alignment", "coarse", "signature",
                             "emit_subbin", "sum_a", "sum_b")))

    @staticmethod
    def concatenate(batches):
        batches = [b for b in batches if b.size]
        if not batches:
            return empty_events()
        return EventBatch(*(np.concatenate([getattr(b, f) for b in batches])
                            for f in ("alignment", "coarse", "signature",
                                      "emit_subbin", "sum_a", "sum_b")))


def empty_events() -> EventBatch:
    z = np.zeros(0, dtype=np.int64)
    return EventBatch(z, z.copy(), np.zeros(0, dtype=np.uint64), z.copy(),
                      z.copy(), z.copy())


def _coarse_of_alignment(s):
    # the trigger flag crosses into the 100-MHz domain at a fixed offset
    # from the window start; calibration absorbs the absolute value
    return (s + 4) // SUBBINS_PER_COARSE


def coincidence_pipeline(subbins, sides) -> EventBatch:
    """Run the trigger over a pulse stream.

    subbins: absolute 300-MHz times, int; sides: 0 for A, 1 for B.  Pulses
    need not be sorted.  Every triggered event is returned (the
    coincidence/singles gate is a downstream save filter).
    """
    subbins = np.asarray(subbins, dtype=np.int64)
    sides = np.asarray(sides, dtype=np.int64)
    if subbins.shape != sides.shape:
        raise ValueError("subbins and sides must have equal shapes")
    if subbins.size == 0:
        return empty_events()
    order = np.argsort(subbins, kind="stable")
    subbins = subbins[order]
    sides = sides[order]

    # aggregate counts per unique (subbin, side)
    key = subbins * 2 + sides
    uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    upos = uniq >> 1
    uside = uniq & 1
    # positions with any counts, cluster split where gaps exceed the window
    pos_sorted = np.unique(upos)
    gap_break = np.nonzero(np.diff(pos_sorted) > 8)[0]
    cluster_starts = np.concatenate(([0], gap_break + 1))
    cluster_ends = np.concatenate((gap_break + 1, [pos_sorted.size]))

    single_pos = []
    single_a = []
    single_b = []
    general = []
    # map position -> (count_a, count_b)
    ca = np.zeros(pos_sorted.size, dtype=np.int64)
    cb = np.zeros(pos_sorted.size, dtype=np.int64)
    idx_of = np.searchsorted(pos_sorted, upos)
    np.add.at(ca, idx_of[uside == 0], counts[uside == 0])
    np.add.at(cb, idx_of[uside == 1], counts[uside == 1])

    for st, en in zip(cluster_starts, cluster_ends):
        if en - st == 1:
            single_pos.append(pos_sorted[st])
            single_a.append(ca[st])
            single_b.append(cb[st])
        else:
            general.append((pos_sorted[st:en], ca[st:en], cb[st:en]))

    batches = []
    if single_pos:
        batches.append(_single_position_events(
            np.array(single_pos), np.array(single_a), np.array(single_b)))
    for pos, a, b in general:
        batches.append(_scan_cluster(pos, a, b))
    out = EventBatch.concatenate(batches)
    order = np.argsort(out.alignment, kind="stable")
    return out.take(order)


def _single_position_events(pos, ca, cb) -> EventBatch:
    """All counts at one sub-bin: the centroid equals the position index,
    which first enters the trigger set at window index 6."""
    s = pos - 6
    a9 = np.zeros((pos.size, 9), dtype=np.int64)
    b9 = np.zeros((pos.size, 9), dtype=np.int64)
    a9[:, 6] = ca
    b9[:, 6] = cb
    sig = np.atleast_1d(pack_signature(a9, b9))
    return EventBatch(
        alignment=s,
        coarse=_coarse_of_alignment(s),
        signature=sig,
        emit_subbin=s + PIPELINE_DEPTH_SUBBINS,
        sum_a=ca.copy(),
        sum_b=cb.copy(),
    )


def _scan_cluster(pos, ca, cb) -> EventBatch:
    """Alignment-by-alignment scan of one pulse cluster with consumption."""
    lo = int(pos[0]) - 8
    hi = int(pos[-1])
    width = hi - lo + 9
    a = np.zeros(width, dtype=np.int64)
    b = np.zeros(width, dtype=np.int64)
    a[pos - lo] = ca
    b[pos - lo] = cb
    idx = np.arange(9)
    al, sg, sa, sb = [], [], [], []
    for s in range(0, width - 8):
        wa = a[s:s + 9]
        wb = b[s:s + 9]
        tot = int(wa.sum() + wb.sum())
        if tot == 0:
            continue
        num = int(np.dot(idx, wa) + np.dot(idx, wb))
        cen = int(centroid_bins([num], [tot])[0])
        if cen in TRIGGER_BINS:
            al.append(lo + s)
            sg.append(int(pack_signature(wa, wb)[0]))
            sa.append(int(wa.sum()))
            sb.append(int(wb.sum()))
            a[s:s + 9] = 0
            b[s:s + 9] = 0
    s = np.asarray(al, dtype=np.int64)
    return EventBatch(
        alignment=s,
        coarse=_coarse_of_alignment(s),
        signature=np.asarray(sg, dtype=np.uint64),
        emit_subbin=s + PIPELINE_DEPTH_SUBBINS,
        sum_a=np.asarray(sa, dtype=np.int64),
        sum_b=np.asarray(sb, dtype=np.int64),
    )


def coincidence_gate(events: EventBatch, coincidence_only: bool) -> np.ndarray:
    """Save-gate mask: both sides present, or any event in singles mode."""
    if coincidence_only:
        return (events.sum_a > 0) & (events.sum_b > 0)
    return np.ones(events.size, dtype=bool)


def hold_time_filter(coarse_tags, hold_bins: int = 3,
                     keep_leader: bool = False) -> np.ndarray:
    """Mask of events surviving the hold-time check.

    An event is dropped when another event lands within hold_bins coarse
    bins after it; by default both offenders are dropped (a too-close
    follower distorts the leader's signature into a partial double
    subtraction).  keep_leader retains the earlier event instead.
    """
    t = np.asarray(coarse_tags, dtype=np.int64)
    if hold_bins < 0:
        raise ValueError("hold_bins must be >= 0")
    if t.size <= 1 or hold_bins == 0:
        return np.ones(t.size, dtype=bool)
    if np.any(np.diff(t) < 0):
        raise ValueError("coarse tags must be sorted")
    gap_next = np.diff(t)
    too_close_next = np.concatenate([gap_next <= hold_bins, [False]])
    if keep_leader:
        return ~np.concatenate([[False], gap_next <= hold_bins])
    too_close_prev = np.concatenate([[False], gap_next <= hold_bins])
    return ~(too_close_next | too_close_prev)


def seed_rejection_filter(coarse_tags, offset: int, width: int,
                          period: int) -> np.ndarray:
    """Mask of events outside the phase-stabilization seed window.

    Drops tags whose position modulo the seed period falls inside
    [offset, offset + width); width 0 disables the filter.
    """
    t = np.asarray(coarse_tags, dtype=np.int64)
    if width == 0:
        return np.ones(t.size, dtype=bool)
    if not 0 <= width < period:
        raise ValueError("need 0 <= width < period")
    phase = (t - offset) % period
    return ~(phase < width)


def zero_detection_tags(rate_per_overflow: int, span, overflow_period: int,
                        event_tags, hold_bins: int,
                        rng: np.random.Generator):
    """Synthetic no-subtraction sample times inside [span[0], span[1]).

    Candidates are laid out at the configured rate with sub-stride jitter,
    then any candidate within the hold window of a real event is discarded
    (they would not have been saved as zero-detection data).  Returns
    (tags, attempt_count).
    """
    if rate_per_overflow < 0:
        raise ValueError("rate must be non-negative")
    if rate_per_overflow > ZERO_DETECTION_RATE_CAP:
        raise ValueError(
            f"zero-detection rate {rate_per_overflow} exceeds the "
            f"2^17 per-overflow cap")
    lo, hi = span
    if rate_per_overflow == 0 or hi <= lo:
        return np.zeros(0, dtype=np.int64), 0
    stride = overflow_period / rate_per_overflow
    n = int((hi - lo) / stride)
    base = lo + (np.arange(n) + rng.random(n) * 0.5) * stride
    cands = np.unique(base.astype(np.int64))
    cands = cands[(cands >= lo) & (cands < hi)]
    ev = np.sort(np.asarray(event_tags, dtype=np.int64))
    if ev.size:
        right = np.searchsorted(ev, cands)
        left = right - 1
        d_right = np.where(right < ev.size, ev[np.minimum(right, ev.size - 1)]
                           - cands, np.iinfo(np.int64).max)
        d_left = np.where(left >= 0, cands - ev[np.maximum(left, 0)],
                          np.iinfo(np.int64).max)
        clear = (np.minimum(d_left, d_right) > hold_bins)
        cands = cands[clear]
    if n and cands.size < n // 2:
        warnings.warn(
            f"zero-detection rate infeasible: {cands.size} of {n} attempts "
            "found a clear gap", stacklevel=2)
    return cands, n
