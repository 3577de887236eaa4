"""Photon-subtraction orchestrator: event filtering, HDS queries, triage.

The engine consumes triggered events half-buffer by half-buffer, mirroring
the hardware loop that waits for the timestamp counter to cross the half
boundary and then drains the event buffer.  For every kept event it
queries both homodyne servers at the event timetag plus the per-mode
calibrated delay, excludes placeholder (flyback) responses, and triages
the records into per-signature-class datasets.  Events whose query tags
have not sealed yet are retried on the next epoch; a staleness error
aborts the batch for that epoch, as the hardware does.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np

from ..hds import protocol as hds_protocol
from ..hds.words import is_placeholder, unpack_words
from .centroid import signature_class
from .pipeline import (EventBatch, coincidence_gate, coincidence_pipeline,
                       empty_events, hold_time_filter, seed_rejection_filter,
                       zero_detection_tags)
from .records import DatasetWriter, RunReport, build_records

QUERY_BATCH_WORDS = 16_000

HERALD_DTYPE = np.dtype([("emit_subbin", "<i8"), ("signature", "<u8")])


@dataclass(frozen=True)
class PsoRunConfig:
    delay_a: int = 0
    delay_b: int = 0
    hold_bins: int = 3
    keep_leader: bool = False
    coincidence_only: bool = True
    seed_window_offset: int = 0
    seed_window_width: int = 0
    seed_window_period: int = 1000
    zero_detection_rate: int = 0          # per overflow period
    max_class_sum: int = 3                # detector tree depth per side


class PsoConsole:
    """Live text control over the run configuration.

    Mutations are atomic: the engine snapshots the configuration once per
    epoch, so a command never tears a half-processed batch.
    """

    def __init__(self, config: PsoRunConfig):
        self._config = config
        self._lock = threading.Lock()

    def snapshot(self) -> PsoRunConfig:
        with self._lock:
            return self._config

    def process_command(self, line: str) -> str:
        parts = line.strip().split()
        if not parts:
            return "ERR empty command"
        cmd = parts[0].upper()
        try:
            with self._lock:
                if cmd == "GET":
                    return self._get(parts[1].upper())
                if cmd == "SET":
                    return self._set(parts[1].upper(), parts[2:])
                if cmd == "STATUS":
                    c = self._config
                    return (f"DELAYS {c.delay_a} {c.delay_b} HOLD {c.hold_bins} "
                            f"ZDR {c.zero_detection_rate} MODE "
                            f"{'COINC' if c.coincidence_only else 'SINGLES'}")
        except (IndexError, ValueError) as err:
            return f"ERR {err}"
        return f"ERR unknown command {cmd}"

    def _set(self, key, args) -> str:
        c = self._config
        if key == "DELAYA":
            c = replace(c, delay_a=int(args[0]))
        elif key == "DELAYB":
            c = replace(c, delay_b=int(args[0]))
        elif key == "HOLD":
            c = replace(c, hold_bins=int(args[0]))
        elif key == "ZDR":
            c = replace(c, zero_detection_rate=int(args[0]))
        elif key == "KEEPLEADER":
            c = replace(c, keep_leader=args[0] not in ("0", "OFF", "off"))
        elif key == "MODE":
            c = replace(c, coincidence_only=args[0].upper() != "SINGLES")
        elif key == "SEEDWIN":
            if args[0].upper() == "OFF":
                c = replace(c, seed_window_width=0)
            else:
                c = replace(c, seed_window_offset=int(args[0]),
                            seed_window_width=int(args[1]),
                            seed_window_period=int(args[2]))
        else:
            return f"ERR unknown key {key}"
        self._config = c
        return "OK"

    def _get(self, key) -> str:
        c = self._config
        vals = {"DELAYA": c.delay_a, "DELAYB": c.delay_b, "HOLD": c.hold_bins,
                "ZDR": c.zero_detection_rate,
                "KEEPLEADER": int(c.keep_leader),
                "MODE": "COINC" if c.coincidence_only else "SINGLES"}
        if key not in vals:
            return f"ERR unknown key {key}"
        return str(vals[key])


class PsoEngine:
    """Acquisition controller bound to two homodyne-server clients."""

    def __init__(self, client_a, client_b, console: PsoConsole,
                 writer: DatasetWriter, half_words: int,
                 zero_rng: np.random.Generator | None = None):
        self.client_a = client_a
        self.client_b = client_b
        self.console = console
        self.writer = writer
        self.half = half_words
        self.capacity = 2 * half_words
        self.report = RunReport()
        self.heralds: list = []
        self._pending = empty_events()
        self._zero_rng = zero_rng or np.random.default_rng(0)

    # ------------------------------------------------------------------
    def start_run(self, offset_a: int = 0, offset_b: int = 0,
                  slope_check: bool = True):
        """Start-pulse handshake: zero both server clocks, arm the
        tomography query mode, and verify the memory-overflow numbers came
        up aligned.

        Slope checking stays on for quadrature acquisition so flyback
        samples come back as placeholder words instead of phase garbage.
        """
        for client, offset in ((self.client_a, offset_a),
                               (self.client_b, offset_b)):
            client.start_run(offset)
            client.set_config(mode="samples", integration_window=1,
                              slope_check=slope_check)
        sa = self.client_a.status()
        sb = self.client_b.status()
        if sa["overflow_number"] != sb["overflow_number"]:
            raise RuntimeError("servers came up with misaligned overflow numbers")

    def collect_shot_noise(self, epoch: int, span, n: int,
                           rng: np.random.Generator):
        """Vacuum (shutter-closed) calibration samples from both servers.

        span is a global coarse-tag window inside the sealed half; returns
        (a_codes, b_codes) homodyne halves with placeholders dropped.
        """
        lo, hi = span
        tags = rng.integers(lo, hi, size=n)
        tags.sort()
        cfg = self.console.snapshot()
        out = []
        for client, delay in ((self.client_a, cfg.delay_a),
                              (self.client_b, cfg.delay_b)):
            q = tags + delay
            words = self._query_epoch_words(client, q)
            good = ~is_placeholder(words)
            a, _ = unpack_words(words[good])
            out.append(a.astype(np.float64))
        return out

    # ------------------------------------------------------------------
    def process_pulses(self, subbins, sides) -> EventBatch:
        """Trigger stage: every centroid-valid window becomes an event and
        fires the herald output; gating happens downstream."""
        events = coincidence_pipeline(subbins, sides)
        self.report.triggered += events.size
        if events.size:
            self.heralds.append((events.emit_subbin.copy(),
                                 events.signature.copy()))
        return events

    def process_sealed_half(self, epoch: int, subbins, sides,
                            zero_span=None) -> dict:
        """Full per-epoch pass: filters, queries, triage, bookkeeping.

        epoch: global half index k (half k spans coarse tags
        [k*half, (k+1)*half)).  Pulses are the epoch's detector stream in
        300-MHz sub-bins; zero_span optionally restricts where
        zero-detection sampling may look (defaults to the whole half).
        """
        cfg = self.console.snapshot()
        all_events = self.process_pulses(subbins, sides)

        gate = coincidence_gate(all_events, cfg.coincidence_only)
        self.report.gated_out += int(np.count_nonzero(~gate))
        # any detection activity within the hold window spoils a held
        # event, including activity the save gate would discard
        keep = hold_time_filter(all_events.coarse, cfg.hold_bins,
                                cfg.keep_leader)
        self.report.hold_dropped += int(np.count_nonzero(gate & ~keep))
        events = all_events.take(gate & keep)

        keep = seed_rejection_filter(events.coarse, cfg.seed_window_offset,
                                     cfg.seed_window_width,
                                     cfg.seed_window_period)
        self.report.seed_dropped += int(np.count_nonzero(~keep))
        events = events.take(keep)

        events = EventBatch.concatenate([self._pending, events])

        win_lo = epoch * self.half
        win_hi = win_lo + self.half
        margin = max(abs(cfg.delay_a), abs(cfg.delay_b))
        qa = events.coarse + cfg.delay_a
        qb = events.coarse + cfg.delay_b
        fits = (qa >= win_lo) & (qa < win_hi) & (qb >= win_lo) & (qb < win_hi)
        future = (qa >= win_hi) | (qb >= win_hi)
        expired = ~fits & ~future
        self._pending = events.take(future)
        self.report.deferred += int(np.count_nonzero(expired))
        events = events.take(fits)

        # zero-detection sampling in the gaps between detection events of
        # any kind, gated or not
        if zero_span is None:
            zero_span = (win_lo + margin + cfg.hold_bins + 1,
                         win_hi - margin - cfg.hold_bins - 1)
        ztags, attempts = zero_detection_tags(
            cfg.zero_detection_rate, zero_span, self.capacity,
            all_events.coarse, cfg.hold_bins, self._zero_rng)
        self.report.zero_detection_attempted += attempts
        self.report.zero_detection_emitted += ztags.size

        stats = {"events": events.size, "zero": ztags.size}
        try:
            self._query_and_triage(events, ztags, cfg)
        except (hds_protocol.StaleEpochError, hds_protocol.ActiveHalfError):
            # abort this half-buffer batch; events retry on the next epoch
            self._pending = EventBatch.concatenate([self._pending, events])
            stats["aborted"] = True
        return stats

    def herald_stream(self) -> np.ndarray:
        """Every herald output so far as one (emit_subbin, signature)
        record array, consumable in-process or dumped to a file."""
        out = np.zeros(sum(e.size for e, _ in self.heralds),
                       dtype=HERALD_DTYPE)
        pos = 0
        for emit, sig in self.heralds:
            out["emit_subbin"][pos:pos + emit.size] = emit
            out["signature"][pos:pos + emit.size] = sig
            pos += emit.size
        return out

    def save_heralds(self, path):
        with open(path, "wb") as fh:
            fh.write(self.herald_stream().tobytes())

    def flush_expired(self):
        """Drop events still pending at end of run (counted as deferred)."""
        self.report.deferred += self._pending.size
        self._pending = empty_events()

    # ------------------------------------------------------------------
    def _query_epoch_words(self, client, global_tags):
        tags = np.asarray(global_tags, dtype=np.int64)
        if tags.size == 0:
            return np.zeros(0, dtype=np.uint32)
        epochs = tags // self.capacity
        if epochs.min() != epochs.max():
            raise hds_protocol.StaleEpochError(
                "query batch spans a memory-overflow boundary")
        ovf = int(epochs[0])
        buf_tags = tags % self.capacity
        return client.query_samples_batched(ovf, buf_tags,
                                            batch=QUERY_BATCH_WORDS)

    def _query_and_triage(self, events: EventBatch, ztags: np.ndarray,
                          cfg: PsoRunConfig):
        all_coarse = np.concatenate([events.coarse, ztags])
        if all_coarse.size == 0:
            return
        all_sig = np.concatenate([
            events.signature, np.zeros(ztags.size, dtype=np.uint64)])
        order = np.argsort(all_coarse, kind="stable")
        all_coarse = all_coarse[order]
        all_sig = all_sig[order]
        is_zero = all_sig == 0

        words_a = self._query_epoch_words(self.client_a,
                                          all_coarse + cfg.delay_a)
        words_b = self._query_epoch_words(self.client_b,
                                          all_coarse + cfg.delay_b)
        bad = is_placeholder(words_a) | is_placeholder(words_b)
        n_bad = int(np.count_nonzero(bad))
        n_bad_zero = int(np.count_nonzero(bad & is_zero))
        self.report.placeholder_excluded += n_bad - n_bad_zero
        self.report.zero_detection_placeholder += n_bad_zero
        self.report.zero_detection_emitted -= n_bad_zero

        good = ~bad
        coarse = all_coarse[good]
        sig = all_sig[good]
        a_pair = unpack_words(words_a[good])
        b_pair = unpack_words(words_b[good])
        recs = build_records(sig, (coarse // self.capacity).astype(np.uint32),
                             (coarse % self.capacity).astype(np.uint32),
                             a_pair, b_pair)
        sa, sb = signature_class(sig)
        for cls in sorted({(int(x), int(y)) for x, y in zip(sa, sb)}):
            sel = (sa == cls[0]) & (sb == cls[1])
            if cls[0] > cfg.max_class_sum or cls[1] > cfg.max_class_sum:
                continue
            if self.writer.target_reached(cls):
                continue
            self.writer.add(cls, recs[sel])
            self.report.class_counts[cls] = self.report.class_counts.get(
                cls, 0) + int(np.count_nonzero(sel))
        # kept counts detection events that survived to a response word,
        # whether or not their dataset still accepts records
        self.report.kept += int(np.count_nonzero(~is_zero & good))
