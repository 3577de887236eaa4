"""Homodyne detection server: buffer, query engine, control plane, sockets.

The server ingests timetagged dual-ADC sample words into the paged ring
buffer and answers binary timetag queries for the sealed (not currently
written) half of the buffer.  Query processing modes: raw word, integrated
window, slope-checked (phase-drive flyback samples replaced by the
placeholder word), and a threshold-crossing scan for delay calibration.

Concurrency: a single writer ingests; readers are serialized per
connection and touch only sealed data.  Configuration commands take a lock
so acquisition threads always see a consistent snapshot.
"""

from __future__ import annotations

import socket
import socketserver
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import protocol as proto
from .buffer import DEFAULT_PAGES, OVERFLOW_MASK, RingBuffer
from .words import (ADC_MAX, ADC_MIN, PLACEHOLDER_HALF, WORD_DTYPE,
                    pack_words, unpack_words)

INT16_MIN = -32768
INT16_MAX = 32767


@dataclass
class ServerConfig:
    integration_window: int = 1
    slope_check: bool = False
    threshold: int = 2000
    slope_sign: int = +1          # +1 rising, -1 falling
    mode: str = "samples"         # "samples" | "threshold"
    pace_realtime: bool = False   # sleep to approximate the 100-MHz rate


@dataclass
class StatusSnapshot:
    overflow_number: int
    current_timetag: int
    fifo_overflow: bool
    adc_out_of_range: bool
    clock_locked: bool
    halted: bool
    saturation_events: int

    @property
    def data_queries_allowed(self) -> bool:
        return not self.fifo_overflow and not self.adc_out_of_range \
            and self.clock_locked


class ConnectionState:
    """Per-connection parser state: the epoch set by the last keyword
    header, inherited by continuation batches."""

    def __init__(self):
        self.overflow = None


class HomodyneServer:
    SAMPLE_RATE_HZ = 100e6

    def __init__(self, pages: int = DEFAULT_PAGES, page_map_seed: int = 0,
                 config: ServerConfig | None = None):
        self.buffer = RingBuffer(pages=pages, page_map_seed=page_map_seed)
        self.config = config or ServerConfig()
        self._lock = threading.Lock()
        self._halted = False
        self._fifo_overflow = False
        self._adc_out_of_range = False
        self._clock_locked = True
        self._saturation_events = 0
        self._started = False

    # ------------------------------------------------------------------
    # acquisition plane
    # ------------------------------------------------------------------
    def start_run(self, residual_offset: int = 0):
        """Start-pulse handshake: zero the timestamp clock.  The residual
        offset models the comparator-threshold-dependent start skew."""
        if not 0 <= residual_offset <= 2:
            raise ValueError("residual offset must be 0..2 coarse bins")
        with self._lock:
            self.buffer.reset(start_cursor=residual_offset)
            self._started = True

    def ingest(self, words: np.ndarray):
        """Write a chunk of sample words at the current cursor."""
        if self._halted:
            raise RuntimeError("server is halted; RESUME before ingesting")
        words = np.asarray(words, dtype=WORD_DTYPE)
        a, b = unpack_words(words)
        if words.size and (a.min() < ADC_MIN or a.max() > ADC_MAX
                           or b.min() < ADC_MIN or b.max() > ADC_MAX):
            self._adc_out_of_range = True
        self.buffer.write(words)
        if self.config.pace_realtime:
            time.sleep(words.size / self.SAMPLE_RATE_HZ)

    def ingest_samples(self, adc_a, adc_b):
        self.ingest(pack_words(adc_a, adc_b))

    def inject_fault(self, kind: str):
        """Test hook mirroring the FPGA health checks."""
        if kind == "fifo_overflow":
            self._fifo_overflow = True
        elif kind == "adc_range":
            self._adc_out_of_range = True
        elif kind == "clock_unlock":
            self._clock_locked = False
        else:
            raise ValueError(f"unknown fault {kind!r}")

    # ------------------------------------------------------------------
    # epoch / half-buffer accounting
    # ------------------------------------------------------------------
    def status(self) -> StatusSnapshot:
        return StatusSnapshot(
            overflow_number=self.buffer.overflow_number,
            current_timetag=self.buffer.write_cursor,
            fifo_overflow=self._fifo_overflow,
            adc_out_of_range=self._adc_out_of_range,
            clock_locked=self._clock_locked,
            halted=self._halted,
            saturation_events=self._saturation_events,
        )

    def sealed_region(self):
        """((overflow, lo, hi)) describing the currently sealed half, or
        None before the first half fills."""
        buf = self.buffer
        if buf.write_cursor >= buf.half:
            return buf.overflow_number, 0, buf.half
        if buf.overflow_number == 0:
            return None
        return (buf.overflow_number - 1) & OVERFLOW_MASK, buf.half, buf.capacity

    def _classify(self, overflow: int, tags: np.ndarray) -> proto.Status:
        buf = self.buffer
        if tags.size and int(tags.max()) >= buf.capacity:
            return proto.Status.RANGE
        if self._halted:
            # full buffer readable; each tag's epoch must match the request
            epoch = np.where(tags < buf.write_cursor, buf.overflow_number,
                             (buf.overflow_number - 1) & OVERFLOW_MASK)
            return (proto.Status.OK if np.all(epoch == overflow)
                    else proto.Status.STALE_OVERFLOW)
        sealed = self.sealed_region()
        if sealed is not None:
            ovf, lo, hi = sealed
            if overflow == ovf and tags.size \
                    and int(tags.min()) >= lo and int(tags.max()) < hi:
                return proto.Status.OK
        # distinguish touching the live half from a stale epoch
        active_lo = 0 if buf.write_cursor < buf.half else buf.half
        active_hi = active_lo + buf.half
        in_active = (tags >= active_lo) & (tags < active_hi)
        if overflow == buf.overflow_number and bool(np.any(in_active)):
            return proto.Status.ACTIVE_HALF
        return proto.Status.STALE_OVERFLOW

    # ------------------------------------------------------------------
    # query engine
    # ------------------------------------------------------------------
    def query_samples(self, overflow: int, timetags) -> np.ndarray:
        """One response word per timetag in the configured mode."""
        st = self.status()
        if not st.data_queries_allowed:
            raise proto.IntegrityError("server integrity flags are set")
        tags = np.asarray(timetags, dtype=np.int64)
        with self._lock:
            cfg_window = self.config.integration_window
            cfg_slope = self.config.slope_check
        if cfg_window > 1:
            last = tags + cfg_window - 1
            verdict = self._classify(overflow, np.concatenate([tags, last]))
        else:
            verdict = self._classify(overflow, tags)
        if verdict is not proto.Status.OK:
            raise proto.STATUS_EXCEPTIONS.get(
                verdict, lambda m="": proto.ProtocolError(verdict, m))(
                f"{verdict.name} for {tags.size} timetags")
        if cfg_window > 1:
            words = self._integrated_words(tags, cfg_window)
        else:
            words = self.buffer.read(tags)
        if cfg_slope:
            words = self._apply_slope_check(tags, words)
        return words

    def _integrated_words(self, tags: np.ndarray, window: int) -> np.ndarray:
        offsets = np.arange(window)
        grid = tags[:, None] + offsets[None, :]
        a, b = unpack_words(self.buffer.read(grid.ravel()))
        a = a.astype(np.int64).reshape(-1, window).sum(axis=1)
        b = b.astype(np.int64).reshape(-1, window).sum(axis=1)
        sat = ((a < INT16_MIN) | (a > INT16_MAX)
               | (b < INT16_MIN) | (b > INT16_MAX))
        if np.any(sat):
            self._saturation_events += int(np.count_nonzero(sat))
        a = np.clip(a, INT16_MIN, INT16_MAX)
        b = np.clip(b, INT16_MIN, INT16_MAX)
        return (((a & 0xFFFF) << 16) | (b & 0xFFFF)).astype(WORD_DTYPE)

    def _apply_slope_check(self, tags: np.ndarray, words: np.ndarray):
        """Replace flyback samples with the placeholder word.

        A timetag is in the flyback when the phase-drive code decreases
        from the previous sample.  The neighbor is read raw from storage
        (the hardware reads SDRAM directly, with no half accounting)."""
        prev_tags = np.where(tags > 0, tags - 1, 0)
        _, b_now = unpack_words(self.buffer.read(tags))
        _, b_prev = unpack_words(self.buffer.read(prev_tags))
        flyback = (b_now < b_prev) & (tags > 0)
        out = words.copy()
        out[flyback] = np.uint32((PLACEHOLDER_HALF << 16) | PLACEHOLDER_HALF)
        return out

    def threshold_scan(self, overflow: int, start: int, end: int) -> np.ndarray:
        """Timetags in [start, end) where the homodyne ADC crosses the
        configured threshold with the configured slope.

        A crossing is strict: the previous sample on the wrong side, the
        current one at or beyond the threshold.  The scan must not span an
        overflow boundary."""
        st = self.status()
        if not st.data_queries_allowed:
            raise proto.IntegrityError("server integrity flags are set")
        if not (0 <= start < end <= self.buffer.capacity):
            raise proto.ProtocolError(proto.Status.RANGE, "bad scan range")
        tags = np.arange(start, end, dtype=np.int64)
        verdict = self._classify(overflow, tags)
        if verdict is not proto.Status.OK:
            raise proto.STATUS_EXCEPTIONS.get(
                verdict, lambda m="": proto.ProtocolError(verdict, m))(
                f"{verdict.name} for scan [{start}, {end})")
        with self._lock:
            thr = self.config.threshold
            sign = self.config.slope_sign
        a, _ = unpack_words(self.buffer.read(tags))
        a = a.astype(np.int32)
        if sign >= 0:
            hits = (a[:-1] < thr) & (a[1:] >= thr)
        else:
            hits = (a[:-1] > thr) & (a[1:] <= thr)
        return (start + 1 + np.nonzero(hits)[0]).astype(WORD_DTYPE)

    # ------------------------------------------------------------------
    # binary protocol entry
    # ------------------------------------------------------------------
    def handle_request(self, body: np.ndarray,
                       conn: ConnectionState) -> np.ndarray:
        """One request frame in, exactly one response frame out."""
        body = np.asarray(body, dtype=WORD_DTYPE)
        ovf_echo = self.buffer.overflow_number
        if body.size == 0:
            return proto.encode_response(proto.Status.MALFORMED, ovf_echo)
        with self._lock:
            mode = self.config.mode
        if int(body[0]) == proto.KEYWORD:
            if body.size < 2:
                return proto.encode_response(proto.Status.MALFORMED, ovf_echo)
            conn.overflow = int(body[1])
            payload = body[2:]
        else:
            if body.size and int(body.max()) >= self.buffer.capacity:
                # cannot be a continuation batch: timetags never reach the
                # keyword range, so this is a bad keyword
                return proto.encode_response(proto.Status.KEYWORD_MISMATCH,
                                             ovf_echo)
            if conn.overflow is None:
                return proto.encode_response(proto.Status.KEYWORD_MISMATCH,
                                             ovf_echo)
            payload = body
        try:
            if mode == "threshold":
                if payload.size != 2:
                    return proto.encode_response(proto.Status.MALFORMED,
                                                 ovf_echo)
                out = self.threshold_scan(conn.overflow, int(payload[0]),
                                          int(payload[1]))
            else:
                out = self.query_samples(conn.overflow,
                                         payload.astype(np.int64))
        except proto.ProtocolError as err:
            return proto.encode_response(err.status, ovf_echo)
        return proto.encode_response(proto.Status.OK, conn.overflow, out)

    # ------------------------------------------------------------------
    # text control plane
    # ------------------------------------------------------------------
    def control(self, line: str) -> str:
        parts = line.strip().split()
        if not parts:
            return "ERR empty command"
        cmd = parts[0].upper()
        try:
            with self._lock:
                if cmd == "STATUS":
                    st = self.status()
                    flags = []
                    if st.fifo_overflow:
                        flags.append("FIFO")
                    if st.adc_out_of_range:
                        flags.append("ADC")
                    if not st.clock_locked:
                        flags.append("UNLOCKED")
                    if st.halted:
                        flags.append("HALTED")
                    return (f"OVF {st.overflow_number} TT {st.current_timetag} "
                            f"SAT {st.saturation_events} "
                            f"FLAGS {','.join(flags) if flags else 'NONE'}")
                if cmd == "HALT":
                    self._halted = True
                    return "OK"
                if cmd == "RESUME":
                    self._halted = False
                    return "OK"
                if cmd == "START":
                    offset = int(parts[1]) if len(parts) > 1 else 0
                    self.buffer.reset(start_cursor=offset)
                    self._started = True
                    return "OK"
                if cmd == "SET":
                    return self._set(parts[1].upper(), parts[2:])
                if cmd == "GET":
                    return self._get(parts[1].upper())
        except (IndexError, ValueError) as err:
            return f"ERR {err}"
        return f"ERR unknown command {cmd}"

    def _set(self, key: str, args) -> str:
        if key == "INTWIN":
            w = int(args[0])
            if w < 1:
                return "ERR window must be >= 1"
            self.config.integration_window = w
        elif key == "SLOPECHK":
            self.config.slope_check = args[0] not in ("0", "OFF", "off")
        elif key == "THRESH":
            self.config.threshold = int(args[0])
        elif key == "SLOPE":
            self.config.slope_sign = +1 if args[0].upper() == "RISING" else -1
        elif key == "MODE":
            mode = args[0].lower()
            if mode not in ("samples", "threshold"):
                return "ERR mode must be SAMPLES or THRESHOLD"
            self.config.mode = mode
        else:
            return f"ERR unknown key {key}"
        return "OK"

    def _get(self, key: str) -> str:
        vals = {
            "INTWIN": self.config.integration_window,
            "SLOPECHK": int(self.config.slope_check),
            "THRESH": self.config.threshold,
            "SLOPE": "RISING" if self.config.slope_sign >= 0 else "FALLING",
            "MODE": self.config.mode.upper(),
        }
        if key not in vals:
            return f"ERR unknown key {key}"
        return str(vals[key])


# ---------------------------------------------------------------------------
# socket front end
# ---------------------------------------------------------------------------

class HdsSocketServer:
    """TCP front end: a binary data port and a line-oriented control port."""

    def __init__(self, server: HomodyneServer, host: str = "127.0.0.1",
                 data_port: int = 0, control_port: int = 0):
        self.core = server
        self._data_srv = self._make_data_server(host, data_port)
        self._ctrl_srv = self._make_control_server(host, control_port)
        self.data_address = self._data_srv.server_address
        self.control_address = self._ctrl_srv.server_address
        self._threads = []

    def _make_data_server(self, host, port):
        core = self.core

        class DataHandler(socketserver.BaseRequestHandler):
            def handle(self):
                conn = ConnectionState()
                while True:
                    try:
                        body = proto.read_frame(self.request)
                    except ConnectionError:
                        break
                    if body is None:
                        break
                    reply = core.handle_request(body, conn)
                    self.request.sendall(proto.frame_message(reply))

        srv = socketserver.ThreadingTCPServer((host, port), DataHandler)
        srv.daemon_threads = True
        srv.allow_reuse_address = True
        return srv

    def _make_control_server(self, host, port):
        core = self.core

        class ControlHandler(socketserver.StreamRequestHandler):
            def handle(self):
                for raw in self.rfile:
                    line = raw.decode("ascii", "replace").strip()
                    if not line:
                        continue
                    reply = core.control(line)
                    self.wfile.write((reply + "\n").encode("ascii"))
                    self.wfile.flush()

        srv = socketserver.ThreadingTCPServer((host, port), ControlHandler)
        srv.daemon_threads = True
        srv.allow_reuse_address = True
        return srv

    def start(self):
        for srv in (self._data_srv, self._ctrl_srv):
            th = threading.Thread(target=srv.serve_forever, daemon=True)
            th.start()
            self._threads.append(th)
        return self

    def stop(self):
        for srv in (self._data_srv, self._ctrl_srv):
            srv.shutdown()
            srv.server_close()
