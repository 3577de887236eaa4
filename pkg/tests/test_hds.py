import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonsub import hds
from photonsub.hds import protocol as proto
from photonsub.homodyne_model import PhaseDrive


def make_server(pages=64, **cfg):
    srv = hds.HomodyneServer(pages=pages,
                             config=hds.ServerConfig(**cfg) if cfg else None)
    srv.start_run()
    return srv


def fill_first_half(srv, pattern=None):
    half = srv.buffer.half
    if pattern is None:
        pattern = hds.pack_words(np.arange(half) % 8191,
                                 (np.arange(half) * 7) % 8191)
    srv.ingest(pattern)
    # push the cursor past the half boundary so H0 seals
    srv.ingest(hds.pack_words([0], [0]))
    return pattern


class TestWords:
    def test_pack_unpack_known(self):
        w = hds.pack_words([-8192, 0, 8191], [8191, -1, -8192])
        a, b = hds.unpack_words(w)
        np.testing.assert_array_equal(a, [-8192, 0, 8191])
        np.testing.assert_array_equal(b, [8191, -1, -8192])

    @given(st.integers(-8192, 8191), st.integers(-8192, 8191))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, a, b):
        w = hds.pack_words([a], [b])
        aa, bb = hds.unpack_words(w)
        assert int(aa[0]) == a and int(bb[0]) == b
        assert not hds.is_placeholder(w)[0]

    def test_placeholder_unreachable_by_sign_extension(self):
        # sweep the full 14-bit range: no packed word matches the marker
        vals = np.arange(-8192, 8192)
        w = hds.pack_words(vals, np.zeros_like(vals))
        assert not hds.is_placeholder(w).any()
        assert hds.is_placeholder(np.array([hds.PLACEHOLDER_WORD]))[0]

    def test_range_validation(self):
        with pytest.raises(ValueError):
            hds.pack_words([8192], [0])


class TestRingBuffer:
    def test_spec_address_arithmetic(self):
        # logical page/offset of the last timetag at the production geometry
        t = 69_119_999
        assert t >> 10 == 67_499
        assert t & 1023 == 1023
        buf = hds.RingBuffer()  # full size; zeros allocate lazily
        assert buf.capacity == 69_120_000
        phys = buf.physical_index(np.array([0, t]))
        assert phys[0] == buf.page_map[0] << 10
        assert phys[1] == (buf.page_map[67_499] << 10) | 1023

    def test_address_bijection_small(self):
        buf = hds.RingBuffer(pages=8)
        phys = buf.physical_index(np.arange(buf.capacity))
        assert np.unique(phys).size == buf.capacity

    def test_wrap_overflow_count(self):
        srv = make_server(pages=2)
        cap = srv.buffer.capacity
        srv.ingest(hds.pack_words(np.zeros(cap + 5), np.zeros(cap + 5)))
        st = srv.status()
        assert st.overflow_number == 1
        assert st.current_timetag == 5

    def test_overflow_mask_29_bits(self):
        buf = hds.RingBuffer(pages=2)
        buf.overflow_number = hds.OVERFLOW_MASK
        buf.write(np.zeros(buf.capacity, dtype=np.uint32))
        assert buf.overflow_number == 0


class TestQueries:
    def test_bit_exact_round_trip(self):
        srv = make_server(pages=64)
        pattern = fill_first_half(srv)
        tags = np.arange(0, srv.buffer.half, 17)
        out = srv.query_samples(0, tags)
        np.testing.assert_array_equal(out, pattern[tags])

    def test_window_one_is_passthrough(self):
        srv = make_server(pages=64, integration_window=1)
        pattern = fill_first_half(srv)
        out = srv.query_samples(0, np.array([5, 100]))
        np.testing.assert_array_equal(out, pattern[[5, 100]])

    def test_integration_window_sums(self):
        srv = make_server(pages=64, integration_window=4)
        a = np.arange(srv.buffer.half) % 100
        b = np.full(srv.buffer.half, 3)
        fill_first_half(srv, hds.pack_words(a, b))
        out = srv.query_samples(0, np.array([10, 200]))
        aa, bb = hds.unpack_words(out)
        assert aa[0] == a[10:14].sum()
        assert bb[0] == 12

    def test_integration_saturates_and_flags(self):
        srv = make_server(pages=64, integration_window=8)
        a = np.full(srv.buffer.half, 8191)
        fill_first_half(srv, hds.pack_words(a, np.zeros_like(a)))
        out = srv.query_samples(0, np.array([0]))
        aa, _ = hds.unpack_words(out)
        assert aa[0] == 32767
        assert srv.status().saturation_events == 1

    def test_active_half_refused(self):
        srv = make_server(pages=64)
        fill_first_half(srv)
        active_tag = srv.buffer.half + 5
        with pytest.raises(hds.ActiveHalfError):
            srv.query_samples(0, np.array([active_tag]))

    def test_stale_overflow_refused(self):
        srv = make_server(pages=64)
        fill_first_half(srv)
        with pytest.raises(hds.StaleEpochError):
            srv.query_samples(3, np.array([10]))

    def test_half_buffer_epoch_safety(self):
        # epoch-tagged pattern: a sealed-half query never returns words
        # written after its epoch
        srv = make_server(pages=4)
        cap = srv.buffer.capacity
        half = srv.buffer.half
        epoch0 = hds.pack_words(np.full(cap, 100), np.zeros(cap))
        srv.ingest(epoch0)                     # full wrap: overflow 1
        srv.ingest(hds.pack_words(np.full(half, 200), np.zeros(half)))
        srv.ingest(hds.pack_words([0], [0]))   # cursor just past half
        # sealed half is H0 of the current epoch (value 200)
        out = srv.query_samples(1, np.arange(0, half, 97))
        aa, _ = hds.unpack_words(out)
        assert np.all(aa == 200)
        # the previous epoch's H1 data (value 100) is now stale
        with pytest.raises(hds.StaleEpochError):
            srv.query_samples(0, np.array([half + 3]))

    def test_integrity_fault_refuses_queries(self):
        srv = make_server(pages=64)
        fill_first_half(srv)
        srv.query_samples(0, np.array([1]))
        srv.inject_fault("fifo_overflow")
        with pytest.raises(hds.IntegrityError):
            srv.query_samples(0, np.array([1]))

    def test_halted_full_buffer_scan_allowed(self):
        srv = make_server(pages=4)
        pattern = fill_first_half(srv)
        srv.control("HALT")
        out = srv.query_samples(0, np.arange(0, srv.buffer.half, 13))
        np.testing.assert_array_equal(out,
                                      pattern[np.arange(0, srv.buffer.half, 13)])
        srv.control("RESUME")


class TestSlopeCheck:
    def _drive_filled_server(self, pages=2048):
        # 10-kHz sawtooth on the drive ADC channel
        srv = make_server(pages=pages, slope_check=True)
        drive = PhaseDrive(ramp_frequency_hz=10_000.0, reset_fraction=0.001)
        half = srv.buffer.half
        t = np.arange(half + 1)
        _, code, _ = drive.evaluate(t)
        srv.ingest(hds.pack_words(np.zeros(t.size), code))
        return srv, drive

    def test_placeholder_rate_point_one_percent(self):
        srv, drive = self._drive_filled_server()
        rng = np.random.default_rng(5)
        tags = rng.integers(1, srv.buffer.half, size=1_000_000)
        out = srv.query_samples(0, tags)
        rate = hds.is_placeholder(out).mean()
        assert rate == pytest.approx(0.001, rel=0.5)
        assert abs(rate - 0.001) < 0.0005

    def test_flyback_positions_exact(self):
        srv, drive = self._drive_filled_server(pages=256)
        period = drive.period_samples
        ramp = drive.ramp_samples
        tags = np.arange(ramp - 2, period + 2)
        out = srv.query_samples(0, tags)
        marked = hds.is_placeholder(out)
        expect = (tags >= ramp) & (tags < period)
        np.testing.assert_array_equal(marked, expect)


class TestThresholdScan:
    def _pulse_server(self, n_pulses=100, period=500, width=5, amp=6000):
        srv = make_server(pages=512, mode="threshold", threshold=2000)
        half = srv.buffer.half
        a = np.zeros(half, dtype=np.int64)
        starts = 50 + np.arange(n_pulses) * period
        for s in starts:
            a[s:s + width] = amp
        srv.ingest(hds.pack_words(a, np.zeros(half)))
        srv.ingest(hds.pack_words([0], [0]))
        return srv, starts

    def test_constant_below_threshold_empty(self):
        srv = make_server(pages=64, mode="threshold", threshold=2000)
        fill_first_half(srv, hds.pack_words(np.full(srv.buffer.half, 100),
                                            np.zeros(srv.buffer.half)))
        out = srv.threshold_scan(0, 0, srv.buffer.half)
        assert out.size == 0

    def test_pulse_train_counted_once_each(self):
        srv, starts = self._pulse_server(n_pulses=1000, period=260)
        out = srv.threshold_scan(0, 0, srv.buffer.half)
        assert out.size == 1000
        np.testing.assert_array_equal(np.sort(out), starts)

    def test_triangle_equal_slopes(self):
        srv = make_server(pages=256, mode="threshold", threshold=1500)
        half = srv.buffer.half
        period = 200
        saw = np.abs(((np.arange(half) % period) - period / 2))
        a = (saw * 60 - 3000).astype(np.int64)
        np.clip(a, -8192, 8191, out=a)
        srv.ingest(hds.pack_words(a, np.zeros(half)))
        srv.ingest(hds.pack_words([0], [0]))
        whole = (half // period) * period  # whole periods only
        rising = srv.threshold_scan(0, 0, whole)
        srv.config.slope_sign = -1
        falling = srv.threshold_scan(0, 0, whole)
        assert rising.size == falling.size > 0

    def test_scan_must_not_span_epochs(self):
        srv, _ = self._pulse_server()
        srv.control("HALT")
        cursor = srv.buffer.write_cursor
        with pytest.raises(hds.StaleEpochError):
            srv.threshold_scan(0, cursor - 10, cursor + 10)


class TestProtocol:
    def test_request_response_via_handler(self):
        srv = make_server(pages=64)
        pattern = fill_first_half(srv)
        conn = hds.ConnectionState()
        body = proto.encode_query(0, np.arange(20))
        reply = srv.handle_request(body, conn)
        status, ovf, payload = proto.decode_response(reply)
        assert status is proto.Status.OK
        assert ovf == 0
        np.testing.assert_array_equal(payload, pattern[:20])

    def test_keyword_mismatch_error_frame(self):
        srv = make_server(pages=64)
        fill_first_half(srv)
        conn = hds.ConnectionState()
        bad = np.array([0xDEADBEEF, 0, 1, 2], dtype=np.uint32)
        status, _, payload = proto.decode_response(srv.handle_request(bad, conn))
        assert status is proto.Status.KEYWORD_MISMATCH
        assert payload.size == 0

    def test_continuation_inherits_epoch(self):
        srv = make_server(pages=64)
        pattern = fill_first_half(srv)
        conn = hds.ConnectionState()
        r1 = srv.handle_request(proto.encode_query(0, np.arange(10)), conn)
        r2 = srv.handle_request(
            proto.encode_query(0, np.arange(10, 20), with_keyword=False), conn)
        _, _, p1 = proto.decode_response(r1)
        _, _, p2 = proto.decode_response(r2)
        np.testing.assert_array_equal(np.concatenate([p1, p2]), pattern[:20])

    def test_continuation_without_header_rejected(self):
        srv = make_server(pages=64)
        fill_first_half(srv)
        conn = hds.ConnectionState()
        status, _, _ = proto.decode_response(
            srv.handle_request(np.array([1, 2, 3], dtype=np.uint32), conn))
        assert status is proto.Status.KEYWORD_MISMATCH

    def test_every_request_gets_one_response(self):
        # protocol totality over random junk frames
        srv = make_server(pages=64)
        fill_first_half(srv)
        conn = hds.ConnectionState()
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(0, 20))
            body = rng.integers(0, 2 ** 32, size=n, dtype=np.uint64).astype(np.uint32)
            reply = srv.handle_request(body, conn)
            status, _, _ = proto.decode_response(reply)
            assert isinstance(status, proto.Status)

    def test_status_snapshot_fresh(self):
        srv = make_server(pages=64)
        st = srv.status()
        assert st.overflow_number == 0
        assert st.data_queries_allowed


class TestControlPlane:
    def test_set_get_round_trip(self):
        srv = make_server(pages=64)
        assert srv.control("SET INTWIN 4") == "OK"
        assert srv.control("GET INTWIN") == "4"
        assert srv.control("SET SLOPECHK 1") == "OK"
        assert srv.control("GET SLOPECHK") == "1"
        assert srv.control("SET MODE THRESHOLD") == "OK"
        assert srv.control("GET MODE") == "THRESHOLD"
        assert srv.control("SET SLOPE FALLING") == "OK"
        assert srv.control("GET SLOPE") == "FALLING"

    def test_unknown_command(self):
        srv = make_server(pages=64)
        assert srv.control("FROBNICATE").startswith("ERR")

    def test_status_line(self):
        srv = make_server(pages=64)
        line = srv.control("STATUS")
        assert line.startswith("OVF 0 TT ")
        srv.inject_fault("clock_unlock")
        assert "UNLOCKED" in srv.control("STATUS")


class TestSocketTransport:
    def test_end_to_end_over_tcp(self):
        core = make_server(pages=64)
        pattern = fill_first_half(core)
        wire = hds.HdsSocketServer(core).start()
        try:
            client = hds.HdsClient(hds.SocketTransport(
                wire.data_address, wire.control_address))
            out = client.query_samples(0, np.arange(50))
            np.testing.assert_array_equal(out, pattern[:50])
            # batched continuation over the same connection
            tags = np.arange(0, 3000)
            out = client.query_samples_batched(0, tags, batch=1000)
            np.testing.assert_array_equal(out, pattern[tags])
            assert client.status()["overflow_number"] == 0
            assert client.control("GET MODE") == "SAMPLES"
            with pytest.raises(hds.StaleEpochError):
                client.query_samples(7, np.array([1]))
            client.close()
        finally:
            wire.stop()

    def test_in_process_transport_equivalent(self):
        core = make_server(pages=64)
        pattern = fill_first_half(core)
        client = hds.HdsClient(hds.InProcessTransport(core))
        out = client.query_samples(0, np.arange(30))
        np.testing.assert_array_equal(out, pattern[:30])


class TestMoreProtocolEdges:
    def test_out_of_range_timetag_status(self):
        srv = make_server(pages=64)
        fill_first_half(srv)
        conn = hds.ConnectionState()
        body = proto.encode_query(0, np.array([srv.buffer.capacity + 10],
                                              dtype=np.int64) % (2**32 - 1))
        # a keyworded request with an impossible timetag yields RANGE
        body = np.array([proto.KEYWORD, 0, srv.buffer.capacity + 10],
                        dtype=np.uint32)
        status, _, _ = proto.decode_response(srv.handle_request(body, conn))
        assert status is proto.Status.RANGE

    def test_adc_range_fault_from_crafted_word(self):
        srv = make_server(pages=64)
        srv.ingest(np.array([hds.PLACEHOLDER_WORD], dtype=np.uint32))
        assert srv.status().adc_out_of_range
        fill_first_half(srv)
        with pytest.raises(hds.IntegrityError):
            srv.query_samples(0, np.array([1]))

    def test_pacing_flag_slows_ingest(self):
        import time
        srv = make_server(pages=2)
        srv.config.pace_realtime = True
        t0 = time.perf_counter()
        srv.ingest(hds.pack_words(np.zeros(50_000), np.zeros(50_000)))
        # 50k samples at 100 MHz is 0.5 ms of simulated time
        assert time.perf_counter() - t0 >= 0.0005


class TestTestVectors:
    def test_dump_and_replay(self, tmp_path):
        from photonsub.hds import test_vectors as tv
        srv = make_server(pages=64)
        pattern = fill_first_half(srv)
        rng = np.random.default_rng(4)
        tags = np.sort(rng.choice(srv.buffer.half, size=500, replace=False))
        path = tmp_path / "vectors.hdstv"
        tv.write_test_vectors(path, tags, pattern[tags])
        client = hds.HdsClient(hds.InProcessTransport(srv))
        matches, total = tv.replay_test_vectors(client, path)
        assert matches == total == 500

    def test_header_validation(self, tmp_path):
        from photonsub.hds import test_vectors as tv
        bad = tmp_path / "junk"
        bad.write_bytes(b"NOPE")
        with pytest.raises(ValueError):
            tv.read_test_vectors(bad)


class TestConcurrentReaders:
    def test_sealed_half_reads_during_ingest(self):
        # readers hammer the sealed half while the writer fills the other
        import threading
        srv = make_server(pages=256)
        pattern = fill_first_half(srv)
        half = srv.buffer.half
        errors = []

        def reader():
            conn = hds.ConnectionState()
            rng = np.random.default_rng(threading.get_ident() % 2**32)
            for _ in range(50):
                tags = np.sort(rng.integers(0, half, size=256))
                reply = srv.handle_request(proto.encode_query(0, tags), conn)
                status, _, payload = proto.decode_response(reply)
                if status is not proto.Status.OK:
                    errors.append(status)
                elif not np.array_equal(payload, pattern[tags]):
                    errors.append("corrupt")

        def writer():
            for _ in range(20):
                chunk = min(2048, half // 20)
                srv.ingest(hds.pack_words(np.zeros(chunk), np.zeros(chunk)))

        threads = [threading.Thread(target=reader) for _ in range(4)]
        threads.append(threading.Thread(target=writer))
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
