"""Experiment runner: calibration, acquisition, tomography, reports.

Wires the stream generator, two homodyne servers, the orchestrator engine
and the reconstruction into the full loop: thermal delay calibration,
shot-noise scaling, heralded acquisition with zero-detection reference
sampling, per-class tomography, and the fidelity / entanglement /
witness report.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import ng_metrics
from ..fock_core import lossy_subtracted_state
from ..hds import HdsClient, HomodyneServer, InProcessTransport
from ..pso import (DatasetWriter, PsoConsole, PsoEngine, PsoRunConfig,
                   coincidence_pipeline)
from ..tomography import TomographyDataset, reconstruct, rolling_variance
from .calibration import thermal_calibration
from .config import ExperimentConfig
from .generator import StreamGenerator, _rng

_STREAM_SHOT = 21
_STREAM_ZERO = 22

# fixed trigger-pipeline offset: a herald in coarse bin T with the
# generator's sub-bin placement is tagged T - 1 (see pso.pipeline)
PIPELINE_COARSE_OFFSET = -1


@dataclass
class Rig:
    config: ExperimentConfig
    generator: StreamGenerator
    server_a: HomodyneServer
    server_b: HomodyneServer
    client_a: HdsClient
    client_b: HdsClient

    @property
    def half(self) -> int:
        return self.server_a.buffer.half

    def effective_delays(self):
        """Ground-truth effective delays the calibration should recover."""
        cfg = self.config
        return (cfg.true_delay_a + cfg.server_offset_a - PIPELINE_COARSE_OFFSET,
                cfg.true_delay_b + cfg.server_offset_b - PIPELINE_COARSE_OFFSET)


def build_rig(config: ExperimentConfig) -> Rig:
    gen = StreamGenerator(config)
    srv_a = HomodyneServer(pages=config.pages, page_map_seed=config.seed)
    srv_b = HomodyneServer(pages=config.pages, page_map_seed=config.seed + 1)
    srv_a.config.pace_realtime = config.pace_realtime
    srv_b.config.pace_realtime = config.pace_realtime
    return Rig(config=config, generator=gen, server_a=srv_a, server_b=srv_b,
               client_a=HdsClient(InProcessTransport(srv_a)),
               client_b=HdsClient(InProcessTransport(srv_b)))


# ---------------------------------------------------------------------------
# delay calibration
# ---------------------------------------------------------------------------

def run_delay_calibration(rig: Rig, pulses_wanted: int = 10_000):
    """Pulsed-thermal cross-correlation calibration, one side at a time.

    Returns ((delay_a, delay_b), (result_a, result_b)); delays are the
    effective query offsets including server start skew and the trigger
    pipeline offset.
    """
    cfg = rig.config
    results = []
    span = min(pulses_wanted * 1000 + 200, rig.half - 100)
    for side, (server, client, offset) in enumerate((
            (rig.server_a, rig.client_a, cfg.server_offset_a),
            (rig.server_b, rig.client_b, cfg.server_offset_b))):
        client.start_run(offset)
        subbins, sides = rig.generator.thermal_epoch(server, side, 0, span)
        # zero-fill the rest of the half so it seals
        remainder = rig.half - span + 1
        server.ingest_samples(np.zeros(remainder), np.zeros(remainder))
        events = coincidence_pipeline(subbins, sides)
        # PSO tags live on the master clock; the server's start skew shows
        # up in the crossing tags and lands inside the measured delay
        det_tags = events.coarse
        client.set_config(mode="threshold", threshold=4000, slope="RISING")
        crossings = client.threshold_scan(0, 0, span)
        client.set_config(mode="samples")
        results.append(thermal_calibration(det_tags, crossings))
    delays = (results[0].peak_delay, results[1].peak_delay)
    return delays, tuple(results)


# ---------------------------------------------------------------------------
# acquisition + tomography
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: ExperimentConfig
    delays: tuple
    calibration: tuple
    shot_noise_scale: tuple
    fidelities: dict
    log_negativities: dict
    witness_measured: ng_metrics.WitnessResult
    witness_expected: ng_metrics.WitnessResult
    iterations: dict
    conservation_ok: bool
    class_counts: dict
    run_dir: str = ""
    rolling: dict = field(default_factory=dict, repr=False)
    states: dict = field(default_factory=dict, repr=False)


def records_to_dataset(records, scale_a: float, scale_b: float,
                       generator: StreamGenerator, n_c: int,
                       limit: int | None = None) -> TomographyDataset:
    """Map acquisition records to calibrated quadratures and phases."""
    if limit is not None:
        records = records[:limit]
    adc = records["adc"].astype(np.float64)
    x1 = adc[:, 0] / scale_a
    x2 = adc[:, 2] / scale_b
    th1 = generator.drive_a.theta_from_code(adc[:, 1])
    th2 = generator.drive_b.theta_from_code(adc[:, 3])
    return TomographyDataset(x1, x2, th1, th2, n_c=n_c)


def run_acquisition(rig: Rig, delays, run_dir, max_epochs: int = 64):
    """Heralded acquisition until every class target fills.

    Returns (engine, shot_noise_scales).
    """
    cfg = rig.config
    console = PsoConsole(PsoRunConfig(
        delay_a=delays[0], delay_b=delays[1], hold_bins=cfg.hold_bins,
        seed_window_offset=cfg.seed_window[0],
        seed_window_width=cfg.seed_window[1],
        seed_window_period=cfg.seed_window[2],
        zero_detection_rate=cfg.zero_detection_rate,
        max_class_sum=3))
    writer = DatasetWriter(run_dir, records_per_file=cfg.records_per_file,
                           class_targets=dict(cfg.class_targets))
    engine = PsoEngine(rig.client_a, rig.client_b, console, writer,
                       half_words=rig.half,
                       zero_rng=_rng(cfg.seed, _STREAM_ZERO))
    engine.start_run(cfg.server_offset_a, cfg.server_offset_b)

    margin = max(abs(delays[0]), abs(delays[1])) + cfg.hold_bins + 2
    scales = None
    for epoch in range(max_epochs):
        lo = epoch * rig.half
        hi = lo + rig.half
        herald_lo = max(lo, cfg.shutter_bins + margin) + margin
        plan = rig.generator.plan_heralds(herald_lo, hi - margin)
        rig.generator.fill_epoch(rig.server_a, rig.server_b, epoch,
                                 rig.half, plan)
        zero_lo = (cfg.shutter_bins + 2 * margin if epoch == 0
                   else lo + margin)
        engine.process_sealed_half(epoch, plan.detector_subbins,
                                   plan.detector_sides,
                                   zero_span=(zero_lo, hi - margin))
        if scales is None:
            a, b = engine.collect_shot_noise(
                0, (margin, cfg.shutter_bins - margin),
                cfg.shot_noise_samples, _rng(cfg.seed, _STREAM_SHOT))
            scales = (float(np.sqrt(2.0 * a.var())),
                      float(np.sqrt(2.0 * b.var())))
        if all(engine.writer.target_reached(cls)
               for cls in cfg.class_targets):
            break
    engine.flush_expired()
    return engine, scales


def run_experiment(config: ExperimentConfig, out_dir) -> ExperimentReport:
    """Full pipeline: calibrate, acquire, reconstruct, report."""
    os.makedirs(out_dir, exist_ok=True)
    rig = build_rig(config)
    delays, cal = run_delay_calibration(rig)
    run_dir = os.path.join(out_dir, "datasets")
    engine, scales = run_acquisition(rig, delays, run_dir)
    engine.writer.finalize({"delays": list(delays),
                            "shot_noise_scale": list(scales)})
    engine.save_heralds(os.path.join(out_dir, "heralds.bin"))

    expected = {
        (0, 0): lossy_subtracted_state(config.model(0, 0), config.n_c),
        (1, 1): lossy_subtracted_state(config.model(1, 1), config.n_c),
    }
    recs = {}
    reports = {}
    for cls in ((0, 0), (1, 1)):
        raw = engine.writer.load_class(cls)
        limit = config.class_targets.get(cls)
        data = records_to_dataset(raw, scales[0], scales[1], rig.generator,
                                  config.n_c, limit=limit)
        rep = reconstruct(data, max_iterations=config.max_iterations,
                          epsilon=config.epsilon)
        recs[cls] = rep.rho
        reports[cls] = rep
        # rolling variance of the summed joint quadrature, sorted by the
        # joint phase (window 500, shrunk for small desk runs)
        phase, var = rolling_variance(data,
                                      window=min(500, max(2, data.size // 2)))
        _write_rolling(os.path.join(out_dir, f"rolling_{cls[0]}{cls[1]}.csv"),
                       phase, var)

    fid = {}
    for mcls, mstate in recs.items():
        for ecls, estate in expected.items():
            fid[f"rec{mcls[0]}{mcls[1]}_vs_exp{ecls[0]}{ecls[1]}"] = \
                ng_metrics.uhlmann_fidelity(mstate, estate)
    en = {
        "rec00": ng_metrics.log_negativity(recs[(0, 0)]),
        "rec11": ng_metrics.log_negativity(recs[(1, 1)]),
        "exp00": ng_metrics.log_negativity(expected[(0, 0)]),
        "exp11": ng_metrics.log_negativity(expected[(1, 1)]),
    }
    report = ExperimentReport(
        config=config,
        delays=delays,
        calibration=cal,
        shot_noise_scale=scales,
        fidelities=fid,
        log_negativities=en,
        witness_measured=ng_metrics.witness(recs[(1, 1)]),
        witness_expected=ng_metrics.witness(expected[(1, 1)]),
        iterations={f"{k[0]}{k[1]}": reports[k].iterations for k in reports},
        conservation_ok=engine.report.conservation_holds(),
        class_counts=dict(engine.report.class_counts),
        run_dir=str(out_dir),
        states={"rec00": recs[(0, 0)], "rec11": recs[(1, 1)],
                "exp00": expected[(0, 0)], "exp11": expected[(1, 1)]},
    )
    _write_report(out_dir, report, engine)
    return report


def _write_rolling(path, phase, var):
    with open(path, "w") as fh:
        fh.write("joint_phase_rad,variance\n")
        for p, v in zip(phase, var):
            fh.write(f"{p:.6f},{v:.8f}\n")


def _write_report(out_dir, report: ExperimentReport, engine):
    for name, state in report.states.items():
        state.save(os.path.join(out_dir, f"state_{name}.tms"))
    payload = {
        "delays": list(report.delays),
        "shot_noise_scale": list(report.shot_noise_scale),
        "fidelities": report.fidelities,
        "log_negativities": report.log_negativities,
        "witness_measured": report.witness_measured.rank_class.value,
        "witness_expected": report.witness_expected.rank_class.value,
        "iterations": report.iterations,
        "conservation_ok": report.conservation_ok,
        "class_counts": {f"{k[0]},{k[1]}": v
                         for k, v in report.class_counts.items()},
        "calibration": [
            {"peak_delay": c.peak_delay, "snr": c.snr, "fwhm": c.fwhm_bins}
            for c in report.calibration],
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write("experiment report\n=================\n")
        for key, val in payload.items():
            fh.write(f"{key}: {val}\n")
        fh.write("\nacquisition counters\n--------------------\n")
        fh.write(engine.report.to_text() + "\n")


# ---------------------------------------------------------------------------
# delay scan
# ---------------------------------------------------------------------------

@dataclass
class DelayScanRow:
    offset: tuple
    log_negativity_00: float
    log_negativity_11: float
    fid: dict


def delay_scan(config: ExperimentConfig, offsets, out_dir,
               scan_targets: int = 2500, max_iterations: int = 400):
    """Acquire and reconstruct at delay combinations D(i, j) around the
    calibrated point; one shared ingest pass feeds every offset."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = config.with_overrides(class_targets={(1, 1): scan_targets,
                                               (0, 0): scan_targets})
    rig = build_rig(cfg)
    delays, _ = run_delay_calibration(rig)

    expected = {
        (0, 0): lossy_subtracted_state(cfg.model(0, 0), cfg.n_c),
        (1, 1): lossy_subtracted_state(cfg.model(1, 1), cfg.n_c),
    }
    rows = []
    scales = None
    for i, j in offsets:
        engine, sc = run_acquisition(
            rig, (delays[0] + i, delays[1] + j),
            os.path.join(out_dir, f"scan_{i}_{j}"), max_epochs=6)
        scales = scales or sc
        fid = {}
        en = {}
        for cls in ((0, 0), (1, 1)):
            raw = engine.writer.load_class(cls)
            data = records_to_dataset(raw, sc[0], sc[1], rig.generator,
                                      cfg.n_c, limit=scan_targets)
            import warnings as _w
            with _w.catch_warnings():
                _w.simplefilter("ignore")
                rep = reconstruct(data, max_iterations=max_iterations,
                                  epsilon=cfg.epsilon)
            en[cls] = ng_metrics.log_negativity(rep.rho)
            for ecls, estate in expected.items():
                fid[f"rec{cls[0]}{cls[1]}_vs_exp{ecls[0]}{ecls[1]}"] = \
                    ng_metrics.uhlmann_fidelity(rep.rho, estate)
        rows.append(DelayScanRow(offset=(i, j),
                                 log_negativity_00=en[(0, 0)],
                                 log_negativity_11=en[(1, 1)], fid=fid))
    _write_scan_table(os.path.join(out_dir, "delay_scan.txt"), rows)
    return rows


def _write_scan_table(path, rows):
    with open(path, "w") as fh:
        fh.write("# D(i,j)  E_N(00)  E_N(11)  F(r00,E00) F(r00,E11) "
                 "F(r11,E00) F(r11,E11)\n")
        for r in rows:
            fh.write(
                f"D({r.offset[0]},{r.offset[1]}) "
                f"{r.log_negativity_00:.4f} {r.log_negativity_11:.4f} "
                f"{r.fid['rec00_vs_exp00']:.4f} {r.fid['rec00_vs_exp11']:.4f} "
                f"{r.fid['rec11_vs_exp00']:.4f} {r.fid['rec11_vs_exp11']:.4f}\n")


# ---------------------------------------------------------------------------
# throughput benchmark
# ---------------------------------------------------------------------------

def throughput_benchmark(duration_s: float = 10.0, pages: int = 2048,
                         events_per_half: int = 60_000, seed: int = 7):
    """Loopback throughput of the full PSO processing chain.

    Streams synthetic coincidences through ingest, trigger, filters, HDS
    queries and triage until the wall-clock budget elapses; returns a dict
    with the sustained event rate and the server health flags.
    """
    import tempfile

    srv_a = HomodyneServer(pages=pages, page_map_seed=seed)
    srv_b = HomodyneServer(pages=pages, page_map_seed=seed + 1)
    client_a = HdsClient(InProcessTransport(srv_a))
    client_b = HdsClient(InProcessTransport(srv_b))
    half = srv_a.buffer.half
    console = PsoConsole(PsoRunConfig(delay_a=3, delay_b=5, hold_bins=3))
    with tempfile.TemporaryDirectory() as tmp:
        writer = DatasetWriter(tmp, records_per_file=100_000)
        engine = PsoEngine(client_a, client_b, console, writer,
                           half_words=half)
        engine.start_run()
        rng = np.random.default_rng(seed)
        stride = max(half // events_per_half, 8)
        base_coarse = np.arange(16, half - 16, stride)
        code = np.zeros(half, dtype=np.int64)
        code[:] = 1000
        drive = np.zeros(half, dtype=np.int64)
        t0 = time.perf_counter()
        processed = 0
        epoch = 0
        while time.perf_counter() - t0 < duration_s:
            srv_a.ingest_samples(code, drive)
            srv_b.ingest_samples(code, drive)
            coarse = epoch * half + base_coarse
            subbins = np.repeat(coarse * 3 + 1, 2)
            sides = np.tile(np.array([0, 1]), coarse.size)
            engine.process_sealed_half(epoch, subbins, sides)
            processed += coarse.size
            epoch += 1
        elapsed = time.perf_counter() - t0
        sa = srv_a.status()
        sb = srv_b.status()
        return {
            "events": processed,
            "seconds": elapsed,
            "events_per_second": processed / elapsed,
            "epochs": epoch,
            "integrity_ok": sa.data_queries_allowed and sb.data_queries_allowed,
            "conservation_ok": engine.report.conservation_holds(),
        }
