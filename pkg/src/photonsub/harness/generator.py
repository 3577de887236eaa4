"""Physics-to-bits stream generator.

Turns the analytic subtracted states into synchronized detector-pulse and
dual-ADC sample streams.  Correlation is exact-bin: the quadrature pair of
a herald of class (n, m) is drawn jointly from the class state at the
instantaneous LO phases and written at herald + true delay on each server;
every other timetag carries a draw from the no-subtraction state, realized
through its exact Gaussian covariance and pairwise-correlated across
servers at the same relative shift.  Dark heralds leave the background in
place.  All randomness flows from counter-based Philox streams keyed by
(master seed, stream id, chunk index), so streams are bit-reproducible and
chunk-order independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fock_core import lossy_subtracted_state, success_probability
from ..homodyne_model import PhaseDrive, QuadratureSampler
from .config import ExperimentConfig

CHUNK = 1 << 22  # background generation chunk, samples

_STREAM_HERALDS = 11
_STREAM_CLASSES = 12
_STREAM_Z1 = 13
_STREAM_Z2 = 14
_STREAM_DRAWS = 15
_STREAM_VACUUM_A = 16
_STREAM_VACUUM_B = 17
_STREAM_CAL = 18


def _rng(seed, stream, counter=0) -> np.random.Generator:
    # counter-based stream: (seed, stream id) in one key word, the chunk
    # counter in the other, so any sub-stream regenerates independently
    return np.random.Generator(np.random.Philox(
        key=np.array([(seed << 16) + stream, counter], dtype=np.uint64)))


@dataclass
class HeraldPlan:
    coarse: np.ndarray
    cls_n: np.ndarray
    cls_m: np.ndarray
    dark: np.ndarray
    detector_subbins: np.ndarray = field(default=None)
    detector_sides: np.ndarray = field(default=None)
    detector_tree_idx: np.ndarray = field(default=None)


class StreamGenerator:
    def __init__(self, config: ExperimentConfig):
        self.config = config.validate()
        self.drive_a = PhaseDrive(config.drive_a_hz,
                                  reset_fraction=config.reset_fraction)
        self.drive_b = PhaseDrive(config.drive_b_hz,
                                  reset_fraction=config.reset_fraction)
        lam = config.model(0, 0).effective_squeezing
        self._lam = lam
        self._nbar = lam * lam / (1.0 - lam * lam)
        self._sig_a = np.sqrt(0.5 + config.eta1 * self._nbar)
        self._sig_b = np.sqrt(0.5 + config.eta2 * self._nbar)
        self._cov_amp = (np.sqrt(config.eta1 * config.eta2) * lam
                         / (1.0 - lam * lam))
        self._class_table = self._build_class_table()
        self._samplers: dict = {}

    # ------------------------------------------------------------------
    def _build_class_table(self):
        cap = self.config.side_class_cap
        classes = [(n, m) for n in range(cap + 1) for m in range(cap + 1)
                   if (n, m) != (0, 0)]
        weights = np.array([success_probability(self.config.model(n, m))
                            for n, m in classes])
        return classes, weights / weights.sum()

    def class_sampler(self, cls) -> QuadratureSampler:
        if cls not in self._samplers:
            state = lossy_subtracted_state(self.config.model(*cls),
                                           self.config.n_c)
            self._samplers[cls] = QuadratureSampler(state)
        return self._samplers[cls]

    # ------------------------------------------------------------------
    def plan_heralds(self, lo: int, hi: int) -> HeraldPlan:
        """Herald times, classes and dark flags over coarse bins [lo, hi).

        Arrival times are Poisson at the configured rate; heralds may fall
        arbitrarily close together (the orchestrator's hold filter deals
        with that), but each tree detector observes its 4-bin dead time,
        silently missing photons that arrive too soon.
        """
        cfg = self.config
        rng = _rng(cfg.seed, _STREAM_HERALDS, lo)
        span = hi - lo
        rate_per_bin = cfg.herald_rate_hz / 1e8
        n = rng.poisson(rate_per_bin * span)
        coarse = np.sort(rng.integers(lo, hi, size=n).astype(np.int64))
        classes, weights = self._class_table
        pick = _rng(cfg.seed, _STREAM_CLASSES, lo)
        idx = pick.choice(len(classes), size=coarse.size, p=weights)
        cls = np.array(classes, dtype=np.int64)[idx] if coarse.size else \
            np.zeros((0, 2), dtype=np.int64)
        dark = pick.random(coarse.size) < cfg.dark_herald_fraction
        plan = HeraldPlan(coarse=coarse, cls_n=cls[:, 0], cls_m=cls[:, 1],
                          dark=dark)
        self._attach_detector_pulses(plan, pick)
        return plan

    def _attach_detector_pulses(self, plan: HeraldPlan,
                                rng: np.random.Generator):
        """One pulse per subtracted photon on distinct tree detectors, all
        at the same fixed sub-bin of the herald's coarse bin.

        The trigger sums counts per side immediately, so the tree index
        matters only through the per-detector 4-bin dead time; a detector
        hit again too soon drops the later pulse, which downgrades the
        apparent signature of that herald exactly as real inefficiency
        would.
        """
        h = plan.coarse.size
        base = 3 * plan.coarse + 1
        parts = []
        for side, counts in ((0, plan.cls_n), (1, plan.cls_m)):
            rep = np.repeat(np.arange(h), counts)
            if rep.size == 0:
                continue
            starts = np.cumsum(counts) - counts
            within = np.arange(rep.size) - np.repeat(starts, counts)
            # rotate a random starting detector: photons of one herald land
            # on distinct detectors since counts never exceed the tree
            first = rng.integers(0, 3, size=h)
            parts.append((base[rep], np.full(rep.size, side),
                          (first[rep] + within) % 3))
        if parts:
            plan.detector_subbins = np.concatenate([p[0] for p in parts])
            plan.detector_sides = np.concatenate([p[1] for p in parts])
            plan.detector_tree_idx = np.concatenate([p[2] for p in parts])
        else:
            plan.detector_subbins = np.zeros(0, dtype=np.int64)
            plan.detector_sides = np.zeros(0, dtype=np.int64)
            plan.detector_tree_idx = np.zeros(0, dtype=np.int64)
        self._enforce_dead_time(plan)

    def _enforce_dead_time(self, plan: HeraldPlan, dead_bins: int = 4):
        keep = np.ones(plan.detector_subbins.size, dtype=bool)
        coarse = plan.detector_subbins // 3
        det_key = plan.detector_sides * 3 + plan.detector_tree_idx
        for key in np.unique(det_key):
            sel = np.nonzero(det_key == key)[0]
            tags = coarse[sel]
            order = np.argsort(tags, kind="stable")
            tags = tags[order]
            if tags.size < 2 or np.diff(tags).min() >= dead_bins:
                continue
            alive = np.ones(sel.size, dtype=bool)
            last = -(dead_bins + 1)
            for i, t in enumerate(tags):
                if t - last < dead_bins:
                    alive[i] = False
                else:
                    last = t
            keep[sel[order]] = alive
        plan.detector_subbins = plan.detector_subbins[keep]
        plan.detector_sides = plan.detector_sides[keep]
        plan.detector_tree_idx = plan.detector_tree_idx[keep]

    # ------------------------------------------------------------------
    def heralded_draws(self, plan: HeraldPlan, stream_key: int = 0):
        """Joint (x1, x2) per non-dark herald at the sample-time phases."""
        cfg = self.config
        x1 = np.zeros(plan.coarse.size)
        x2 = np.zeros(plan.coarse.size)
        th1 = self.drive_a.evaluate(plan.coarse + cfg.true_delay_a)[0]
        th2 = self.drive_b.evaluate(plan.coarse + cfg.true_delay_b)[0]
        rng = _rng(cfg.seed, _STREAM_DRAWS, stream_key)
        for cls in sorted({(int(n), int(m)) for n, m
                           in zip(plan.cls_n, plan.cls_m)}):
            sel = ((plan.cls_n == cls[0]) & (plan.cls_m == cls[1])
                   & ~plan.dark)
            if not np.any(sel):
                continue
            sampler = self.class_sampler(cls)
            a, b = sampler.sample_batch(th1[sel], th2[sel], rng)
            x1[sel] = a
            x2[sel] = b
        return x1, x2

    # ------------------------------------------------------------------
    def _z_stream(self, stream: int, tau_lo: int, tau_hi: int) -> np.ndarray:
        """Chunk-keyed standard normals over mode-time indices; negative
        indices (pre-run tail shorter than a delay) stay reproducible."""
        cfg = self.config
        out = np.empty(tau_hi - tau_lo)
        pos = 0
        for c in range(tau_lo // CHUNK, (tau_hi - 1) // CHUNK + 1):
            z = _rng(cfg.seed, stream, c + (1 << 32)).standard_normal(CHUNK)
            a0 = max(tau_lo, c * CHUNK)
            a1 = min(tau_hi, (c + 1) * CHUNK)
            out[pos:pos + a1 - a0] = z[a0 - c * CHUNK:a1 - c * CHUNK]
            pos += a1 - a0
        return out

    def background_pair(self, tau_lo: int, tau_hi: int, channel: str = "both"):
        """Correlated no-subtraction quadrature pair per mode time tau.

        Mode time tau indexes the shared temporal mode: server A sees the
        pair member at global time tau + true_delay_a, server B at
        tau + true_delay_b.  channel selects which member(s) to evaluate;
        chunk-keyed Philox streams make any sub-range reproducible.
        """
        cfg = self.config
        z1 = self._z_stream(_STREAM_Z1, tau_lo, tau_hi)
        x_a = self._sig_a * z1
        if channel == "a":
            return x_a
        tau = np.arange(tau_lo, tau_hi)
        th1 = self.drive_a.evaluate(tau + cfg.true_delay_a)[0]
        th2 = self.drive_b.evaluate(tau + cfg.true_delay_b)[0]
        cov = -self._cov_amp * np.cos(th1 + th2)
        rho_c = cov / (self._sig_a * self._sig_b)
        z2 = self._z_stream(_STREAM_Z2, tau_lo, tau_hi)
        x_b = self._sig_b * (rho_c * z1 + np.sqrt(1.0 - rho_c ** 2) * z2)
        if channel == "b":
            return x_b
        return x_a, x_b

    def to_codes(self, x) -> np.ndarray:
        code = np.rint(np.asarray(x) * self.config.adc_scale).astype(np.int64)
        return np.clip(code, -8192, 8191)

    # ------------------------------------------------------------------
    def fill_epoch(self, server_a, server_b, epoch: int, half: int,
                   plan: HeraldPlan | None):
        """Generate and ingest one half-buffer of samples on both servers.

        The shutter window at the start of the run carries uncorrelated
        vacuum on both channels for shot-noise calibration.  Servers whose
        clocks started with a residual offset simply receive the stream
        later; their local tags shift accordingly.
        """
        cfg = self.config
        lo = epoch * half
        hi = lo + half
        # heralded overrides prepared once per epoch
        if plan is not None and plan.coarse.size:
            hx1, hx2 = self.heralded_draws(plan, stream_key=epoch)
            dark = plan.dark
            pos_a = plan.coarse + cfg.true_delay_a
            pos_b = plan.coarse + cfg.true_delay_b
        else:
            hx1 = hx2 = pos_a = pos_b = np.zeros(0, dtype=np.int64)
            dark = np.zeros(0, dtype=bool)
        for c_lo in range(lo, hi, CHUNK):
            c_hi = min(c_lo + CHUNK, hi)
            t = np.arange(c_lo, c_hi)
            # each channel carries its mode-time stream shifted by its own
            # path delay, so samples pair up at equal mode time
            xa = self.background_pair(c_lo - cfg.true_delay_a,
                                      c_hi - cfg.true_delay_a, channel="a")
            xb = self.background_pair(c_lo - cfg.true_delay_b,
                                      c_hi - cfg.true_delay_b, channel="b")
            # shutter-closed vacuum at the start of the run
            shut = t < cfg.shutter_bins
            if np.any(shut):
                va = _rng(cfg.seed, _STREAM_VACUUM_A, c_lo)
                vb = _rng(cfg.seed, _STREAM_VACUUM_B, c_lo)
                xa[shut] = np.sqrt(0.5) * va.standard_normal(int(shut.sum()))
                xb[shut] = np.sqrt(0.5) * vb.standard_normal(int(shut.sum()))
            for pos, vals, x in ((pos_a, hx1, xa), (pos_b, hx2, xb)):
                sel = (pos >= c_lo) & (pos < c_hi) & ~dark
                if np.any(sel):
                    x[pos[sel] - c_lo] = vals[sel]
            code_a_drive = self.drive_a.evaluate(t)[1]
            code_b_drive = self.drive_b.evaluate(t)[1]
            server_a.ingest_samples(self.to_codes(xa), code_a_drive)
            server_b.ingest_samples(self.to_codes(xb), code_b_drive)

    # ------------------------------------------------------------------
    # thermal delay calibration streams
    # ------------------------------------------------------------------
    def thermal_epoch(self, server, side: int, epoch: int, half: int,
                      pulse_period: int = 1000, pulse_width: int = 5,
                      threshold_code: int = 4000,
                      noise_crossing_rate: float = 0.01,
                      dark_tag_fraction: float = 0.02):
        """Pulsed-thermal calibration data for one server and side.

        Returns (detector_subbins, detector_sides).  Each 100-kHz pulse
        puts a detector tag at its onset bin and a noisy 5-bin bump on the
        server's homodyne channel at onset + true delay; per-bin bump
        values straddle the threshold so crossings spread over the pulse.
        Sparse single-bin noise spikes set the accidental-coincidence
        floor that fixes the cross-correlation SNR scale.
        """
        cfg = self.config
        rng = _rng(cfg.seed, _STREAM_CAL, 1000 + side + 10 * epoch)
        lo = epoch * half
        hi = lo + half
        delay = cfg.true_delay_a if side == 0 else cfg.true_delay_b
        a = rng.integers(-500, 500, size=hi - lo)
        onsets = np.arange(lo + 100, hi - pulse_width - delay - 2, pulse_period)
        # bump: each bin independently above threshold with p = 0.45
        above = rng.random((onsets.size, pulse_width)) < 0.45
        amp = np.where(above,
                       threshold_code + rng.integers(100, 3000,
                                                     size=above.shape),
                       rng.integers(0, 2000, size=above.shape))
        for j in range(pulse_width):
            a[onsets - lo + delay + j] = amp[:, j]
        # single-bin noise spikes for the accidental floor
        n_noise = rng.poisson(noise_crossing_rate * (hi - lo))
        noise_pos = rng.integers(0, hi - lo, size=n_noise)
        a[noise_pos] = threshold_code + 1000
        drive = (self.drive_a if side == 0 else self.drive_b).evaluate(
            np.arange(lo, hi))[1]
        server.ingest_samples(np.clip(a, -8192, 8191), drive)
        # detector tags: pulse onsets plus a few dark counts
        n_dark = rng.poisson(dark_tag_fraction * onsets.size)
        dark_tags = rng.integers(lo, hi, size=n_dark)
        tags = np.sort(np.concatenate([onsets, dark_tags]))
        subbins = 3 * tags + 1
        sides = np.full(subbins.size, side)
        return subbins, sides
