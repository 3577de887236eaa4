"""Photon-subtraction/quadrature-sample delay calibration.

Cross-correlates PSO detector tags from a pulsed thermal stream against
HDS threshold-crossing tags; the peak lag is the effective per-mode delay
(true electrical/optical delay plus server start skew plus the fixed
trigger-pipeline offset), which is what acquisition queries must use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_LAG = 64


class CalibrationFailedError(RuntimeError):
    pass


@dataclass
class CalibrationResult:
    peak_delay: int
    snr: float
    fwhm_bins: int
    lags: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.snr <= 1:
            raise CalibrationFailedError(
                f"cross-correlation SNR {self.snr:.2f} is not above 1")


def cross_correlate(det_tags, crossing_tags, max_lag: int = MAX_LAG):
    """Counts of (crossing - detector) lags within +/-max_lag."""
    det = np.sort(np.asarray(det_tags, dtype=np.int64))
    cross = np.sort(np.asarray(crossing_tags, dtype=np.int64))
    lags = np.arange(-max_lag, max_lag + 1)
    counts = np.zeros(lags.size, dtype=np.int64)
    lo = np.searchsorted(cross, det - max_lag)
    hi = np.searchsorted(cross, det + max_lag + 1)
    for d, a, b in zip(det, lo, hi):
        counts[cross[a:b] - d + max_lag] += 1
    return lags, counts


def analyze_correlation(lags, counts, exclude_halfwidth: int = 6):
    """(peak_lag, snr, fwhm) from a cross-correlation histogram.

    SNR is the peak over the mean of lags farther than exclude_halfwidth
    from the peak; FWHM is the contiguous run around the peak at or above
    half maximum.
    """
    if counts.sum() == 0:
        raise CalibrationFailedError("no coincidences in the scan window")
    ipk = int(counts.argmax())
    peak = counts[ipk]
    off = np.abs(np.arange(counts.size) - ipk) > exclude_halfwidth
    floor = counts[off].mean() if np.any(off) else 0.0
    snr = peak / max(floor, 1.0)
    half = peak / 2.0
    left = ipk
    while left > 0 and counts[left - 1] >= half:
        left -= 1
    right = ipk
    while right < counts.size - 1 and counts[right + 1] >= half:
        right += 1
    return int(lags[ipk]), float(snr), int(right - left + 1)


def thermal_calibration(det_tags, crossing_tags,
                        max_lag: int = MAX_LAG,
                        min_snr: float = 5.0) -> CalibrationResult:
    """Peak-delay estimate from detector and threshold-crossing tags."""
    if len(det_tags) == 0 or len(crossing_tags) == 0:
        raise CalibrationFailedError("no pulses to correlate")
    lags, counts = cross_correlate(det_tags, crossing_tags, max_lag)
    peak, snr, fwhm = analyze_correlation(lags, counts)
    if snr < min_snr:
        raise CalibrationFailedError(
            f"cross-correlation SNR {snr:.1f} below the minimum {min_snr}")
    return CalibrationResult(peak_delay=peak, snr=snr, fwhm_bins=fwhm,
                             lags=lags, counts=counts)
