"""32-bit sample-word packing for the homodyne detection server.

Each buffered word carries two signed 14-bit ADC samples, sign-extended to
16 bits: the homodyne sample in the high half, the phase-drive sample in
the low half.  The placeholder half 0x8000 (-32768) cannot arise from
sign-extending any 14-bit value, so rejected samples are always
distinguishable from data.
"""

from __future__ import annotations

import numpy as np

ADC_MIN = -8192
ADC_MAX = 8191

PLACEHOLDER_HALF = 0x8000
PLACEHOLDER_WORD = np.uint32((PLACEHOLDER_HALF << 16) | PLACEHOLDER_HALF)

WORD_DTYPE = np.dtype("<u4")


def pack_words(adc_a, adc_b) -> np.ndarray:
    """Pack homodyne (a) and phase-drive (b) samples into 32-bit words."""
    a = np.asarray(adc_a, dtype=np.int64)
    b = np.asarray(adc_b, dtype=np.int64)
    if a.size and (a.min() < ADC_MIN or a.max() > ADC_MAX):
        raise ValueError("homodyne sample outside the 14-bit range")
    if b.size and (b.min() < ADC_MIN or b.max() > ADC_MAX):
        raise ValueError("phase-drive sample outside the 14-bit range")
    return (((a & 0xFFFF) << 16) | (b & 0xFFFF)).astype(WORD_DTYPE)


def unpack_words(words):
    """(adc_a, adc_b) as sign-extended int16 arrays."""
    w = np.asarray(words, dtype=WORD_DTYPE)
    a = (w >> np.uint32(16)).astype(np.uint16).astype(np.int16)
    b = (w & np.uint32(0xFFFF)).astype(np.uint16).astype(np.int16)
    return a, b


def is_placeholder(words) -> np.ndarray:
    """True where the homodyne half carries the rejected-sample marker."""
    w = np.asarray(words, dtype=WORD_DTYPE)
    return (w >> np.uint32(16)) == np.uint32(PLACEHOLDER_HALF)
