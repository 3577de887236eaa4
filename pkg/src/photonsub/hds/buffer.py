"""Paged sample ring buffer with memory-overflow bookkeeping.

The buffer holds one 32-bit word per 100-MHz timetag across 67,500 pages of
1024 words (69,120,000 words, 0.6912 s per wrap).  Timetags map to storage
through a page table, mirroring scattered physical page allocation: address
= page_map[t / 1024] * 1024 + t mod 1024.  A 29-bit counter increments on
every wrap and anchors query validity.
"""

from __future__ import annotations

import numpy as np

from .words import WORD_DTYPE

DEFAULT_PAGES = 67_500
PAGE_WORDS = 1024
OVERFLOW_BITS = 29
OVERFLOW_MASK = (1 << OVERFLOW_BITS) - 1


class RingBuffer:
    def __init__(self, pages: int = DEFAULT_PAGES, page_map_seed: int = 0):
        if pages < 2 or pages % 2:
            raise ValueError("page count must be an even number >= 2")
        self.pages = pages
        self.capacity = pages * PAGE_WORDS
        self.half = self.capacity // 2
        # scattered-allocation emulation: a fixed pseudo-random page table
        rng = np.random.default_rng(page_map_seed)
        self.page_map = rng.permutation(pages).astype(np.int64)
        self.data = np.zeros(self.capacity, dtype=WORD_DTYPE)
        self.write_cursor = 0
        self.overflow_number = 0

    def physical_index(self, timetags) -> np.ndarray:
        t = np.asarray(timetags, dtype=np.int64)
        if t.size and (t.min() < 0 or t.max() >= self.capacity):
            raise IndexError("timetag outside buffer capacity")
        return (self.page_map[t >> 10] << 10) | (t & 1023)

    def write(self, words: np.ndarray) -> int:
        """Append words at the cursor; returns the number of wraps taken."""
        words = np.asarray(words, dtype=WORD_DTYPE).ravel()
        wraps = 0
        pos = 0
        while pos < words.size:
            n = min(words.size - pos, self.capacity - self.write_cursor)
            tags = np.arange(self.write_cursor, self.write_cursor + n)
            self.data[self.physical_index(tags)] = words[pos:pos + n]
            self.write_cursor += n
            pos += n
            if self.write_cursor == self.capacity:
                self.write_cursor = 0
                self.overflow_number = (self.overflow_number + 1) & OVERFLOW_MASK
                wraps += 1
        return wraps

    def read(self, timetags) -> np.ndarray:
        return self.data[self.physical_index(timetags)]

    def reset(self, start_cursor: int = 0):
        """Start-pulse handshake: zero the clock, optionally with the
        comparator-dependent residual offset as the initial cursor."""
        if not 0 <= start_cursor < self.capacity:
            raise ValueError("start cursor outside capacity")
        self.data[:] = 0
        self.write_cursor = start_cursor
        self.overflow_number = 0
