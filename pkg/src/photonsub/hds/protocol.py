"""Binary wire protocol of the homodyne detection server.

All words are 32-bit little-endian.  Stream transport frames every message
in both directions with a single uint32 word count (the hardware's raw
protocol leaves stream delimiting to the client drivers; the length prefix
is this implementation's framing).

Request body (sample-query mode):
    [KEYWORD, overflow_number, timetag, timetag, ...]
A body that does not start with the keyword is a continuation batch:
    [timetag, timetag, ...]
and inherits the overflow number of the last keyword header seen on the
same connection.  In threshold-scan mode the body is
    [KEYWORD, overflow_number, start_timetag, end_timetag].

Response body:
    [KEYWORD, status, overflow_echo, count, payload...]
with `count` payload words (sample words, or crossing timetags for a
threshold scan).  Error responses carry count = 0 and a nonzero status.
"""

from __future__ import annotations

import enum
import struct

import numpy as np

from .words import WORD_DTYPE

KEYWORD = 0x48445351

RESPONSE_HEADER_WORDS = 4


class Status(enum.IntEnum):
    OK = 0
    KEYWORD_MISMATCH = 1
    STALE_OVERFLOW = 2
    ACTIVE_HALF = 3
    INTEGRITY = 4
    MALFORMED = 5
    RANGE = 6


class ProtocolError(RuntimeError):
    def __init__(self, status: Status, message: str = ""):
        super().__init__(message or status.name)
        self.status = status


class KeywordMismatchError(ProtocolError):
    def __init__(self, msg=""):
        super().__init__(Status.KEYWORD_MISMATCH, msg)


class StaleEpochError(ProtocolError):
    def __init__(self, msg=""):
        super().__init__(Status.STALE_OVERFLOW, msg)


class ActiveHalfError(ProtocolError):
    def __init__(self, msg=""):
        super().__init__(Status.ACTIVE_HALF, msg)


class IntegrityError(ProtocolError):
    def __init__(self, msg=""):
        super().__init__(Status.INTEGRITY, msg)


STATUS_EXCEPTIONS = {
    Status.KEYWORD_MISMATCH: KeywordMismatchError,
    Status.STALE_OVERFLOW: StaleEpochError,
    Status.ACTIVE_HALF: ActiveHalfError,
    Status.INTEGRITY: IntegrityError,
}


def encode_query(overflow: int, timetags, with_keyword: bool = True,
                 keyword: int = KEYWORD) -> np.ndarray:
    tags = np.asarray(timetags, dtype=WORD_DTYPE).ravel()
    if with_keyword:
        head = np.array([keyword, overflow], dtype=WORD_DTYPE)
        return np.concatenate([head, tags])
    return tags


def encode_scan(overflow: int, start: int, end: int,
                keyword: int = KEYWORD) -> np.ndarray:
    return np.array([keyword, overflow, start, end], dtype=WORD_DTYPE)


def encode_response(status: Status, overflow: int, payload=None,
                    keyword: int = KEYWORD) -> np.ndarray:
    payload = (np.zeros(0, dtype=WORD_DTYPE) if payload is None
               else np.asarray(payload, dtype=WORD_DTYPE).ravel())
    head = np.array([keyword, int(status), overflow, payload.size],
                    dtype=WORD_DTYPE)
    return np.concatenate([head, payload])


def decode_response(words: np.ndarray):
    """(status, overflow, payload); raises on malformed frames."""
    words = np.asarray(words, dtype=WORD_DTYPE)
    if words.size < RESPONSE_HEADER_WORDS:
        raise ValueError("short response frame")
    if int(words[0]) != KEYWORD:
        raise ValueError("response does not start with the protocol keyword")
    status = Status(int(words[1]))
    overflow = int(words[2])
    count = int(words[3])
    if words.size != RESPONSE_HEADER_WORDS + count:
        raise ValueError("response payload length mismatch")
    return status, overflow, words[RESPONSE_HEADER_WORDS:]


def frame_message(words: np.ndarray) -> bytes:
    """Length-prefixed stream frame: uint32 count + words."""
    words = np.asarray(words, dtype=WORD_DTYPE).ravel()
    return struct.pack("<I", words.size) + words.tobytes()


def read_frame(sock) -> np.ndarray:
    """Read one length-prefixed frame from a socket; None on EOF."""
    head = _read_exact(sock, 4)
    if head is None:
        return None
    (count,) = struct.unpack("<I", head)
    body = _read_exact(sock, 4 * count)
    if body is None:
        raise ConnectionError("stream truncated inside a frame")
    return np.frombuffer(body, dtype=WORD_DTYPE).copy()


def _read_exact(sock, n: int):
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise ConnectionError("stream truncated mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)
