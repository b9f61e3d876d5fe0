"""Byte-oriented 32-bit range coder with carry propagation.

The coder keeps a 32-bit (low, range) pair and renormalizes byte by byte
whenever range drops below 2^24. Carries are handled by holding back one
cache byte plus a run of pending 0xFF bytes and resolving them when the
next non-propagating byte appears. The very first byte produced this way
only ever carries overflow out of the 32-bit window, never payload bits,
so it is dropped from the payload; the decoder simply preloads four bytes.

Symmetry note: the decoder's range register follows exactly the same
sequence of values as the encoder's, so the decoder consumes precisely
(number of encoder renormalizations) + 4 bytes. The final flush always
drains the pending run, so the payload has exactly that many bytes; any
one-byte truncation therefore starves the decoder and raises an integrity
error instead of returning wrong tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError
from .models import CDF_TOTAL, Session

_TOP = 1 << 24
_MASK32 = (1 << 32) - 1


@dataclass(frozen=True)
class CodedPayload:
    data: bytes
    token_count: int


class RangeEncoder:
    """Single-use encoder; feed (cum_lo, cum_hi) spans, then flush()."""

    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1  # the spurious first byte
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int) -> None:
        assert 0 <= cum_lo < cum_hi <= CDF_TOTAL, "invalid CDF span"
        r = self._range >> 16
        self._low += r * cum_lo
        self._range = r * (cum_hi - cum_lo)
        while self._range < _TOP:
            self._shift_low()
            self._range <<= 8

    def _shift_low(self) -> None:
        if (self._low & _MASK32) < 0xFF000000 or self._low > _MASK32:
            carry = self._low >> 32
            self._out.append((self._cache + carry) & 0xFF)
            if self._cache_size > 1:
                self._out.extend(
                    bytes(((0xFF + carry) & 0xFF,)) * (self._cache_size - 1)
                )
            self._cache = (self._low >> 24) & 0xFF
            self._cache_size = 0
        self._cache_size += 1
        self._low = (self._low << 8) & _MASK32

    def flush(self) -> bytes:
        # After four shifts low is fully emitted and equals zero, so the
        # fifth shift always drains the cache and pending run. out[0] only
        # holds overflow past bit 32; both sides track low/code mod 2^32,
        # so it never needs to reach the wire.
        for _ in range(5):
            self._shift_low()
        return bytes(self._out[1:])


class RangeDecoder:
    """Single-use decoder over one payload."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._range = _MASK32
        self._code = 0
        for _ in range(4):
            self._code = (self._code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise IntegrityError("payload exhausted before all tokens decoded")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_target(self) -> int:
        """The scaled cumulative-frequency value of the next token."""
        self._r = self._range >> 16
        target = self._code // self._r
        if target >= CDF_TOTAL:
            raise IntegrityError("corrupt payload: target outside CDF range")
        return target

    def consume(self, cum_lo: int, cum_hi: int) -> None:
        self._code -= self._r * cum_lo
        self._range = self._r * (cum_hi - cum_lo)
        while self._range < _TOP:
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32
            self._range <<= 8

    @property
    def bytes_consumed(self) -> int:
        return self._pos


def encode_tokens(tokens, session: Session) -> CodedPayload:
    """Entropy-code tokens against a model session.

    The caller owns bos semantics: push bos before calling so the first
    CDF is conditioned on it. Every coded token is also pushed, keeping
    the session in lockstep with a future decoding session.
    """
    enc = RangeEncoder()
    count = 0
    for token in tokens:
        token = int(token)
        cdf = session.next_cdf()
        lo, hi = cdf.span(token)
        enc.encode(lo, hi)
        session.push_token(token)
        count += 1
    return CodedPayload(data=enc.flush(), token_count=count)


def decode_tokens(payload: CodedPayload, session: Session) -> list[int]:
    """Invert encode_tokens with a twin session.

    Raises:
        IntegrityError: payload too short, too long, or a decoded target
            that no CDF span covers.
    """
    dec = RangeDecoder(payload.data)
    out = []
    for _ in range(payload.token_count):
        cdf = session.next_cdf()
        target = dec.decode_target()
        # cumfreq is strictly increasing, so this finds the unique token
        # with cumfreq[t] <= target < cumfreq[t+1].
        token = int(np.searchsorted(cdf.cumfreq, target, side="right")) - 1
        lo, hi = cdf.span(token)
        dec.consume(lo, hi)
        session.push_token(token)
        out.append(token)
    if dec.bytes_consumed != len(payload.data):
        raise IntegrityError(
            f"{len(payload.data) - dec.bytes_consumed} trailing payload bytes"
        )
    return out
