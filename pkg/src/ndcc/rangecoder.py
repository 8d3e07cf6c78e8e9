"""Bit-exact byte-oriented range coder over integer CDF tables.

Carry handling follows the classic cache/pending-byte scheme: the encoder
tracks a 33-bit low, emits bytes once the 32-bit range drops below 2**24, and
propagates carries through the cached byte. The decoder mirrors the
renormalization exactly, so encode/decode round-trips are bitwise lossless.
"""
from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

import numpy as np

from .entropy import CdfTable

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class DecodeError(ValueError):
    """Raised on truncated or internally inconsistent payloads."""


class RangeEncoder:
    def __init__(self) -> None:
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def encode(self, start: int, freq: int, precision: int) -> None:
        r = self._range >> precision
        self._low += r * start
        self._range = r * freq
        while self._range < _TOP:
            self._shift_low()
            self._range = (self._range << 8) & _MASK32

    def _shift_low(self) -> None:
        if (self._low & _MASK32) < 0xFF000000 or self._low > _MASK32:
            carry = self._low >> 32
            self._out.append((self._cache + carry) & 0xFF)
            for _ in range(self._cache_size - 1):
                self._out.append((0xFF + carry) & 0xFF)
            self._cache_size = 0
            self._cache = (self._low >> 24) & 0xFF
        self._cache_size += 1
        self._low = (self._low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self._range = _MASK32
        self._code = 0
        self._byte()  # leading byte produced by the encoder's initial cache
        for _ in range(4):
            self._code = ((self._code << 8) | self._byte()) & _MASK32

    def _byte(self) -> int:
        if self._pos >= len(self._data):
            raise DecodeError("truncated payload")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode(self, cdf: Sequence[int], precision: int) -> int:
        r = self._range >> precision
        f = min(self._code // r, (1 << precision) - 1)
        sym = bisect_right(cdf, f) - 1
        self._code -= r * cdf[sym]
        self._range = r * (cdf[sym + 1] - cdf[sym])
        while self._range < _TOP:
            self._code = ((self._code << 8) | self._byte()) & _MASK32
            self._range <<= 8
        return sym


def encode_indices(indices: Sequence[int], cdf: Sequence[int], precision: int) -> bytes:
    enc = RangeEncoder()
    for s in indices:
        enc.encode(cdf[s], cdf[s + 1] - cdf[s], precision)
    return enc.finish()


def decode_indices(data: bytes, cdf: Sequence[int], precision: int, count: int) -> list[int]:
    dec = RangeDecoder(data)
    return [dec.decode(cdf, precision) for _ in range(count)]


def rc_encode(values: np.ndarray, table: CdfTable) -> bytes:
    """Encode a (channels, n) integer array channel by channel.

    Values outside a channel's table range fall into the escape bins at the
    extremes (they decode as the clipped extreme value).
    """
    values = np.asarray(values, dtype=np.int64)
    if values.ndim != 2 or values.shape[0] != len(table.cdfs):
        raise ValueError(f"expected ({len(table.cdfs)}, n) values, got {values.shape}")
    enc = RangeEncoder()
    p = table.precision
    for c in range(values.shape[0]):
        cdf = table.cdfs[c].tolist()
        hi = len(cdf) - 2
        off = int(table.offsets[c])
        for v in values[c].tolist():
            s = min(max(v - off, 0), hi)
            enc.encode(cdf[s], cdf[s + 1] - cdf[s], p)
    return enc.finish()


def rc_decode(data: bytes, table: CdfTable, count: int) -> np.ndarray:
    """Decode `count` symbols per channel; inverse of rc_encode for in-range values."""
    channels = len(table.cdfs)
    out = np.empty((channels, count), dtype=np.int64)
    dec = RangeDecoder(data)
    p = table.precision
    for c in range(channels):
        cdf = table.cdfs[c].tolist()
        off = int(table.offsets[c])
        for i in range(count):
            out[c, i] = dec.decode(cdf, p) + off
    return out
