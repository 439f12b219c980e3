"""Range coder with per-element discretized-Gaussian CDF tables.

The coder a 64-bit low / 32-bit range state with byte-wise renormalization
(carry handled through a cache byte plus a pending-0xFF counter).  Frequency
tables use 16-bit precision: every table row is a cumulative array over the
integer symbol support [-127, 127] whose final entry is exactly 2**16 and
whose per-symbol mass is at least 1, so rows are strictly increasing and any
symbol in support can always be coded.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

PRECISION = 16
TOTAL = 1 << PRECISION

SUPPORT_MIN = -127
SUPPORT_MAX = 127
NUM_SYMBOLS = SUPPORT_MAX - SUPPORT_MIN + 1

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF

# size in bytes of the stream produced for zero symbols (encoder flush)
TERMINATOR_SIZE = 5


class RangeEncoder:
    """Single-use incremental encoder; symbols go in, bytes come out."""

    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._pending = 0
        self._started = False
        self._out = bytearray()
        self._finished = False

    def __len__(self) -> int:
        return len(self._out)

    def encode(self, cum_low: int, cum_high: int) -> None:
        """Encode one symbol occupying [cum_low, cum_high) of the 2**16 scale."""
        r = self._range >> PRECISION
        self._low += r * cum_low
        self._range = r * (cum_high - cum_low)
        while self._range < _TOP:
            self._range = (self._range << 8) & _MASK32
            self._shift_low()

    def _shift_low(self) -> None:
        if self._low < 0xFF000000 or self._low > _MASK32:
            carry = self._low >> 32
            if self._started:
                self._out.append((self._cache + carry) & 0xFF)
            else:
                # leading byte: nothing cached yet, emit the carry itself
                self._out.append(carry & 0xFF)
                self._started = True
            if self._pending:
                filler = (0xFF + carry) & 0xFF
                self._out.extend([filler] * self._pending)
                self._pending = 0
            self._cache = (self._low >> 24) & 0xFF
        else:
            self._pending += 1
        self._low = (self._low << 8) & _MASK32

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(5):
                self._shift_low()
            self._finished = True
        return bytes(self._out)


class RangeDecoder:
    """Mirror of RangeEncoder; reads past-the-end bytes as zeros so corrupt
    or truncated payloads decode to garbage symbols instead of raising."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 1  # skip the encoder's leading byte
        self._range = _MASK32
        self._code = 0
        for _ in range(4):
            self._code = (self._code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        b = self._data[self._pos] if self._pos < len(self._data) else 0
        self._pos += 1
        return b

    def decode_target(self) -> int:
        r = self._range >> PRECISION
        return min(self._code // r, TOTAL - 1)

    def advance(self, cum_low: int, cum_high: int) -> None:
        r = self._range >> PRECISION
        self._code -= r * cum_low
        self._range = r * (cum_high - cum_low)
        while self._range < _TOP:
            self._range = (self._range << 8) & _MASK32
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32


_SQRT2 = float(np.sqrt(2.0))


def gaussian_interval_mass(mean, scale, lo: int = SUPPORT_MIN, hi: int = SUPPORT_MAX):
    """P(v - 0.5 <= X < v + 0.5) for each integer v in [lo, hi], per element.

    mean/scale broadcast against each other; the result has one row per
    element and one column per support symbol.  Uses erf so that symmetric
    parameters give exactly symmetric tables (erf is odd in IEEE libm).
    """
    mean = np.asarray(mean, dtype=np.float64).reshape(-1, 1)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1, 1)
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    t = (edges - mean) / (scale * _SQRT2)
    cdf = 0.5 * (1.0 + erf(t))
    return np.diff(cdf, axis=1)


def build_cdf(mean, scale, lo: int = SUPPORT_MIN, hi: int = SUPPORT_MAX) -> np.ndarray:
    """Quantize Gaussian interval masses into cumulative frequency tables.

    Returns an int64 array of shape (N, hi-lo+2); row k is the cumulative
    table for element k: row[0] == 0, row[-1] == 2**16, strictly increasing.
    """
    if hi < lo:
        raise ValueError("empty symbol support")
    p = gaussian_interval_mass(mean, scale, lo, hi)
    freq = np.floor(p * TOTAL).astype(np.int64)
    np.clip(freq, 1, None, out=freq)
    # exact renormalization: dump the surplus/deficit on the largest entry,
    # which by construction can absorb it while staying >= 1
    diff = TOTAL - freq.sum(axis=1)
    rows = np.arange(freq.shape[0])
    freq[rows, freq.argmax(axis=1)] += diff
    cdf = np.zeros((freq.shape[0], freq.shape[1] + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def encode_symbols(enc: RangeEncoder, symbols: np.ndarray, cdf: np.ndarray,
                   lo: int = SUPPORT_MIN) -> None:
    """Feed symbols (already clipped into support) through the encoder using
    one table row per symbol."""
    idx = np.asarray(symbols, dtype=np.int64).ravel() - lo
    if idx.size != cdf.shape[0]:
        raise ValueError(f"{idx.size} symbols but {cdf.shape[0]} table rows")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= cdf.shape[1] - 1:
        raise ValueError("symbol outside table support")
    rows = np.arange(idx.size)
    lows = cdf[rows, idx].tolist()
    highs = cdf[rows, idx + 1].tolist()
    encode = enc.encode
    for cl, ch in zip(lows, highs):
        encode(cl, ch)


def decode_symbols(dec: RangeDecoder, cdf: np.ndarray,
                   lo: int = SUPPORT_MIN) -> np.ndarray:
    """Decode one symbol per table row; inverse of encode_symbols."""
    n = cdf.shape[0]
    out = np.empty(n, dtype=np.int64)
    target = dec.decode_target
    advance = dec.advance
    search = np.searchsorted
    for k in range(n):
        row = cdf[k]
        s = search(row, target(), side="right") - 1
        advance(int(row[s]), int(row[s + 1]))
        out[k] = s
    return out + lo


def range_encode(symbols, tables: np.ndarray) -> bytes:
    """One-shot encode: one table row per symbol, returns the byte payload."""
    enc = RangeEncoder()
    encode_symbols(enc, symbols, tables)
    return enc.finish()


def range_decode(data: bytes, tables: np.ndarray, count: int | None = None) -> np.ndarray:
    """One-shot decode of `count` symbols (defaults to one per table row)."""
    if count is not None and count != tables.shape[0]:
        raise ValueError("count does not match number of table rows")
    dec = RangeDecoder(data)
    return decode_symbols(dec, tables)
