"""Pure-Python implementations of the hot kernels.

These mirror ``_ckernels.pyx`` exactly and are used when the extension is
not built (or when ``EMHASH_PURE=1``).  Bit streams are MSB-first: stream
bit ``i`` lives in byte ``i >> 3`` at position ``7 - (i & 7)``.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

MERSENNE61 = (1 << 61) - 1


class LRUCache:
    """Block-frame LRU cache that only tracks residency and dirtiness."""

    def __init__(self, frames: int):
        if frames < 1:
            raise ValueError("cache needs at least one frame")
        self.frames = frames
        self._lru: OrderedDict[int, bool] = OrderedDict()
        self.reads = 0
        self.writes = 0
        self.hits = 0

    def reset_counters(self) -> None:
        self.reads = self.writes = self.hits = 0

    def access_one(self, bid: int, write: bool, fetch: bool) -> None:
        lru = self._lru
        dirty = lru.get(bid)
        if dirty is not None:
            self.hits += 1
            lru.move_to_end(bid)
            if write and not dirty:
                lru[bid] = True
            return
        if not write or fetch:
            self.reads += 1
        if len(lru) >= self.frames:
            _, evicted_dirty = lru.popitem(last=False)
            if evicted_dirty:
                self.writes += 1
        lru[bid] = bool(write)

    def access(self, bids, write: bool, fetch: bool) -> None:
        access_one = self.access_one
        for bid in np.asarray(bids, dtype=np.int64).tolist():
            access_one(bid, write, fetch)

    def access_range(self, lo: int, hi: int, write: bool, fetch: bool) -> None:
        access_one = self.access_one
        for bid in range(lo, hi):
            access_one(bid, write, fetch)

    def flush(self) -> int:
        n = 0
        for bid, dirty in self._lru.items():
            if dirty:
                n += 1
                self._lru[bid] = False
        self.writes += n
        return n

    def discard(self, lo: int, hi: int) -> None:
        if hi - lo < len(self._lru):
            for bid in range(lo, hi):
                self._lru.pop(bid, None)
        else:
            for bid in [b for b in self._lru if lo <= b < hi]:
                del self._lru[bid]

    def contains(self, bid: int) -> bool:
        return bid in self._lru

    def resident(self) -> list[int]:
        return list(self._lru)


def _bits_to_bytes(nbits: int) -> int:
    return (nbits + 7) >> 3


_CHUNK = 1 << 18  # values per vectorised step; a multiple of 8 keeps chunks byte aligned


def pack_fixed(values, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.uint64)
    n = len(values)
    out = np.zeros(_bits_to_bytes(n * width), dtype=np.uint8)
    if n == 0 or width == 0:
        return out
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    for lo in range(0, n, _CHUNK):
        part = values[lo: lo + _CHUNK]
        bits = ((part[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
        packed = np.packbits(bits.ravel())
        start = (lo * width) >> 3
        out[start: start + len(packed)] = packed
    return out


def unpack_fixed(buf, bit_off: int, width: int, count: int) -> np.ndarray:
    out = np.zeros(count, dtype=np.uint64)
    if count == 0 or width == 0:
        return out
    buf = np.asarray(buf, dtype=np.uint8)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    for lo in range(0, count, _CHUNK):
        m = min(_CHUNK, count - lo)
        b0 = bit_off + lo * width
        first = b0 >> 3
        bits = np.unpackbits(buf[first: _bits_to_bytes(b0 + m * width)])
        skip = b0 - (first << 3)
        bits = bits[skip: skip + m * width].reshape(m, width).astype(np.uint64)
        out[lo: lo + m] = (bits << shifts[None, :]).sum(axis=1, dtype=np.uint64)
    return out


def _as_rows(sketch, n: int) -> np.ndarray:
    sk = np.asarray(sketch, dtype=np.uint64)
    if sk.ndim == 2:
        return sk
    return sk.reshape(n, -1) if n else sk.reshape(0, 0)


def encode_entries(deltas, sketch, c: int):
    """Encode ``delta varint + k sketch chars`` per entry into a c-bit character stream.

    Returns ``(buf, offsets)`` where ``offsets[i]`` is the bit offset of entry
    ``i`` and ``offsets[n]`` the total bit length.
    """
    deltas = np.asarray(deltas, dtype=np.uint64)
    n = len(deltas)
    sketch = _as_rows(sketch, n)
    payload = c - 1
    pmask = (1 << payload) - 1
    cont = 1 << payload
    chars: list[int] = []
    offsets = np.empty(n + 1, dtype=np.uint64)
    for i, (d, row) in enumerate(zip(deltas.tolist(), sketch.tolist())):
        offsets[i] = len(chars) * c
        while d > pmask:
            chars.append((d & pmask) | cont)
            d >>= payload
        chars.append(d)
        chars.extend(row)
    offsets[n] = len(chars) * c
    return pack_fixed(np.array(chars, dtype=np.uint64), c), offsets


def decode_entries(buf, bit_start: int, bit_end: int, c: int, k: int):
    nchars = (bit_end - bit_start) // c
    chars = unpack_fixed(buf, bit_start, c, nchars).tolist()
    payload = c - 1
    pmask = (1 << payload) - 1
    cont = 1 << payload
    deltas, rows, offs = [], [], []
    pos = 0
    while pos < nchars:
        offs.append(bit_start + pos * c)
        d = 0
        shift = 0
        while True:
            ch = chars[pos]
            pos += 1
            d |= (ch & pmask) << shift
            shift += payload
            if not ch & cont:
                break
        rows.append(chars[pos: pos + k])
        pos += k
        deltas.append(d)
    offs.append(bit_start + pos * c)
    m = len(deltas)
    sk = np.array(rows, dtype=np.uint16).reshape(m, k)
    return np.array(deltas, dtype=np.uint64), sk, np.array(offs, dtype=np.uint64)


def poly_eval_many(xs, coeffs) -> np.ndarray:
    """Horner evaluation of ``sum coeffs[i] * x**(d-i)`` mod 2**61 - 1."""
    cs = [int(a) for a in coeffs]
    out = np.empty(len(xs), dtype=np.uint64)
    p = MERSENNE61
    for i, x in enumerate(np.asarray(xs, dtype=np.uint64).tolist()):
        acc = 0
        for a in cs:
            acc = (acc * x + a) % p
        out[i] = acc
    return out


def prehash_keys(keys, point: int) -> np.ndarray:
    """Map byte strings into the field by evaluating their 7-byte limbs at ``point``."""
    p = MERSENNE61
    out = np.empty(len(keys), dtype=np.uint64)
    for i, key in enumerate(keys):
        acc = len(key) % p
        for j in range(0, len(key), 7):
            limb = int.from_bytes(key[j: j + 7], "little")
            acc = (acc * point + limb) % p
        out[i] = acc
    return out
