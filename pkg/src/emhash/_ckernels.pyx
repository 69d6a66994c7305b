# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: LRU frame accounting, c-bit character streams, field hashing.

Semantics are identical to ``_pykernels``; tests run both against each other.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint16_t, uint64_t, int64_t
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector
from cython.operator cimport dereference as deref

cnp.import_array()

cdef uint64_t P61 = (<uint64_t>1 << 61) - 1

cdef extern from *:
    """
    typedef unsigned __int128 emh_u128;
    static inline unsigned long long emh_mulmod61(unsigned long long a, unsigned long long b) {
        emh_u128 z = (emh_u128)a * b;
        unsigned long long lo = (unsigned long long)(z & (((unsigned long long)1 << 61) - 1));
        unsigned long long hi = (unsigned long long)(z >> 61);
        unsigned long long r = lo + hi;
        const unsigned long long p = ((unsigned long long)1 << 61) - 1;
        if (r >= p) r -= p;
        return r;
    }
    """
    uint64_t emh_mulmod61(uint64_t a, uint64_t b) nogil


cdef class LRUCache:
    """Block-frame LRU cache that only tracks residency and dirtiness."""

    cdef public int64_t frames
    cdef public int64_t reads
    cdef public int64_t writes
    cdef public int64_t hits
    cdef unordered_map[int64_t, int64_t] index
    cdef vector[int64_t] ids
    cdef vector[int64_t] prev
    cdef vector[int64_t] nxt
    cdef vector[uint8_t] dirty
    cdef int64_t head   # most recently used
    cdef int64_t tail   # least recently used
    cdef int64_t used
    cdef vector[int64_t] free_slots

    def __init__(self, int64_t frames):
        if frames < 1:
            raise ValueError("cache needs at least one frame")
        self.frames = frames
        self.ids.resize(frames)
        self.prev.resize(frames)
        self.nxt.resize(frames)
        self.dirty.resize(frames)
        self.head = -1
        self.tail = -1
        self.used = 0
        self.reads = self.writes = self.hits = 0

    def reset_counters(self):
        self.reads = self.writes = self.hits = 0

    cdef inline void _unlink(self, int64_t s):
        cdef int64_t p = self.prev[s], n = self.nxt[s]
        if p >= 0:
            self.nxt[p] = n
        else:
            self.head = n
        if n >= 0:
            self.prev[n] = p
        else:
            self.tail = p

    cdef inline void _push_front(self, int64_t s):
        self.prev[s] = -1
        self.nxt[s] = self.head
        if self.head >= 0:
            self.prev[self.head] = s
        self.head = s
        if self.tail < 0:
            self.tail = s

    cdef void _access(self, int64_t bid, bint write, bint fetch):
        cdef unordered_map[int64_t, int64_t].iterator it = self.index.find(bid)
        cdef int64_t s
        if it != self.index.end():
            s = deref(it).second
            self.hits += 1
            if s != self.head:
                self._unlink(s)
                self._push_front(s)
            if write:
                self.dirty[s] = 1
            return
        if not write or fetch:
            self.reads += 1
        if self.free_slots.size() > 0:
            s = self.free_slots.back()
            self.free_slots.pop_back()
        elif self.used < self.frames:
            s = self.used
            self.used += 1
        else:
            s = self.tail
            self._unlink(s)
            self.index.erase(self.ids[s])
            if self.dirty[s]:
                self.writes += 1
        self.ids[s] = bid
        if write:
            self.dirty[s] = 1
        else:
            self.dirty[s] = 0
        self.index[bid] = s
        self._push_front(s)

    def access_one(self, int64_t bid, bint write, bint fetch):
        self._access(bid, write, fetch)

    def access(self, bids, bint write, bint fetch):
        cdef cnp.int64_t[::1] arr = np.ascontiguousarray(bids, dtype=np.int64)
        cdef Py_ssize_t i
        for i in range(arr.shape[0]):
            self._access(arr[i], write, fetch)

    def access_range(self, int64_t lo, int64_t hi, bint write, bint fetch):
        cdef int64_t b
        for b in range(lo, hi):
            self._access(b, write, fetch)

    def flush(self):
        cdef int64_t s = self.head, n = 0
        while s >= 0:
            if self.dirty[s]:
                self.dirty[s] = 0
                n += 1
            s = self.nxt[s]
        self.writes += n
        return n

    def discard(self, int64_t lo, int64_t hi):
        cdef int64_t s = self.head, nx
        while s >= 0:
            nx = self.nxt[s]
            if lo <= self.ids[s] < hi:
                self._unlink(s)
                self.index.erase(self.ids[s])
                self.free_slots.push_back(s)
            s = nx

    def contains(self, int64_t bid):
        return self.index.find(bid) != self.index.end()

    def resident(self):
        # least recently used first, matching OrderedDict iteration order
        out = []
        cdef int64_t s = self.tail
        while s >= 0:
            out.append(self.ids[s])
            s = self.prev[s]
        return out


cdef inline uint64_t _get_bits(const uint8_t[::1] buf, uint64_t pos, int width) noexcept nogil:
    cdef uint64_t v = 0
    cdef int got = 0
    cdef uint64_t byte_i
    cdef int bit_in, take, avail
    while got < width:
        byte_i = pos >> 3
        bit_in = pos & 7
        avail = 8 - bit_in
        take = width - got
        if take > avail:
            take = avail
        v = (v << take) | ((buf[byte_i] >> (avail - take)) & ((1 << take) - 1))
        got += take
        pos += take
    return v


cdef inline void _put_bits(uint8_t[::1] buf, uint64_t pos, uint64_t value, int width) noexcept nogil:
    cdef int left = width
    cdef uint64_t byte_i
    cdef int bit_in, take, avail
    while left > 0:
        byte_i = pos >> 3
        bit_in = pos & 7
        avail = 8 - bit_in
        take = left if left < avail else avail
        buf[byte_i] |= <uint8_t>(((value >> (left - take)) & ((1 << take) - 1)) << (avail - take))
        left -= take
        pos += take


def pack_fixed(values, int width):
    cdef cnp.uint64_t[::1] v = np.ascontiguousarray(values, dtype=np.uint64)
    cdef Py_ssize_t n = v.shape[0], i
    out = np.zeros((n * width + 7) >> 3, dtype=np.uint8)
    cdef uint8_t[::1] o = out
    if width == 0:
        return out
    with nogil:
        for i in range(n):
            _put_bits(o, <uint64_t>i * width, v[i], width)
    return out


def unpack_fixed(buf, uint64_t bit_off, int width, Py_ssize_t count):
    out = np.zeros(count, dtype=np.uint64)
    if count == 0 or width == 0:
        return out
    cdef const uint8_t[::1] b = np.ascontiguousarray(buf, dtype=np.uint8)
    cdef cnp.uint64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(count):
            o[i] = _get_bits(b, bit_off + <uint64_t>i * width, width)
    return out


def encode_entries(deltas, sketch, int c):
    cdef cnp.uint64_t[::1] d = np.ascontiguousarray(deltas, dtype=np.uint64)
    cdef Py_ssize_t n = d.shape[0]
    sk_arr = np.asarray(sketch, dtype=np.uint64)
    if sk_arr.ndim != 2:
        sk_arr = sk_arr.reshape(n, -1) if n else sk_arr.reshape(0, 0)
    sk_arr = np.ascontiguousarray(sk_arr)
    cdef cnp.uint64_t[:, ::1] sk = sk_arr
    cdef Py_ssize_t k = sk_arr.shape[1]
    cdef int payload = c - 1
    cdef uint64_t pmask = (<uint64_t>1 << payload) - 1
    cdef uint64_t cont = <uint64_t>1 << payload
    cdef Py_ssize_t i, j
    cdef uint64_t x, total = 0
    offsets = np.empty(n + 1, dtype=np.uint64)
    cdef cnp.uint64_t[::1] off = offsets
    # sizing pass
    for i in range(n):
        off[i] = total
        x = d[i]
        total += c
        while x > pmask:
            x >>= payload
            total += c
        total += k * c
    off[n] = total
    out = np.zeros((total + 7) >> 3, dtype=np.uint8)
    cdef uint8_t[::1] o = out
    cdef uint64_t pos
    with nogil:
        for i in range(n):
            pos = off[i]
            x = d[i]
            while x > pmask:
                _put_bits(o, pos, (x & pmask) | cont, c)
                x >>= payload
                pos += c
            _put_bits(o, pos, x, c)
            pos += c
            for j in range(k):
                _put_bits(o, pos, sk[i, j], c)
                pos += c
    return out, offsets


def decode_entries(buf, uint64_t bit_start, uint64_t bit_end, int c, Py_ssize_t k):
    cdef const uint8_t[::1] b = np.ascontiguousarray(buf, dtype=np.uint8)
    cdef int payload = c - 1
    cdef uint64_t pmask = (<uint64_t>1 << payload) - 1
    cdef uint64_t cont = <uint64_t>1 << payload
    cdef uint64_t pos = bit_start, ch, x
    cdef int shift
    cdef Py_ssize_t m = 0, j, cap
    # upper bound on entry count: every entry is at least (k + 1) chars
    cap = <Py_ssize_t>((bit_end - bit_start) // (c * (k + 1))) + 1
    deltas = np.empty(cap, dtype=np.uint64)
    sketch = np.empty((cap, k), dtype=np.uint16)
    offs = np.empty(cap + 1, dtype=np.uint64)
    cdef cnp.uint64_t[::1] dv = deltas
    cdef cnp.uint16_t[:, ::1] sv = sketch
    cdef cnp.uint64_t[::1] ov = offs
    with nogil:
        while pos < bit_end:
            ov[m] = pos
            x = 0
            shift = 0
            while True:
                ch = _get_bits(b, pos, c)
                pos += c
                x |= (ch & pmask) << shift
                shift += payload
                if not (ch & cont):
                    break
            dv[m] = x
            for j in range(k):
                sv[m, j] = <uint16_t>_get_bits(b, pos, c)
                pos += c
            m += 1
        ov[m] = pos
    return deltas[:m].copy(), sketch[:m].copy(), offs[: m + 1].copy()


def poly_eval_many(xs, coeffs):
    cdef cnp.uint64_t[::1] xv = np.ascontiguousarray(xs, dtype=np.uint64)
    cdef cnp.uint64_t[::1] cv = np.ascontiguousarray(coeffs, dtype=np.uint64)
    cdef Py_ssize_t n = xv.shape[0], d = cv.shape[0], i, j
    out = np.empty(n, dtype=np.uint64)
    cdef cnp.uint64_t[::1] o = out
    cdef uint64_t acc, x
    with nogil:
        for i in range(n):
            x = xv[i]
            acc = 0
            for j in range(d):
                acc = emh_mulmod61(acc, x) + cv[j]
                if acc >= P61:
                    acc -= P61
            o[i] = acc
    return out


def prehash_keys(keys, uint64_t point):
    cdef Py_ssize_t n = len(keys), i, j, L, t
    out = np.empty(n, dtype=np.uint64)
    cdef cnp.uint64_t[::1] o = out
    cdef const unsigned char[:] kb
    cdef uint64_t acc, limb
    cdef bytes key
    for i in range(n):
        key = keys[i]
        L = len(key)
        acc = (<uint64_t>L) % P61
        if L:
            kb = key
            j = 0
            while j < L:
                limb = 0
                t = min(7, L - j) - 1
                while t >= 0:
                    limb = (limb << 8) | kb[j + t]
                    t -= 1
                acc = emh_mulmod61(acc, point) + limb
                if acc >= P61:
                    acc -= P61
                j += 7
        o[i] = acc
    return out
