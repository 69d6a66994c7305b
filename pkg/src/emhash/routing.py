"""Refined routing filters and routing-tree nodes.

List layout (version 1), a stream of ``c``-bit characters packed MSB first.
Each entry is::

    varint(delta)  child  check  next

where the varint stores ``c - 1`` payload bits per character, least
significant group first, and uses the top bit of each character as the
continuation flag.  Entries are sorted by (prefix, log order).  The prefix
space is cut into pivot buckets by its top ``pivot_bits`` bits; the first
entry of each bucket stores its prefix relative to the bucket's base (so
decoding can start at any bucket), later entries store the gap to the
previous prefix.

Pivot table: ``2**pivot_bits + 1`` little-endian u32 bit offsets into the
list; entry ``b`` is the offset of the first entry whose pivot is ``>= b``
(so empty buckets point at the next non-empty one) and the last entry is
the list length.
"""
from __future__ import annotations

import numpy as np

from .kernels import decode_entries, encode_entries
from .store import Store

SKETCH_CHARS = 3  # child, check, next
CHILD, CHECK, NEXT = 0, 1, 2
TABLE_DTYPE = np.dtype("<u4")


class StructureError(RuntimeError):
    """A routing structure is internally inconsistent."""


def delta_encode(prefixes, sketches, c: int, shift: int = 64):
    """Encode sorted prefixes and their sketch rows.

    ``shift`` is the number of low prefix bits below the pivot; deltas restart
    at every pivot boundary.  Returns ``(buf, offsets)`` with bit offsets.
    """
    p = np.asarray(prefixes, dtype=np.uint64)
    if len(p) and np.any(p[1:] < p[:-1]):
        raise ValueError("prefixes must be sorted")
    deltas = _deltas(p, shift)
    sk = np.asarray(sketches, dtype=np.uint64)
    sk = sk.reshape(len(p), -1) if len(p) else sk.reshape(0, sk.shape[-1] if sk.ndim == 2 else 0)
    return encode_entries(deltas, sk, c)


def _pivots(p: np.ndarray, shift: int) -> np.ndarray:
    if shift >= 64:
        return np.zeros(len(p), dtype=np.uint64)
    return p >> np.uint64(shift)


def _deltas(p: np.ndarray, shift: int) -> np.ndarray:
    if len(p) == 0:
        return p.copy()
    piv = _pivots(p, shift)
    deltas = np.empty_like(p)
    deltas[1:] = p[1:] - p[:-1]
    first = np.r_[True, piv[1:] != piv[:-1]]
    base = piv << np.uint64(shift) if shift < 64 else np.zeros_like(p)
    deltas[first] = p[first] - base[first]
    return deltas


def delta_decode(buf, bit_start: int, bit_end: int, c: int, k: int = SKETCH_CHARS,
                 base: int = 0):
    """Decode entries of one pivot bucket (or a whole list with one bucket).

    Returns ``(prefixes, sketches, offsets)``.
    """
    deltas, sk, offs = decode_entries(buf, bit_start, bit_end, c, k)
    return np.uint64(base) + np.cumsum(deltas, dtype=np.uint64), sk, offs


def varint_chars(deltas, c: int) -> np.ndarray:
    """Characters used by each delta's varint."""
    d = np.asarray(deltas, dtype=np.uint64)
    nbits = np.zeros(len(d), dtype=np.int64)
    x = d.copy()
    while np.any(x):
        nz = x != 0
        nbits[nz] += 1
        x >>= np.uint64(1)
    return np.maximum(1, -(-nbits // (c - 1)))


class RefinedRoutingFilter:
    """Prefix-indexed list of sketches for one routing node.

    ``p_bits``: prefix length in bits; ``pivot_bits``: pivot prefix length.
    The filter is immutable between batch inserts; an uncharged decoded
    image is kept for lookups, mirroring the stored bytes exactly.
    """

    def __init__(self, store: Store, p_bits: int, pivot_bits: int, c: int,
                 adaptive_lam: int | None = None):
        if not 0 <= pivot_bits <= p_bits <= 64:
            raise ValueError(f"bad prefix/pivot lengths {p_bits}/{pivot_bits}")
        self.store = store
        self.p_bits = p_bits
        self.max_pivot_bits = pivot_bits
        self.drop_bits = p_bits - pivot_bits
        self.adaptive_lam = adaptive_lam
        self.c = c
        self.table_ext: int | None = None
        self.list_ext: int | None = None
        self.n = 0
        self.list_bits = 0
        self.frozen = False
        self._set_pivot(pivot_bits if adaptive_lam is None else 0)
        self._prefixes = np.zeros(0, dtype=np.uint64)
        self._sketches = np.zeros((0, SKETCH_CHARS), dtype=np.uint16)
        self._offsets = np.zeros(1, dtype=np.uint64)

    def _set_pivot(self, bits: int) -> None:
        if bits > 30:
            raise ValueError(f"pivot table of 2^{bits} entries is too large")
        self.pivot_bits = bits
        self.shift = self.p_bits - bits

    def _pivot_for(self, n: int) -> int:
        """Pivot length for ``n`` entries: the full-length rule applied to the
        current count instead of the node's capacity."""
        if self.adaptive_lam is None:
            return self.max_pivot_bits
        need = max(1, self.adaptive_lam * n - 1).bit_length()
        return max(0, min(self.max_pivot_bits, need - self.drop_bits))

    @property
    def table_entries(self) -> int:
        return (1 << self.pivot_bits) + 1

    @property
    def table_bytes(self) -> int:
        return self.table_entries * TABLE_DTYPE.itemsize

    def table(self) -> np.ndarray:
        """The stored pivot table (uncharged view)."""
        if self.table_ext is None:
            return np.zeros(self.table_entries, dtype=TABLE_DTYPE)
        return self.store.peek(self.table_ext)[: self.table_bytes].view(TABLE_DTYPE)

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        if self.frozen:
            return self.decode_stored()
        return self._prefixes, self._sketches

    def space_bits(self) -> tuple[int, int]:
        """(list bits, pivot table bits)."""
        return self.list_bits, self.table_bytes * 8

    def prefix_chars(self) -> np.ndarray:
        """Characters each entry spends on its (delta-encoded) prefix."""
        if self.frozen:
            _, _, offs = decode_entries(self.store.peek(self.list_ext), 0, self.list_bits,
                                        self.c, SKETCH_CHARS)
        else:
            offs = self._offsets
        widths = np.diff(np.asarray(offs, dtype=np.int64)) // self.c
        return widths - SKETCH_CHARS

    def freeze(self) -> None:
        """Drop the in-memory image; later lookups decode from the store."""
        self.frozen = True
        self._prefixes = self._sketches = self._offsets = None

    # -- updates ------------------------------------------------------------

    def insert_batch(self, prefixes, sketches) -> None:
        """Merge a (prefix, log order)-sorted batch after existing equal prefixes.

        Charged as one sequential read of the old table and list and one
        sequential write of the new ones.
        """
        if self.frozen:
            raise StructureError("filter is frozen")
        p = np.asarray(prefixes, dtype=np.uint64)
        sk = np.asarray(sketches, dtype=np.uint16).reshape(len(p), SKETCH_CHARS)
        if len(p) and np.any(p[1:] < p[:-1]):
            raise ValueError("batch must be sorted by prefix")
        if len(p) and self.p_bits < 64 and int(p.max()) >> self.p_bits:
            raise ValueError(f"prefix wider than {self.p_bits} bits")
        if np.any(sk >= 1 << self.c):
            raise ValueError("sketch character out of range")
        store = self.store
        if self.table_ext is not None:
            store.touch(self.table_ext, 0, self.table_bytes)
            store.touch(self.list_ext, 0, -(-self.list_bits // 8))
        self._set_pivot(self._pivot_for(self.n + len(p)))
        allp = np.concatenate([self._prefixes, p])
        allsk = np.concatenate([self._sketches, sk])
        order = np.argsort(allp, kind="stable")
        allp, allsk = allp[order], allsk[order]
        buf, offs = encode_entries(_deltas(allp, self.shift), allsk, self.c)
        total = int(offs[-1])
        if total >= 1 << 32:
            raise StructureError("routing list exceeds 2^32 bits")
        piv = _pivots(allp, self.shift)
        first = np.searchsorted(piv, np.arange(self.table_entries, dtype=np.uint64), side="left")
        tab = offs[first].astype(TABLE_DTYPE)
        if self.table_ext is not None:
            store.free(self.table_ext)
            store.free(self.list_ext)
        self.table_ext = store.alloc_bytes(self.table_bytes)
        self.list_ext = store.alloc_bytes(max(1, len(buf)))
        store.write_bytes(self.table_ext, 0, _padded(tab.view(np.uint8), store.B))
        store.write_bytes(self.list_ext, 0, _padded(buf, store.B))
        self.n = len(allp)
        self.list_bits = total
        self._prefixes, self._sketches, self._offsets = allp, allsk, offs

    # -- lookups --------------------------------------------------------------

    def plan_many(self, prefixes):
        """Vectorized lookups of full prefixes without charging.

        Returns ``(q, rows, blk_q, ext, blocks)``: indices of matching list
        entries grouped by query in log order, and the block reads each
        lookup makes in order (two pivot-table words, then the bucket's list
        bits; an empty bucket reads no list).
        """
        p = np.asarray(prefixes, dtype=np.uint64)
        nq = len(p)
        z = np.zeros(0, dtype=np.int64)
        if self.frozen:
            raise StructureError("batched lookups need the in-memory image")
        if self.table_ext is None or nq == 0:
            return z, z, z, z, z
        B = self.store.B
        piv = _pivots(p, self.shift).astype(np.int64)
        tab = self.table()
        o0 = tab[piv].astype(np.int64)
        o1 = tab[piv + 1].astype(np.int64)
        t0 = piv * 4 // B
        t1 = (piv * 4 + 7) // B
        n_t = 1 + (t1 != t0)
        has = o1 > o0
        l0 = np.where(has, o0 // 8 // B, 0)
        l1 = np.where(has, (o1 - 1) // 8 // B, -1)
        n_l = np.where(has, l1 - l0 + 1, 0)
        total = n_t + n_l
        blk_q = np.repeat(np.arange(nq, dtype=np.int64), total)
        first = np.cumsum(total) - total
        k = np.arange(int(total.sum()), dtype=np.int64) - np.repeat(first, total)
        rt = np.repeat(n_t, total)
        is_tab = k < rt
        blocks = np.where(is_tab, np.repeat(t0, total) + k, np.repeat(l0, total) + (k - rt))
        ext = np.where(is_tab, self.table_ext, self.list_ext)
        a = np.searchsorted(self._prefixes, p, side="left")
        b = np.searchsorted(self._prefixes, p, side="right")
        cnt = b - a
        q = np.repeat(np.arange(nq, dtype=np.int64), cnt)
        starts = np.cumsum(cnt) - cnt
        rows = np.arange(int(cnt.sum()), dtype=np.int64) - np.repeat(starts, cnt) + np.repeat(a, cnt)
        return q, rows, blk_q, ext, blocks

    def probe_rows(self, prefix: int) -> tuple[list, list[tuple[int, int]]]:
        """Decode one prefix's entries from the stored bytes (uncharged).

        Returns the (child, check, next) rows in log order and the
        ``(extent, block)`` reads the lookup makes: two pivot words, then the
        bucket's list bits.
        """
        if self.table_ext is None:
            return [], []
        B = self.store.B
        prefix = int(prefix)
        piv = prefix >> self.shift if self.shift < 64 else 0
        tab = self.table()
        o0, o1 = int(tab[piv]), int(tab[piv + 1])
        t0, t1 = piv * 4 // B, (piv * 4 + 7) // B
        reads = [(self.table_ext, t0)] if t0 == t1 else [(self.table_ext, t0), (self.table_ext, t1)]
        if o1 <= o0:
            return [], reads
        reads.extend((self.list_ext, b) for b in range(o0 // 8 // B, (o1 - 1) // 8 // B + 1))
        deltas, sk, _ = decode_entries(self.store.peek(self.list_ext), o0, o1, self.c, SKETCH_CHARS)
        p = piv << self.shift if self.shift < 64 else 0
        out = []
        for d, row in zip(deltas.tolist(), sk.tolist()):
            p += d
            if p == prefix:
                out.append(row)
            elif p > prefix:
                break
        return out, reads

    def probe(self, prefix: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """Like :meth:`probe_rows` with the rows as an ``(n, 3)`` array."""
        rows, reads = self.probe_rows(prefix)
        return np.array(rows, dtype=np.uint64).reshape(-1, SKETCH_CHARS), reads

    def lookup(self, prefix: int) -> np.ndarray:
        """Sketch rows (child, check, next) of entries with this prefix, in log order."""
        rows, reads = self.probe(prefix)
        for e, b in reads:
            self.store.touch_blocks(e, [b])
        return rows

    def decode_stored(self) -> tuple[np.ndarray, np.ndarray]:
        """Decode the stored list through the pivot table (uncharged); used to audit."""
        if self.list_ext is None:
            return self._prefixes.copy(), self._sketches.copy()
        tab = self.table().astype(np.int64)
        raw = self.store.peek(self.list_ext)
        deltas, sk, offs = decode_entries(raw, 0, self.list_bits, self.c, SKETCH_CHARS)
        starts = offs[:-1].astype(np.int64)
        piv = np.searchsorted(tab, starts, side="right") - 1
        first = np.r_[True, piv[1:] != piv[:-1]] if len(piv) else np.zeros(0, bool)
        grp = np.cumsum(first) - 1
        csum = np.cumsum(deltas, dtype=np.uint64)
        gstart = np.flatnonzero(first)
        before = np.where(gstart > 0, csum[np.maximum(gstart - 1, 0)], np.uint64(0))
        base = piv.astype(np.uint64) << np.uint64(self.shift) if self.shift < 64 else np.zeros(len(piv), np.uint64)
        prefixes = base + (csum - before[grp])
        return prefixes, sk


def _padded(buf: np.ndarray, B: int) -> np.ndarray:
    n = len(buf)
    full = max(B, -(-n // B) * B)
    if full == n:
        return buf
    out = np.zeros(full, dtype=np.uint8)
    out[:n] = buf
    return out


class RoutingNode:
    """A node of a routing tree; height-1 children are log block numbers."""

    __slots__ = ("height", "filter", "children")

    def __init__(self, height: int, filt: RefinedRoutingFilter):
        self.height = height
        self.filter = filt
        self.children: list = []

    @property
    def degree(self) -> int:
        return len(self.children)

    def walk(self):
        yield self
        if self.height > 1:
            for ch in self.children:
                yield from ch.walk()
