"""Sorted fingerprint runs laid out in uniform buckets.

Layout of a run extent (version 1)::

    block 0        header: b"BRUN", version, n_entries, Q, F
    blocks 1..     occupancy: Q little-endian u32 counts, block padded
    then           Q slots of F entry positions each

Entries are 24 bytes (fingerprint, handle, meta) and never straddle a
block: a block holds ``B // 24`` positions and the tail is padding.  Bucket
``b`` holds exactly the fingerprints in ``[b * 2**64 / Q, (b+1) * 2**64 / Q)``,
sorted, followed by empty positions (``meta == EMPTY``).  Because buckets
are fixed-size, the address of a bucket is computed, not searched.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import mergeio
from .store import Store
from .trace import Trace, spans

ENTRY = np.dtype([("fp", "<u8"), ("handle", "<u8"), ("meta", "<u8")])
ENTRY_BYTES = ENTRY.itemsize
EMPTY = np.uint64(0xFFFFFFFFFFFFFFFF)
PREV_MASK = np.uint64(0xFFFF)
SKEW_THRESHOLD = 8
LAYOUT_VERSION = 1
_HEAD = struct.Struct("<4sIQQQ")

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


class SkewError(ValueError):
    """A bucket is far fuller than uniform fingerprints allow."""


def bucket_of(fp, Q: int):
    """``floor(fp * Q / 2**64)`` without 128-bit arithmetic."""
    if isinstance(fp, np.ndarray):
        q = np.uint64(Q)
        hi = fp >> _S32
        lo = fp & _M32
        return ((hi * q + ((lo * q) >> _S32)) >> _S32).astype(np.int64)
    return (int(fp) * Q) >> 64


def make_entries(fps, handles, meta=None) -> np.ndarray:
    out = np.empty(len(fps), dtype=ENTRY)
    out["fp"] = fps
    out["handle"] = handles
    out["meta"] = 0 if meta is None else meta
    return out


@dataclass
class BucketedRun:
    store: Store
    extent: int
    n_entries: int
    Q: int
    F: int
    per_block: int      # entry positions per block
    slots_block: int    # first block of the slot region
    _image: tuple | None = field(default=None, repr=False)

    @property
    def slot_positions(self) -> int:
        return self.Q * self.F

    def space_bytes(self) -> int:
        return self.store.extent_bytes(self.extent)

    def _pos_byte(self, pos):
        E = self.per_block
        return (self.slots_block + pos // E) * self.store.B + (pos % E) * ENTRY_BYTES

    def _load(self, lo_pos: int, hi_pos: int) -> np.ndarray:
        """Uncharged decode of positions ``[lo_pos, hi_pos)``."""
        E = self.per_block
        raw = self.store.peek(self.extent)
        B = self.store.B
        out = []
        p = lo_pos
        while p < hi_pos:
            blk = p // E
            q = min(hi_pos, (blk + 1) * E)
            start = (self.slots_block + blk) * B + (p - blk * E) * ENTRY_BYTES
            out.append(raw[start: start + (q - p) * ENTRY_BYTES])
            p = q
        if not out:
            return np.zeros(0, dtype=ENTRY)
        return np.concatenate(out).view(ENTRY)

    def entries(self) -> np.ndarray:
        """All stored entries in order (uncharged; for tests and audits)."""
        raw = self._load(0, self.slot_positions)
        return raw[raw["meta"] != EMPTY]

    def _dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Uncharged in-memory image: entries, their fps, bucket starts."""
        if self._image is None:
            ent = self.entries()
            counts = bucket_of(ent["fp"], self.Q) if len(ent) else np.zeros(0, np.int64)
            counts = np.bincount(counts, minlength=self.Q)
            starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            self._image = (ent, ent["fp"].copy(), starts)
        return self._image

    def _pieces(self, lo: np.ndarray, hi: np.ndarray):
        """Split inclusive ranges at bucket boundaries: (owner, lo, hi, bucket)."""
        Q = self.Q
        bl = bucket_of(lo, Q)
        bh = bucket_of(hi, Q)
        owner = np.arange(len(lo), dtype=np.int64)
        split = np.flatnonzero(bh > bl)
        if len(split) == 0:
            return owner, lo, hi, bl
        extra = []
        for i in split.tolist():
            for bk in range(int(bl[i]), int(bh[i]) + 1):
                start = -((-bk << 64) // Q)
                end = -((-(bk + 1) << 64) // Q) - 1
                extra.append((i, max(int(lo[i]), start), min(int(hi[i]), end), bk))
        keep = bh == bl
        ex = np.array(extra, dtype=object)
        owner = np.concatenate([owner[keep], ex[:, 0].astype(np.int64)])
        plo = np.concatenate([lo[keep], ex[:, 1].astype(np.uint64)])
        phi = np.concatenate([hi[keep], ex[:, 2].astype(np.uint64)])
        pb = np.concatenate([bl[keep], ex[:, 3].astype(np.int64)])
        order = np.lexsort((pb, owner))
        return owner[order], plo[order], phi[order], pb[order]

    def plan_ranges(self, lo, hi):
        """Vectorized range lookups ``lo <= fp <= hi`` without charging.

        Returns ``(q, entries, blk_q, blocks)``: matching entries with the
        index of the range they answer (range-major, stored order), and the
        extent blocks each range reads, in the order a lone lookup reads
        them.  Per bucket the read pattern is: the block holding the
        interpolated position of ``lo`` within the bucket, then whole blocks
        leftwards until the window starts below the first match, then
        rightwards until it covers the first position past the matches.
        """
        lo = np.asarray(lo, dtype=np.uint64)
        hi = np.asarray(hi, dtype=np.uint64)
        empty = (np.zeros(0, np.int64), np.zeros(0, ENTRY), np.zeros(0, np.int64),
                 np.zeros(0, np.int64))
        if self.n_entries == 0 or len(lo) == 0:
            return empty
        ent, dfp, starts = self._dense()
        owner, lo, hi, b = self._pieces(lo, hi)
        Q, F, E = self.Q, self.F, self.per_block
        s0 = b * F
        s1 = s0 + F
        frac = (lo * np.uint64(Q)).astype(np.float64) / 18446744073709551616.0
        est = np.minimum(s1 - 1, s0 + (frac * (self.n_entries / Q)).astype(np.int64))
        eb = est // E
        lo_i = np.searchsorted(dfp, lo, side="left")
        hi_i = np.maximum(lo_i, np.searchsorted(dfp, hi, side="right"))
        a = s0 + (lo_i - starts[b])
        z = s0 + (hi_i - starts[b])
        lb = np.minimum(eb, np.maximum(s0, a - 1) // E)
        rb = np.maximum(eb, np.minimum(z, s1 - 1) // E)
        # per piece: eb, eb-1 .. lb, eb+1 .. rb
        n_left = eb - lb
        total = 1 + n_left + (rb - eb)
        blk_q = np.repeat(owner, total)
        first = np.cumsum(total) - total
        k = np.arange(int(total.sum()), dtype=np.int64) - np.repeat(first, total)
        nl = np.repeat(n_left, total)
        base = np.repeat(eb, total)
        blocks = np.where(k <= nl, base - k, base + (k - nl)) + self.slots_block
        mq = np.repeat(owner, hi_i - lo_i)
        _, idx = spans(lo_i, hi_i - 1)
        return mq, ent[idx], blk_q, blocks

    def plan_many(self, fps):
        return self.plan_ranges(fps, fps)

    def lookup_traced(self, f: int, trace: Trace, q: int) -> np.ndarray:
        _, found, _, blocks = self.plan_many(np.array([f], dtype=np.uint64))
        trace.add(q, self.extent, blocks)
        return found

    def lookup(self, f: int) -> np.ndarray:
        return self.lookup_range(int(f), int(f) + 1)

    def lookup_prefix(self, p: int, nbits: int) -> np.ndarray:
        shift = 64 - nbits
        return self.lookup_range(int(p) << shift, (int(p) + 1) << shift)

    def lookup_range(self, lo: int, hi: int) -> np.ndarray:
        """Entries with ``lo <= fp < hi`` in fingerprint order."""
        if hi <= lo:
            return np.zeros(0, dtype=ENTRY)
        _, found, _, blocks = self.plan_ranges(np.array([lo], dtype=np.uint64),
                                               np.array([hi - 1], dtype=np.uint64))
        self.store.touch_blocks(self.extent, blocks)
        return found


def _layout(store: Store, n: int) -> tuple[int, int, int]:
    per_block = store.B // ENTRY_BYTES
    Q = max(1, -(-(n * ENTRY_BYTES) // store.B))
    occ_blocks = -(-(Q * 4) // store.B)
    return per_block, Q, 1 + occ_blocks


def build(store: Store, entries: np.ndarray, staged: int | None = None,
          skew_threshold: int = SKEW_THRESHOLD) -> BucketedRun:
    """Write sorted ``entries`` as a bucketed run.

    ``staged`` names a temporary extent already holding the entries densely
    (pass one of the build, written by :func:`merge`); it is scanned
    sequentially, then freed.  Without it the input is memory resident.
    """
    n = len(entries)
    per_block, Q, slots_block = _layout(store, n)
    if n:
        fps = entries["fp"]
        if np.any(fps[1:] < fps[:-1]):
            raise ValueError("entries must be sorted by fingerprint")
        buckets = bucket_of(fps, Q)
        counts = np.bincount(buckets, minlength=Q)
        F = int(counts.max())
        limit = skew_threshold * -(-store.B // ENTRY_BYTES)
        if F > limit:
            raise SkewError(f"fullest bucket holds {F} entries, threshold is {limit}")
    else:
        buckets = np.zeros(0, dtype=np.int64)
        counts = np.zeros(Q, dtype=np.int64)
        F = 0
    n_pos = Q * F
    slot_blocks = -(-n_pos // per_block) if n_pos else 0
    ext = store.alloc(slots_block + max(slot_blocks, 0))
    run = BucketedRun(store, ext, n, Q, F, per_block, slots_block)
    B = store.B

    if staged is not None:
        store.touch(staged, 0, n * ENTRY_BYTES)
        store.free(staged)

    header = _HEAD.pack(b"BRUN", LAYOUT_VERSION, n, Q, F)
    occ = counts.astype("<u4").tobytes()
    meta_bytes = np.zeros(slots_block * B, dtype=np.uint8)
    meta_bytes[: len(header)] = np.frombuffer(header, dtype=np.uint8)
    meta_bytes[B: B + len(occ)] = np.frombuffer(occ, dtype=np.uint8)
    store.write_bytes(ext, 0, meta_bytes)

    if n_pos:
        slots = np.zeros(n_pos, dtype=ENTRY)
        slots["meta"] = EMPTY
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        rank = np.arange(n) - starts[buckets]
        slots[buckets * F + rank] = entries
        body = np.zeros(slot_blocks * B, dtype=np.uint8)
        view = body.reshape(slot_blocks, B)[:, : per_block * ENTRY_BYTES]
        padded = np.zeros(slot_blocks * per_block, dtype=ENTRY)
        padded["meta"] = EMPTY
        padded[:n_pos] = slots
        view[:] = padded.view(np.uint8).reshape(slot_blocks, per_block * ENTRY_BYTES)
        store.write_bytes(ext, slots_block * B, body)
    return run


def read_header(store: Store, extent: int) -> tuple[int, int, int]:
    """Decode ``(n_entries, Q, F)`` from a run's header block (charged)."""
    raw = store.read_bytes(extent, 0, _HEAD.size).tobytes()
    magic, version, n, Q, F = _HEAD.unpack(raw)
    if magic != b"BRUN" or version != LAYOUT_VERSION:
        raise ValueError("not a version-1 bucketed run")
    return n, Q, F


def _run_source(run: BucketedRun, out_times: np.ndarray) -> mergeio.Source:
    """Describe a stored run as a merge input, item ends in byte offsets."""
    raw = run._load(0, run.slot_positions)
    pos = np.flatnonzero(raw["meta"] != EMPTY)
    ends = run._pos_byte(pos) + ENTRY_BYTES
    n_blocks = run.store.extent_blocks(run.extent)
    src = mergeio.Source(run.extent, ends.astype(np.int64), out_times, n_blocks)
    return src


@dataclass
class MergeResult:
    entries: np.ndarray
    staged: int | None  # dense extent holding ``entries``, or None
    passes: int


@dataclass
class _Input:
    data: np.ndarray
    age: np.ndarray                  # per-entry input index; larger is newer
    source: object                   # out_times -> mergeio.Source
    temp: int | None = None          # extent to free once consumed


def _sorted_order(fp: np.ndarray, age: np.ndarray) -> np.ndarray:
    # ties on fingerprint: newer first, then input position (stable)
    return np.lexsort((-age, fp))


def _merge_pass(store: Store, group: list[_Input], write_out: bool) -> _Input:
    data = np.concatenate([g.data for g in group])
    age = np.concatenate([g.age for g in group])
    order = _sorted_order(data["fp"], age)
    inv = np.empty(len(order), dtype=np.int64)
    inv[order] = np.arange(len(order))
    sources, off = [], 0
    for g in group:
        sources.append(g.source(inv[off: off + len(g.data)]))
        off += len(g.data)
    merged, merged_age = data[order], age[order]
    ext = None
    ends = mergeio.dense_ends(len(merged), ENTRY_BYTES)
    if write_out and len(merged):
        ext = store.alloc_bytes(len(merged) * ENTRY_BYTES)
        store.peek(ext)[: len(merged) * ENTRY_BYTES] = merged.view(np.uint8)
    mergeio.replay(store, sources, len(merged), ext, ends if ext is not None else None)
    for g in group:
        if g.temp is not None:
            store.free(g.temp)
    nb = store.extent_blocks(ext) if ext is not None else 0
    return _Input(merged, merged_age,
                  lambda t, e=ext, en=ends, n=nb: mergeio.Source(e, en, t, n), ext)


def merge(store: Store, runs: list[BucketedRun], fan_in: int | None = None,
          stage_output: bool = True) -> MergeResult:
    """Merge runs (oldest first) into one sorted stream.

    Ties on fingerprint put entries of later (newer) runs first.  With more
    inputs than ``fan_in`` (default ``frames - 1``) the merge runs in passes
    through dense temporary extents.  The final pass writes the stream
    densely to a staging extent that :func:`build` consumes, unless
    ``stage_output`` is false.
    """
    if fan_in is None:
        fan_in = max(2, store.frames - 1)
    if fan_in < 2:
        raise ValueError("merge fan-in must be at least 2")
    live = [
        _Input(r.entries(), np.full(r.n_entries, a, dtype=np.int64),
               lambda t, r=r: _run_source(r, t))
        for a, r in enumerate(runs)
    ]
    if not live:
        return MergeResult(np.zeros(0, dtype=ENTRY), None, 0)
    passes = 0
    while True:
        passes += 1
        if len(live) <= fan_in:
            out = _merge_pass(store, live, stage_output)
            return MergeResult(out.data, out.temp, passes)
        live = [_merge_pass(store, live[i: i + fan_in], True)
                for i in range(0, len(live), fan_in)]
