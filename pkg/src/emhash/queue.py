"""Character queues: the ruler schedule, run storage and series merges.

A run holds entries sorted by (prefix, log order).  Each entry is encoded
with the routing-list codec: a varint prefix delta (the first entry stores
its full prefix) followed by ``2 * ncols`` characters, ``next_h`` then
``check_h`` for each batched height ``h``.  Runs of one series are appended
back to back in an :class:`Arena`, a chain of fixed-size chunk extents.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mergeio
from .funnel import FunnelInput, FunnelStats, partial_funnelsort
from .kernels import decode_entries, encode_entries
from .store import Store

CHUNK_BLOCKS = 64


def ruler(n: int) -> int:
    """Exponent of the largest power of two dividing ``n``."""
    if n < 1:
        raise ValueError("ruler is defined for positive integers")
    return (n & -n).bit_length() - 1


def series_starts(i: int, limit: int) -> list[int]:
    """Distinct series indices of level ``i``'s queue up to ``limit``: for each
    q the smallest multiple of ``2**q`` greater than ``i``."""
    out = []
    q = 0
    while True:
        j = (i // (1 << q) + 1) << q
        if j > limit:
            break
        if not out or out[-1] != j:
            out.append(j)
        q += 1
    return out


def series_columns(j: int, h_top: int) -> range:
    """Heights batched by series ``j``: ``2**ruler(j)`` of them, clipped at ``h_top``."""
    return range(j, min(j + (1 << ruler(j)), h_top + 1))


class Arena:
    """Append-only byte space over chunk extents with per-chunk reference counts."""

    def __init__(self, store: Store, chunk_blocks: int = CHUNK_BLOCKS):
        self.store = store
        self.B = store.B
        self.chunk_blocks = chunk_blocks
        self.chunk_bytes = chunk_blocks * self.B
        self.chunks: dict[int, int] = {}  # chunk number -> extent
        self.refs: dict[int, int] = {}
        self.tail = 0

    def _chunk_range(self, lo: int, hi: int) -> range:
        return range(lo // self.chunk_bytes, (hi - 1) // self.chunk_bytes + 1)

    def append(self, data: np.ndarray) -> tuple[int, int]:
        """Write ``data`` at the tail; returns its byte range ``[lo, hi)``."""
        lo = self.tail
        hi = lo + max(1, len(data))
        data = np.ascontiguousarray(data, dtype=np.uint8)
        for ch in self._chunk_range(lo, hi):
            if ch not in self.chunks:
                self.chunks[ch] = self.store.alloc(self.chunk_blocks)
                self.refs[ch] = 0
            self.refs[ch] += 1
            a = max(lo, ch * self.chunk_bytes)
            b = min(hi, (ch + 1) * self.chunk_bytes)
            piece = data[a - lo: b - lo]
            if len(piece) < b - a:
                piece = np.zeros(b - a, dtype=np.uint8)
            self.store.write_bytes(self.chunks[ch], a - ch * self.chunk_bytes, piece)
        self.tail = hi
        return lo, hi

    def release(self, lo: int, hi: int) -> None:
        tail_chunk = self.tail // self.chunk_bytes
        for ch in self._chunk_range(lo, hi):
            self.refs[ch] -= 1
            if self.refs[ch] == 0 and ch != tail_chunk:
                self.store.free(self.chunks.pop(ch))
                del self.refs[ch]
        for ch in [ch for ch, r in self.refs.items() if r == 0 and ch != tail_chunk]:
            self.store.free(self.chunks.pop(ch))
            del self.refs[ch]

    def peek(self, lo: int, hi: int) -> np.ndarray:
        parts = []
        for ch in self._chunk_range(lo, hi):
            a = max(lo, ch * self.chunk_bytes) - ch * self.chunk_bytes
            b = min(hi, (ch + 1) * self.chunk_bytes) - ch * self.chunk_bytes
            parts.append(self.store.peek(self.chunks[ch])[a:b])
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def touch(self, off: int, nbytes: int, write: bool = False) -> None:
        if nbytes <= 0:
            return
        for ch in self._chunk_range(off, off + nbytes):
            a = max(off, ch * self.chunk_bytes)
            b = min(off + nbytes, (ch + 1) * self.chunk_bytes)
            self.store.touch(self.chunks[ch], a - ch * self.chunk_bytes, b - a, write)

    def block_map(self, b0: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(extent, block) of arena blocks ``b0 .. b0 + n - 1``."""
        ab = b0 + np.arange(n, dtype=np.int64)
        ch = ab // self.chunk_blocks
        ext = np.array([self.chunks[int(c)] for c in ch.tolist()], dtype=np.int64)
        return ext, ab % self.chunk_blocks

    def space_bytes(self) -> int:
        return len(self.chunks) * self.chunk_bytes


@dataclass
class QRun:
    arena: Arena
    lo: int          # byte range in the arena
    hi: int
    n: int
    nbits: int
    ncols: int

    def decode(self, c: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(prefixes, columns (n, 2*ncols), item byte ends in arena space)."""
        if self.n == 0:
            z = np.zeros(0, dtype=np.uint64)
            return z, np.zeros((0, 2 * self.ncols), dtype=np.uint16), np.zeros(0, np.int64)
        buf = self.arena.peek(self.lo, self.hi)
        deltas, sk, offs = decode_entries(buf, 0, self.nbits, c, 2 * self.ncols)
        pre = np.cumsum(np.asarray(deltas, dtype=np.uint64), dtype=np.uint64)
        ends = self.lo + (-(-np.asarray(offs[1:], dtype=np.int64) // 8))
        sk = np.asarray(sk, dtype=np.uint16).reshape(self.n, 2 * self.ncols)
        return pre, sk, ends

    def release(self) -> None:
        self.arena.release(self.lo, self.hi)

    def source(self, out_times: np.ndarray, ends: np.ndarray) -> mergeio.Source:
        B = self.arena.B
        b0 = self.lo // B
        nb = (self.hi - 1) // B - b0 + 1
        return mergeio.Source(-1, ends, out_times, nb, b0, self.arena.block_map(b0, nb))


def encode_run(prefixes: np.ndarray, cols: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns the encoded bytes and the entries' bit offsets (plus the total)."""
    p = np.asarray(prefixes, dtype=np.uint64)
    deltas = np.empty_like(p)
    if len(p):
        deltas[0] = p[0]
        deltas[1:] = p[1:] - p[:-1]
    cols = np.asarray(cols, dtype=np.uint64)
    cols = cols.reshape(len(p), -1) if len(p) else cols.reshape(0, cols.shape[-1] if cols.ndim == 2 else 0)
    buf, offs = encode_entries(deltas, cols, c)
    return np.asarray(buf, dtype=np.uint8), np.asarray(offs, dtype=np.int64)


def write_run(arena: Arena, prefixes: np.ndarray, cols: np.ndarray, c: int) -> QRun:
    """Encode a (prefix, log order)-sorted batch and append it to ``arena``."""
    buf, offs = encode_run(prefixes, cols, c)
    nbits = int(offs[-1])
    lo, hi = arena.append(buf)
    return QRun(arena, lo, hi, len(prefixes), nbits, cols.shape[1] // 2)


def _stable_merge(parts: list[tuple[np.ndarray, np.ndarray]]):
    pre = np.concatenate([p for p, _ in parts])
    cols = np.concatenate([s for _, s in parts])
    order = np.argsort(pre, kind="stable")
    return order, pre[order], cols[order]


def merge_series(store: Store, runs: list[QRun], c: int, fan_in: int | None = None,
                 funnel: bool = False, stats: FunnelStats | None = None):
    """Merge a series' runs (oldest first) into one (prefix, log order) stream.

    Bounded fan-in merges take passes of at most ``fan_in`` runs (default
    one frame per input plus one output frame); intermediate runs go to a
    scratch arena.  The funnel variant charges a partial funnelsort.
    Returns ``(prefixes, columns, passes)``; the final output is streamed.
    """
    if not runs:
        raise ValueError("no runs to merge")
    decoded = [r.decode(c) for r in runs]
    if funnel:
        return _merge_funnel(store, runs, decoded, c, stats)
    fan_in = fan_in or max(2, store.frames - 1)
    scratch = Arena(store)
    level = list(zip(runs, decoded))
    passes = 0
    while True:
        passes += 1
        final = len(level) <= fan_in
        nxt = []
        for g0 in range(0, len(level), fan_in):
            grp = level[g0: g0 + fan_in]
            order, pre, cols = _stable_merge([(d[0], d[1]) for _, d in grp])
            out_time = np.empty(len(order), dtype=np.int64)
            out_time[order] = np.arange(len(order), dtype=np.int64)
            sources, base = [], 0
            for run, d in grp:
                sources.append(run.source(out_time[base: base + run.n], d[2]))
                base += run.n
            if final:
                mergeio.replay(store, sources, len(order))
                _release_scratch(level, scratch)
                return pre, cols, passes
            buf, offs = encode_run(pre, cols, c)
            lo, hi = _scratch_write(scratch, buf)
            ends = lo + (-(-offs[1:] // 8))
            _replay_with_output(store, scratch, sources, len(order), lo, ends)
            nxt.append((QRun(scratch, lo, hi, len(pre), int(offs[-1]), cols.shape[1] // 2),
                        (pre, cols, ends)))
        _release_scratch(level, scratch)
        level = nxt


def _release_scratch(level, scratch: Arena) -> None:
    for r, _ in level:
        if r.arena is scratch:
            r.release()


def _scratch_write(arena: Arena, buf: np.ndarray) -> tuple[int, int]:
    """Place ``buf`` at the arena tail without charging (the pass replay charges it)."""
    lo = arena.tail
    hi = lo + max(1, len(buf))
    for ch in arena._chunk_range(lo, hi):
        if ch not in arena.chunks:
            arena.chunks[ch] = arena.store.alloc(arena.chunk_blocks)
            arena.refs[ch] = 0
        arena.refs[ch] += 1
        a = max(lo, ch * arena.chunk_bytes)
        b = min(hi, (ch + 1) * arena.chunk_bytes)
        dst = arena.store.peek(arena.chunks[ch])
        dst[a - ch * arena.chunk_bytes: b - ch * arena.chunk_bytes] = (
            buf[a - lo: b - lo] if b - lo <= len(buf) else np.zeros(b - a, np.uint8))
    arena.tail = hi
    return lo, hi


def _replay_with_output(store: Store, arena: Arena, sources, n_out: int, lo: int,
                        ends: np.ndarray) -> None:
    """Replay a pass whose output lives at arena bytes ``[lo, ends[-1])``.

    Output blocks are written whole as they complete (the merger holds the
    partially filled block in its output frame).
    """
    B = store.B
    ext_ids, blocks, times, kinds = [], [], [], []
    for src in sources:
        t = mergeio.block_need_times(src, B, n_out)
        ext_ids.append(np.asarray(src.mapping[0]))
        blocks.append(np.asarray(src.mapping[1]))
        times.append(t)
        kinds.append(np.zeros(len(t), dtype=np.int8))
    if len(ends):
        b0 = lo // B
        nb = (int(ends[-1]) - 1) // B - b0 + 1
        block_ends = np.minimum((b0 + np.arange(nb, dtype=np.int64) + 1) * B, int(ends[-1]))
        done = np.searchsorted(ends, block_ends, side="left")
        e, b = arena.block_map(b0, nb)
        ext_ids.append(e)
        blocks.append(b)
        times.append(done)
        kinds.append(np.ones(nb, dtype=np.int8))
    ext_ids = np.concatenate(ext_ids)
    blocks = np.concatenate(blocks)
    times = np.concatenate(times)
    kinds = np.concatenate(kinds)
    order = np.lexsort((kinds, times))
    store.replay(ext_ids[order], blocks[order], kinds[order].astype(bool))


class _ArenaView:
    def __init__(self, arena: Arena):
        self.arena = arena

    def touch(self, off: int, nbytes: int) -> None:
        self.arena.touch(off, nbytes)


def _merge_funnel(store: Store, runs: list[QRun], decoded, c: int, stats: FunnelStats | None):
    inputs = [FunnelInput(d[0], _ArenaView(r.arena), d[2], r.lo) for r, d in zip(runs, decoded)]
    k = runs[0].ncols * 2
    item_bytes = 8 + -(-k * c // 8)
    out = partial_funnelsort(store, inputs, item_bytes=item_bytes, write_output=False, stats=stats)
    pre = np.concatenate([d[0] for d in decoded])
    cols = np.concatenate([d[1] for d in decoded])
    return pre[out.order], cols[out.order], 1
