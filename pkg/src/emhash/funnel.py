"""Cache-oblivious merging: K-funnels and partial funnelsort.

A K-funnel (K > 2) is a ``ceil(sqrt(K))``-funnel whose inputs are buffers of
``ceil(K**1.5)`` items, each filled by a funnel over one contiguous group of
the K inputs; 2-funnels merge directly.  Buffers live in store extents, so
all traffic through them is charged.  The shape and every access depend on
K, the item sizes and the data only, never on B or M.

Merging is stable: equal keys leave in input order.  Items are compared by
key alone; the funnel moves ``item_bytes`` per item through its buffers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .store import Store


@dataclass
class FunnelInput:
    """A sorted input: ``keys[t]`` occupies bytes ``[ends[t-1], ends[t])``
    of ``extent`` (the first item starts at ``start``).  ``extent`` may also
    be any object with a ``touch(off, nbytes)`` method charging reads."""

    keys: np.ndarray
    extent: object
    ends: np.ndarray
    start: int = 0


@dataclass
class FunnelStats:
    funnel_calls: int = 0
    refills: int = 0
    chunks: int = 0
    buffer_items: list[int] = field(default_factory=list)


class _Stream:
    """Items a merger can draw from (keys and ids as Python lists)."""

    keys: list
    ids: list
    head: int
    count: int

    def available(self) -> int:
        return self.count - self.head

    def final(self) -> bool:
        """No item beyond the currently available ones will ever arrive."""
        return True

    def refill(self) -> None:
        pass

    def consume(self, n: int) -> None:
        raise NotImplementedError


class _RunStream(_Stream):
    def __init__(self, store: Store, inp: FunnelInput, base_id: int):
        self.store = store
        self.inp = inp
        self.keys = np.asarray(inp.keys, dtype=np.uint64).tolist()
        self.ids = list(range(base_id, base_id + len(self.keys)))
        self.ends = np.asarray(inp.ends, dtype=np.int64).tolist()
        self.head = 0
        self.count = len(self.keys)

    def consume(self, n: int) -> None:
        if n <= 0:
            return
        lo = self.inp.start if self.head == 0 else self.ends[self.head - 1]
        hi = self.ends[self.head + n - 1]
        ext = self.inp.extent
        if isinstance(ext, (int, np.integer)):
            self.store.touch(int(ext), lo, hi - lo)
        else:
            ext.touch(lo, hi - lo)
        self.head += n


class _Buffer(_Stream):
    def __init__(self, store: Store, capacity: int, item_bytes: int, child: "_Merger",
                 stats: FunnelStats):
        self.store = store
        self.capacity = capacity
        self.item_bytes = item_bytes
        self.child = child
        self.stats = stats
        self.extent = store.alloc_bytes(capacity * item_bytes)
        self.keys: list = []
        self.ids: list = []
        self.head = 0
        self.count = 0
        self.done = False
        stats.buffer_items.append(capacity)

    def final(self) -> bool:
        return self.done

    def refill(self) -> None:
        """Refill an empty buffer by running its child funnel until full."""
        if self.done or self.head < self.count:
            return
        self.keys, self.ids = [], []
        self.head = self.count = 0
        self.stats.refills += 1
        self.child.fill(self, self.capacity)
        if self.count < self.capacity:
            self.done = True

    def push(self, keys: list, ids: list) -> None:
        n = len(keys)
        self.store.touch(self.extent, self.count * self.item_bytes, n * self.item_bytes,
                         write=True, append=True)
        self.keys += keys
        self.ids += ids
        self.count += n

    def consume(self, n: int) -> None:
        if n <= 0:
            return
        self.store.touch(self.extent, self.head * self.item_bytes, n * self.item_bytes)
        self.head += n

    def release(self) -> None:
        self.store.free(self.extent)


class _Sink:
    """Final output: a dense extent (charged writes) or a plain stream."""

    def __init__(self, store: Store, total: int, item_bytes: int, write: bool):
        self.store = store
        self.item_bytes = item_bytes
        self.extent = store.alloc_bytes(max(1, total * item_bytes)) if write else None
        self.keys: list = []
        self.ids: list = []
        self.count = 0

    def push(self, keys: list, ids: list) -> None:
        n = len(keys)
        if self.extent is not None:
            self.store.touch(self.extent, self.count * self.item_bytes, n * self.item_bytes,
                         write=True, append=True)
        self.keys += keys
        self.ids += ids
        self.count += n


class _Merger:
    """Two-way (or one-way) merger feeding a buffer or the sink.

    Each step merges what is available and stops as soon as an input that
    may still grow runs dry, so ties always leave in input order.
    """

    def __init__(self, inputs: list[_Stream], stats: FunnelStats):
        if not 1 <= len(inputs) <= 2:
            raise ValueError("base mergers take one or two inputs")
        self.inputs = inputs
        self.stats = stats

    def fill(self, out, want: int) -> None:
        produced = 0
        inputs = self.inputs
        while produced < want:
            for st in inputs:
                if st.head == st.count:
                    st.refill()
            live = [st for st in inputs if st.head < st.count]
            if not live:
                return
            room = want - produced
            self.stats.chunks += 1
            if len(live) == 1:
                a = live[0]
                n = min(room, a.count - a.head)
                keys = a.keys[a.head: a.head + n]
                ids = a.ids[a.head: a.head + n]
                a.consume(n)
                out.push(keys, ids)
                produced += n
                continue
            a, b = live
            ak, bk = a.keys, b.keys
            i, j, ai, bi = a.head, b.head, a.count, b.count
            keys, ids, picks = [], [], []
            while room:
                if ak[i] <= bk[j]:
                    keys.append(ak[i]); ids.append(a.ids[i]); i += 1
                    room -= 1
                    if i == ai:
                        break
                else:
                    keys.append(bk[j]); ids.append(b.ids[j]); j += 1
                    room -= 1
                    if j == bi:
                        break
            a.consume(i - a.head)
            b.consume(j - b.head)
            out.push(keys, ids)
            produced += len(keys)


def _icbrt_ceil(k: int) -> int:
    g = max(1, round(k ** (1 / 3)))
    while g ** 3 < k:
        g += 1
    while g > 1 and (g - 1) ** 3 >= k:
        g -= 1
    return g


def _build(store: Store, streams: list[_Stream], item_bytes: int, stats: FunnelStats) -> _Merger:
    K = len(streams)
    if K <= 2:
        return _Merger(streams, stats)
    kt = math.isqrt(K - 1) + 1  # ceil(sqrt(K))
    cap = math.ceil(K ** 1.5)
    groups = np.array_split(np.arange(K), kt)
    tops: list[_Stream] = []
    for g in groups:
        if len(g) == 0:
            continue
        if len(g) == 1:
            tops.append(streams[int(g[0])])
            continue
        child = _build(store, [streams[int(i)] for i in g], item_bytes, stats)
        tops.append(_Buffer(store, cap, item_bytes, child, stats))
    return _build(store, tops, item_bytes, stats)


def _release(m: _Merger) -> None:
    for st in m.inputs:
        if isinstance(st, _Buffer):
            _release(st.child)
            st.release()


@dataclass
class MergeOutput:
    order: np.ndarray          # merged item ids (positions in the concatenated inputs)
    keys: np.ndarray
    extent: int | None         # dense output extent when written
    stats: FunnelStats


def funnel_merge(store: Store, inputs: list[FunnelInput], item_bytes: int = 8,
                 write_output: bool = True, stats: FunnelStats | None = None) -> MergeOutput:
    """Merge sorted inputs with one K-funnel (K = number of inputs)."""
    stats = stats if stats is not None else FunnelStats()
    stats.funnel_calls += 1
    total = sum(len(i.keys) for i in inputs)
    streams, base = [], 0
    for inp in inputs:
        streams.append(_RunStream(store, inp, base))
        base += len(inp.keys)
    sink = _Sink(store, total, item_bytes, write_output)
    if streams:
        root = _build(store, streams, item_bytes, stats)
        root.fill(sink, total)
        _release(root)
    if sink.count != total:
        raise RuntimeError("funnel lost items")
    return MergeOutput(np.array(sink.ids, dtype=np.int64), np.array(sink.keys, dtype=np.uint64),
                       sink.extent, stats)


def partial_funnelsort(store: Store, inputs: list[FunnelInput], item_bytes: int = 8,
                       word_bytes: int = 8, write_output: bool = True,
                       stats: FunnelStats | None = None) -> MergeOutput:
    """Merge K sorted runs: one K-funnel when the total length L (in words)
    is at least K**3, otherwise merge groups of ``ceil(K**(1/3))`` runs
    recursively and then merge the group outputs."""
    stats = stats if stats is not None else FunnelStats()
    K = len(inputs)
    total = sum(len(i.keys) for i in inputs)
    L = total * item_bytes // word_bytes
    g = _icbrt_ceil(K)
    if K <= 1 or L >= K ** 3 or g >= K:
        return funnel_merge(store, inputs, item_bytes, write_output, stats)
    ids_all = []
    merged_inputs = []
    base = 0
    for lo in range(0, K, g):
        grp = inputs[lo: lo + g]
        out = partial_funnelsort(store, grp, item_bytes, word_bytes, True, stats)
        n = len(out.keys)
        ids_all.append(out.order + base)
        base += sum(len(i.keys) for i in grp)
        merged_inputs.append(FunnelInput(out.keys, out.extent,
                                         (np.arange(n, dtype=np.int64) + 1) * item_bytes))
    top = partial_funnelsort(store, merged_inputs, item_bytes, word_bytes, write_output, stats)
    for inp in merged_inputs:
        if inp.extent is not None:
            store.free(inp.extent)
    flat = np.concatenate(ids_all) if ids_all else np.zeros(0, np.int64)
    # top.order indexes the concatenation of group outputs
    order = flat[top.order] if len(flat) else flat
    return MergeOutput(order, top.keys, top.extent, stats)
