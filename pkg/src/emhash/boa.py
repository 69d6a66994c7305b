"""Bundle-of-Arrays: the size-tiered layout plus one routing filter per level.

The filter of 0-based level ``li`` is a packed array of ``2**g`` slots of
``ceil(log2(lam + 1))`` bits, indexed by the top ``g`` fingerprint bits,
where ``g = ceil(log2(lam * run_entries(li)))``: at least ``lam`` slots per
entry of a run.  Slot value 0 means empty; ``r >= 1`` names the newest run
(1-based, oldest first) holding an entry with that prefix.  Every entry
keeps in ``prev_run`` the next-older run holding its prefix, or its own run
index when there is none.

On-store layout per level: one filter extent (slots packed MSB first) and
the level's run extents.
"""
from __future__ import annotations

import math

import numpy as np

from .bucketed_run import PREV_MASK
from .kernels import pack_fixed, unpack_fixed
from .stlsm import StLsm
from .store import Store
from .trace import Trace


class _Filter:
    __slots__ = ("extent", "slots", "g")

    def __init__(self, extent: int, slots: np.ndarray, g: int):
        self.extent = extent
        self.slots = slots
        self.g = g


class Boa(StLsm):
    name = "boa"

    def __init__(self, store: Store, lam: int, n_max: int, seed: int = 0,
                 k: int | None = None, fan_in: int | None = None):
        super().__init__(store, lam, n_max, seed, k, fan_in)
        if lam > int(PREV_MASK):
            raise ValueError("growth factor too large for the prev_run field")
        self.slot_bits = math.ceil(math.log2(lam + 1))
        self.filters: dict[int, _Filter] = {}
        self.chain_probes = 0

    def prefix_bits(self, li: int) -> int:
        return math.ceil(math.log2(self.lam * self.run_entries(li)))

    def filter_bytes(self, li: int) -> int:
        return -(-(self.slot_bits << self.prefix_bits(li)) // 8)

    def _filter(self, li: int) -> _Filter:
        f = self.filters.get(li)
        if f is None:
            g = self.prefix_bits(li)
            ext = self.store.alloc_bytes(self.filter_bytes(li))
            f = _Filter(ext, np.zeros(1 << g, dtype=np.uint16), g)
            self.filters[li] = f
        return f

    def _annotate(self, li: int, entries: np.ndarray, run_index: int) -> np.ndarray:
        """Chain the new run's entries and point its prefixes at it.

        Charged as one sequential read and one sequential rewrite of the
        filter, co-scanned with the run in prefix order.
        """
        f = self._filter(li)
        nbytes = self.filter_bytes(li)
        self.store.touch(f.extent, 0, nbytes)
        prefixes = (entries["fp"] >> np.uint64(64 - f.g)).astype(np.int64)
        prev = f.slots[prefixes]
        prev = np.where(prev == 0, run_index, prev).astype(np.uint64)
        f.slots[prefixes] = run_index
        self.store.write_bytes(f.extent, 0, pack_fixed(f.slots, self.slot_bits)[:nbytes])
        out = entries.copy()
        out["meta"] = prev
        return out

    def _level_emptied(self, li: int) -> None:
        f = self.filters.pop(li, None)
        if f is not None:
            self.store.free(f.extent)

    def slot(self, li: int, prefix: int) -> int:
        """Stored slot value, decoded from the filter extent (uncharged)."""
        f = self.filters.get(li)
        if f is None:
            return 0
        raw = self.store.peek(f.extent)
        return int(unpack_fixed(raw, prefix * self.slot_bits, self.slot_bits, 1)[0])

    def chain(self, li: int, prefix: int) -> list[int]:
        """Runs reached from the filter slot of ``prefix`` by following prev_run."""
        f = self.filters.get(li)
        out = []
        r = int(f.slots[prefix]) if f is not None else 0
        while r:
            out.append(r)
            run = self.levels[li][r - 1]
            shift = 64 - f.g
            _, found, _, _ = run.plan_ranges(np.array([prefix << shift], dtype=np.uint64),
                                             np.array([((prefix + 1) << shift) - 1], dtype=np.uint64))
            if len(found) == 0:
                raise RuntimeError(f"filter slot points at run {r} without prefix {prefix}")
            nxt = int(found["meta"][0] & PREV_MASK)
            if nxt == r:
                break
            r = nxt
        return out

    # -- queries ------------------------------------------------------------

    def _probe(self, keys, fps, active, results, trace: Trace) -> None:
        w = self.slot_bits
        B = self.store.B
        for li, level in enumerate(self.levels):
            if not level:
                continue
            act = np.flatnonzero(active)
            if len(act) == 0:
                return
            f = self.filters[li]
            self.level_probes += len(act)
            shift = np.uint64(64 - f.g)
            pre = fps[act] >> shift
            bit = pre.astype(np.int64) * w
            b0 = bit // 8 // B
            b1 = (bit + w - 1) // 8 // B
            trace.add(act, f.extent, b0)
            two = b1 != b0
            trace.add(act[two], f.extent, b1[two])  # per-query order kept by stable replay
            cur = f.slots[pre.astype(np.int64)].astype(np.int64)
            qs, pre = act[cur > 0], pre[cur > 0]
            cur = cur[cur > 0]
            while len(qs):
                self.runs_probed += len(qs)
                nxt = np.zeros(len(qs), dtype=np.int64)
                for r in np.unique(cur).tolist():
                    sel = np.flatnonzero(cur == r)
                    run = level[r - 1]
                    lo = pre[sel] << shift
                    hi = lo | ((np.uint64(1) << shift) - np.uint64(1))
                    mq, found, bq, blocks = run.plan_ranges(lo, hi)
                    trace.add(qs[sel][bq], run.extent, blocks)
                    if len(mq) == 0:
                        raise RuntimeError(f"level {li + 1}: slot points at run {r} without the prefix")
                    first = np.flatnonzero(np.r_[True, np.diff(mq) != 0])
                    nxt[sel[mq[first]]] = (found["meta"][first] & PREV_MASK).astype(np.int64)
                    hit = found["fp"] == fps[qs[sel][mq]]
                    self._verify_found(qs[sel], mq[hit], found[hit], keys, active, results, trace)
                keep = (nxt != cur) & active[qs]
                qs, pre, cur = qs[keep], pre[keep], nxt[keep]
