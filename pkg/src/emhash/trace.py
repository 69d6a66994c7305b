"""Deferred read charging for batched queries.

Batched query paths evaluate many queries at once, column by column (one
run or one level for every query), but the IO they charge must be what
answering the queries one after another would cost.  Each access is logged
with its query index; :meth:`Trace.replay` then issues all accesses sorted
stably by query, which restores per-query chronological order.
"""
from __future__ import annotations

import numpy as np

from .store import Store


class Trace:
    def __init__(self) -> None:
        self._q: list[np.ndarray] = []
        self._ext: list[np.ndarray] = []
        self._blk: list[np.ndarray] = []
        self._one: list[tuple[int, int, int]] = []  # scalar reads, same ordering rules

    def add(self, q, ext, blocks) -> None:
        """Log reads of ``blocks`` of extent(s) ``ext`` on behalf of queries ``q``."""
        blocks = np.asarray(blocks, dtype=np.int64)
        if blocks.size == 0:
            return
        self._flush_scalars()  # keep logging order
        q = np.broadcast_to(np.asarray(q, dtype=np.int64), blocks.shape)
        ext = np.broadcast_to(np.asarray(ext, dtype=np.int64), blocks.shape)
        self._q.append(q.ravel())
        self._ext.append(ext.ravel())
        self._blk.append(blocks.ravel())

    def add_one(self, q: int, ext: int, block: int) -> None:
        """Log a single block read (cheaper than :meth:`add` for scalars)."""
        self._one.append((q, ext, block))

    def add_range(self, q: int, ext: int, off: int, nbytes: int, B: int) -> None:
        if nbytes <= 0:
            return
        one = self._one
        for b in range(off // B, (off + nbytes - 1) // B + 1):
            one.append((q, ext, b))

    def _flush_scalars(self) -> None:
        if self._one:
            arr = np.array(self._one, dtype=np.int64).reshape(-1, 3)
            self._q.append(arr[:, 0])
            self._ext.append(arr[:, 1])
            self._blk.append(arr[:, 2])
            self._one = []

    def __len__(self) -> int:
        return sum(len(b) for b in self._blk) + len(self._one)

    def replay(self, store: Store) -> None:
        """Charge all logged reads, grouped by query and in logging order within a query."""
        self._flush_scalars()
        if not self._blk:
            return
        q = np.concatenate(self._q)
        order = np.argsort(q, kind="stable")
        ext = np.concatenate(self._ext)[order]
        blk = np.concatenate(self._blk)[order]
        store.replay(ext, blk, np.zeros(len(blk), dtype=bool))
        self.__init__()


def spans(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand inclusive ranges ``[lo[i], hi[i]]`` into (owner, value) arrays."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    n = np.maximum(hi - lo + 1, 0)
    owner = np.repeat(np.arange(len(lo), dtype=np.int64), n)
    starts = np.cumsum(n) - n
    vals = np.arange(int(n.sum()), dtype=np.int64) - np.repeat(starts, n) + np.repeat(lo, n)
    return owner, vals
