"""Charge streaming merges block by block.

Merges are computed on in-memory arrays, but their IO is charged by
replaying the exact order in which a streaming k-way merge with one frame
per input (plus one output frame) would touch blocks: input block ``k`` is
fetched when the first item overlapping it is consumed, and output block
``j`` is written once the item that completes it is produced.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import Store


@dataclass
class Source:
    """An input laid out in an extent: item ``t`` ends at byte ``ends[t]``."""

    extent: int
    ends: np.ndarray        # byte offset one past each item, ascending
    out_times: np.ndarray   # output position at which each item is consumed
    n_blocks: int           # blocks scanned (the whole stored run)
    block0: int = 0         # first block scanned
    # (extent ids, block indices) of each scanned block when the input spans
    # several extents; ``extent`` is then ignored
    mapping: tuple[np.ndarray, np.ndarray] | None = None


def block_need_times(src: Source, B: int, n_out: int) -> np.ndarray:
    """Output time at which each block of ``src`` must be resident."""
    starts = (src.block0 + np.arange(src.n_blocks, dtype=np.int64)) * B
    idx = np.searchsorted(src.ends, starts, side="right")
    times = np.full(src.n_blocks, n_out, dtype=np.int64)
    ok = idx < len(src.ends)
    times[ok] = src.out_times[idx[ok]]
    return times


def output_write_times(item_ends: np.ndarray, B: int) -> tuple[np.ndarray, np.ndarray]:
    """Blocks of a dense output and the item index completing each of them."""
    if len(item_ends) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    total = int(item_ends[-1])
    n_blocks = -(-total // B)
    block_ends = np.minimum((np.arange(n_blocks, dtype=np.int64) + 1) * B, total)
    done = np.searchsorted(item_ends, block_ends, side="left")
    return np.arange(n_blocks, dtype=np.int64), done


def replay(store: Store, sources: list[Source], n_out: int,
           out_extent: int | None = None, out_ends: np.ndarray | None = None) -> None:
    """Charge one merge pass reading ``sources`` and optionally writing a dense output."""
    B = store.B
    ext_ids, blocks, times, kinds = [], [], [], []
    for src in sources:
        t = block_need_times(src, B, n_out)
        if src.mapping is not None:
            ext_ids.append(np.asarray(src.mapping[0], dtype=np.int64))
            blocks.append(np.asarray(src.mapping[1], dtype=np.int64))
        else:
            ext_ids.append(np.full(len(t), src.extent, dtype=np.int64))
            blocks.append(src.block0 + np.arange(len(t), dtype=np.int64))
        times.append(t)
        kinds.append(np.zeros(len(t), dtype=np.int8))
    if out_extent is not None and out_ends is not None and len(out_ends):
        ob, ot = output_write_times(out_ends, B)
        ext_ids.append(np.full(len(ob), out_extent, dtype=np.int64))
        blocks.append(ob)
        times.append(ot)
        kinds.append(np.ones(len(ob), dtype=np.int8))
    if not blocks:
        return
    ext_ids = np.concatenate(ext_ids)
    blocks = np.concatenate(blocks)
    times = np.concatenate(times)
    kinds = np.concatenate(kinds)
    # reads needed at time t come before the write completed by item t
    order = np.lexsort((kinds, times))
    store.replay(ext_ids[order], blocks[order], kinds[order].astype(bool))


def span_source(extent: int, ends: np.ndarray, start: int, out_times: np.ndarray,
                B: int) -> Source:
    """Source for items stored in bytes ``[start, ends[-1])`` of an extent."""
    if len(ends) == 0:
        return Source(extent, ends, out_times, 0)
    b0 = start // B
    return Source(extent, ends, out_times, int((ends[-1] - 1) // B) - b0 + 1, b0)


def dense_ends(n: int, item_bytes: int) -> np.ndarray:
    return (np.arange(n, dtype=np.int64) + 1) * item_bytes
