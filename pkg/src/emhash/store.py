"""Simulated external memory with an LRU block cache and exact transfer counters.

Every structure in this package keeps its on-disk state in extents of a
:class:`Store` and charges each access through it.  Data lives in memory
(optionally persisted to a file); the cache only tracks which blocks are
resident and dirty, which is all the IO model needs.

Charging rules:

* a read of a non-resident block costs one ``block_read``;
* a write that covers a whole non-resident block allocates a frame without
  fetching it (no read); a partial write fetches first;
* an append (``touch(..., append=True)``) fetches only a non-resident block
  it enters mid-block;
* evicting a dirty frame costs one ``block_write``; :meth:`Store.flush`
  writes back every dirty frame;
* any access to a resident block only bumps ``cache_hits``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .kernels import LRUCache

MAGIC = b"BOAH1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<5s3xIQQQQ")  # magic, version, B, n_extents, table block, next base


class StoreError(Exception):
    """Invalid configuration, bad address, or unusable backing file."""


@dataclass(frozen=True)
class StoreConfig:
    block_bytes: int = 4096
    cache_bytes: int = 1 << 20
    path: str | None = None  # None means volatile

    def validate(self) -> None:
        B, M = self.block_bytes, self.cache_bytes
        if B < 512 or B & (B - 1):
            raise StoreError(f"block_bytes must be a power of two >= 512, got {B}")
        if M < 2 * B:
            raise StoreError(f"cache_bytes must be >= 2*block_bytes ({2 * B}), got {M}")
        if M % B:
            raise StoreError("cache_bytes must be a multiple of block_bytes")

    @property
    def frames(self) -> int:
        return self.cache_bytes // self.block_bytes

    @property
    def tall(self) -> bool:
        return self.cache_bytes >= self.block_bytes**2


class BlockAddr(NamedTuple):
    extent: int
    offset: int


@dataclass
class IOStats:
    block_reads: int = 0
    block_writes: int = 0
    cache_hits: int = 0
    bytes_moved: int = 0

    @property
    def transfers(self) -> int:
        return self.block_reads + self.block_writes

    def __sub__(self, other: "IOStats") -> "IOStats":
        return IOStats(
            self.block_reads - other.block_reads,
            self.block_writes - other.block_writes,
            self.cache_hits - other.cache_hits,
            self.bytes_moved - other.bytes_moved,
        )


@dataclass
class _Extent:
    id: int
    base: int
    n_blocks: int
    data: np.ndarray = field(repr=False)


class Store:
    """Block store with ``cache_bytes // block_bytes`` LRU frames.

    Not thread-safe; hand a store between threads only while it is idle.
    """

    def __init__(self, config: StoreConfig):
        config.validate()
        self.config = config
        self.B = config.block_bytes
        self._cache = LRUCache(config.frames)
        self._extents: dict[int, _Extent] = {}
        self._next_id = 0
        self._next_base = 0
        self._base_stats = IOStats()
        self.trace: list[tuple[int, int, int, bool]] | None = None
        if config.path is not None:
            try:
                with open(config.path, "wb") as fh:
                    fh.write(bytes(self.B))
            except OSError as exc:
                raise StoreError(f"cannot open backing file {config.path!r}: {exc}") from exc

    # -- allocation ---------------------------------------------------------

    @property
    def frames(self) -> int:
        return self.config.frames

    def alloc(self, n_blocks: int) -> int:
        if n_blocks < 1:
            raise StoreError("alloc needs at least one block")
        ext = _Extent(self._next_id, self._next_base, n_blocks,
                      np.zeros(n_blocks * self.B, dtype=np.uint8))
        self._extents[ext.id] = ext
        self._next_id += 1
        self._next_base += n_blocks
        return ext.id

    def alloc_bytes(self, nbytes: int) -> int:
        return self.alloc(max(1, -(-nbytes // self.B)))

    def free(self, extent: int) -> None:
        ext = self._extents.pop(extent)
        self._cache.discard(ext.base, ext.base + ext.n_blocks)

    def extent_blocks(self, extent: int) -> int:
        return self._get(extent).n_blocks

    def extent_bytes(self, extent: int) -> int:
        return self._get(extent).n_blocks * self.B

    def base_block(self, extent: int) -> int:
        return self._get(extent).base

    def extents(self) -> list[int]:
        return list(self._extents)

    def _get(self, extent: int) -> _Extent:
        try:
            return self._extents[extent]
        except KeyError:
            raise StoreError(f"unknown extent {extent}") from None

    # -- charging -----------------------------------------------------------

    def _charge(self, ext: _Extent, off: int, nbytes: int, write: bool,
                append: bool = False) -> None:
        if nbytes <= 0:
            return
        B = self.B
        end = off + nbytes
        if off < 0 or end > ext.n_blocks * B:
            raise StoreError(f"range [{off}, {end}) outside extent {ext.id}")
        if self.trace is not None:
            self.trace.append((ext.id, off, nbytes, write))
        b0 = off // B
        b1 = (end - 1) // B
        cache = self._cache
        if not write:
            cache.access_range(ext.base + b0, ext.base + b1 + 1, False, True)
            return
        if append:  # bytes past ``end`` are unwritten: only a mid-block start fetches
            head_partial = off % B != 0
            tail_partial = False
        else:
            head_partial = off % B != 0 or (b0 == b1 and end % B != 0)
            tail_partial = end % B != 0
        if b0 == b1:
            cache.access_one(ext.base + b0, True, head_partial or tail_partial)
            return
        cache.access_one(ext.base + b0, True, head_partial)
        if b1 > b0 + 1:
            cache.access_range(ext.base + b0 + 1, ext.base + b1, True, False)
        cache.access_one(ext.base + b1, True, tail_partial)

    def touch(self, extent: int, off: int, nbytes: int, write: bool = False,
              append: bool = False) -> None:
        """Charge an access to ``[off, off + nbytes)`` without moving data.

        ``append`` marks a write whose destination holds nothing worth keeping
        from ``off`` onwards, so a block the write enters at its start is not
        fetched.
        """
        self._charge(self._get(extent), off, nbytes, write, append)

    def touch_blocks(self, extent: int, blocks, write: bool = False, fetch: bool = True) -> None:
        """Charge whole-block accesses for an array of block indices, in order."""
        ext = self._get(extent)
        blocks = np.asarray(blocks, dtype=np.int64)
        if len(blocks) == 0:
            return
        if blocks.min() < 0 or blocks.max() >= ext.n_blocks:
            raise StoreError(f"block index outside extent {ext.id}")
        if self.trace is not None:
            B = self.B
            self.trace.extend((ext.id, int(b) * B, B, write) for b in blocks)
        self._cache.access(blocks + ext.base, write, fetch)

    def replay(self, ext_ids, blocks, writes) -> None:
        """Charge an ordered sequence of whole-block accesses across extents.

        ``writes`` marks full-block writes (no fetch); everything else is a read.
        """
        ext_ids = np.asarray(ext_ids, dtype=np.int64)
        blocks = np.asarray(blocks, dtype=np.int64)
        writes = np.asarray(writes, dtype=bool)
        if len(blocks) == 0:
            return
        uids, inv = np.unique(ext_ids, return_inverse=True)
        exts = [self._get(int(e)) for e in uids]
        bases = np.array([x.base for x in exts], dtype=np.int64)
        sizes = np.array([x.n_blocks for x in exts], dtype=np.int64)
        if blocks.min() < 0 or np.any(blocks >= sizes[inv]):
            raise StoreError("block index outside its extent")
        gids = blocks + bases[inv]
        if self.trace is not None:
            B = self.B
            self.trace.extend(zip(ext_ids.tolist(), (blocks * B).tolist(),
                                  [B] * len(blocks), writes.tolist()))
        cuts = np.flatnonzero(np.diff(writes.astype(np.int8))) + 1
        for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, len(writes)]):
            w = bool(writes[lo])
            self._cache.access(gids[lo:hi], w, not w)

    # -- data access ----------------------------------------------------------

    def read(self, addr: BlockAddr) -> bytes:
        ext = self._get(addr.extent)
        if not 0 <= addr.offset < ext.n_blocks:
            raise StoreError(f"block {addr.offset} outside extent {addr.extent}")
        off = addr.offset * self.B
        self._charge(ext, off, self.B, False)
        return ext.data[off: off + self.B].tobytes()

    def write(self, addr: BlockAddr, data: bytes) -> None:
        ext = self._get(addr.extent)
        if not 0 <= addr.offset < ext.n_blocks:
            raise StoreError(f"block {addr.offset} outside extent {addr.extent}")
        if len(data) > self.B:
            raise StoreError("write larger than one block")
        off = addr.offset * self.B
        self._charge(ext, off, len(data), True)
        ext.data[off: off + len(data)] = np.frombuffer(bytes(data), dtype=np.uint8)

    def read_bytes(self, extent: int, off: int, nbytes: int) -> np.ndarray:
        ext = self._get(extent)
        self._charge(ext, off, nbytes, False)
        return ext.data[off: off + nbytes].copy()

    def write_bytes(self, extent: int, off: int, data) -> None:
        ext = self._get(extent)
        if isinstance(data, (bytes, bytearray)):
            buf = np.frombuffer(data, dtype=np.uint8)
        else:
            buf = np.ascontiguousarray(data).view(np.uint8).ravel()
        self._charge(ext, off, len(buf), True)
        ext.data[off: off + len(buf)] = buf

    def peek(self, extent: int) -> np.ndarray:
        """Uncharged view of an extent's bytes; callers charge via :meth:`touch`."""
        return self._get(extent).data

    # -- counters -----------------------------------------------------------

    def stats(self) -> IOStats:
        c = self._cache
        s = IOStats(c.reads, c.writes, c.hits, (c.reads + c.writes) * self.B)
        return s - self._base_stats

    def reset_stats(self) -> None:
        c = self._cache
        self._base_stats = IOStats(c.reads, c.writes, c.hits, (c.reads + c.writes) * self.B)

    def flush(self) -> int:
        """Write back every dirty frame; returns the number of blocks written."""
        return self._cache.flush()

    def drop_cache(self) -> None:
        """Write back and forget every frame, leaving a cold cache."""
        self._cache.flush()
        self._cache.discard(0, self._next_base)

    def is_cached(self, extent: int, block: int) -> bool:
        return self._cache.contains(self._get(extent).base + block)

    # -- file backing ---------------------------------------------------------

    def sync(self) -> None:
        """Persist header, raw blocks, and extent table to the backing file."""
        path = self.config.path
        if path is None:
            return
        B = self.B
        table_block = 1 + self._next_base
        with open(path, "r+b") as fh:
            for ext in self._extents.values():
                fh.seek((1 + ext.base) * B)
                fh.write(ext.data.tobytes())
            fh.seek(table_block * B)
            for ext in self._extents.values():
                fh.write(struct.pack("<QQQ", ext.id, ext.base, ext.n_blocks))
            fh.truncate()
            fh.seek(0)
            header = _HEADER.pack(MAGIC, FORMAT_VERSION, B, len(self._extents),
                                  table_block, self._next_base)
            fh.write(header + bytes(B - len(header)))

    def close(self) -> None:
        self.flush()
        self.sync()

    @classmethod
    def load(cls, path: str, cache_bytes: int | None = None) -> "Store":
        """Reopen a file-backed store written by :meth:`sync`; the cache starts cold."""
        try:
            with open(path, "rb") as fh:
                head = fh.read(_HEADER.size)
                magic, version, B, n_ext, table_block, next_base = _HEADER.unpack(head)
                if magic != MAGIC or version != FORMAT_VERSION:
                    raise StoreError(f"{path!r} is not a version-{FORMAT_VERSION} store file")
                fh.seek(table_block * B)
                table = [struct.unpack("<QQQ", fh.read(24)) for _ in range(n_ext)]
                extents = []
                for ext_id, base, n_blocks in table:
                    fh.seek((1 + base) * B)
                    raw = fh.read(n_blocks * B)
                    extents.append(_Extent(ext_id, base, n_blocks,
                                           np.frombuffer(raw, dtype=np.uint8).copy()))
        except (OSError, struct.error) as exc:
            raise StoreError(f"cannot load store {path!r}: {exc}") from exc
        config = StoreConfig(B, cache_bytes or 16 * B, path)
        config.validate()
        store = cls.__new__(cls)
        store.config = config
        store.B = B
        store._cache = LRUCache(config.frames)
        store._extents = {e.id: e for e in extents}
        store._next_id = max((e.id for e in extents), default=-1) + 1
        store._next_base = next_base
        store._base_stats = IOStats()
        store.trace = None
        return store


def open_store(config: StoreConfig) -> Store:
    return Store(config)

