"""Append-only key/value record log.

Tables store an 8-byte handle per entry; the handle addresses a record
``<u32 key_len><u32 value_len><key><value>`` in this log so that a
fingerprint match can be verified against the full key.  The tail block is
buffered in memory and written out whole, so appends cost one block write
per ``B`` bytes of records.
"""
from __future__ import annotations

import struct

import numpy as np

from .store import Store
from .trace import Trace

_REC = struct.Struct("<II")
CHUNK_BLOCKS = 64


class RecordLog:
    def __init__(self, store: Store, chunk_blocks: int = CHUNK_BLOCKS):
        self.store = store
        self.B = store.B
        self.chunk_bytes = chunk_blocks * self.B
        self._chunks: list[int] = []
        self._tail = bytearray()  # unwritten bytes of the current block
        self._tail_start = 0      # chunk offset where the tail block starts
        self._pos = self.chunk_bytes  # forces a chunk on first append
        self.n_records = 0

    def _new_chunk(self) -> None:
        self._flush_tail()
        self._tail = bytearray()
        self._chunks.append(self.store.alloc(self.chunk_bytes // self.B))
        self._pos = 0
        self._tail_start = 0

    def _flush_tail(self) -> None:
        if self._tail and self._chunks:
            self.store.write_bytes(self._chunks[-1], self._tail_start, bytes(self._tail))

    def _settle(self) -> None:
        if not self._chunks:
            return
        full = (self._pos // self.B) * self.B - self._tail_start
        if full > 0:
            self.store.write_bytes(self._chunks[-1], self._tail_start, bytes(self._tail[:full]))
            del self._tail[:full]
            self._tail_start += full

    def append(self, key: bytes, value: bytes) -> int:
        rec = _REC.pack(len(key), len(value)) + key + value
        if len(rec) > self.chunk_bytes:
            raise ValueError("record larger than a log chunk")
        if self._pos + len(rec) > self.chunk_bytes:
            self._new_chunk()
        handle = (len(self._chunks) - 1) * self.chunk_bytes + self._pos
        self._tail += rec
        self._pos += len(rec)
        self._settle()
        self.n_records += 1
        return handle

    def append_many(self, keys, values) -> np.ndarray:
        """Append records in order; same bytes and IO as repeated :meth:`append`."""
        handles = np.empty(len(keys), dtype=np.uint64)
        pending = []
        for i, (k, v) in enumerate(zip(keys, values)):
            rec = _REC.pack(len(k), len(v)) + k + v
            if len(rec) > self.chunk_bytes:
                raise ValueError("record larger than a log chunk")
            if self._pos + len(rec) > self.chunk_bytes:
                self._tail += b"".join(pending)
                pending = []
                self._settle()
                self._new_chunk()
            handles[i] = (len(self._chunks) - 1) * self.chunk_bytes + self._pos
            pending.append(rec)
            self._pos += len(rec)
        self._tail += b"".join(pending)
        self._settle()
        self.n_records += len(keys)
        return handles

    def _locate(self, handle: int) -> tuple[int, int]:
        chunk, off = divmod(int(handle), self.chunk_bytes)
        if chunk >= len(self._chunks):
            raise KeyError(f"no record at handle {handle}")
        return chunk, off

    def _raw(self, chunk: int, off: int, n: int) -> bytes:
        """Uncharged bytes, whether written out or still in the tail."""
        if chunk == len(self._chunks) - 1 and off + n > self._tail_start:
            split = max(off, self._tail_start)
            head = self.store.peek(self._chunks[chunk])[off:split].tobytes()
            return head + bytes(self._tail[split - self._tail_start: off + n - self._tail_start])
        return self.store.peek(self._chunks[chunk])[off: off + n].tobytes()

    def plan(self, handle: int) -> tuple[bytes, bytes, int, list[tuple[int, int]]]:
        """Record contents plus the charged byte ranges :meth:`get` reads.

        Returns ``(key, value, extent, [(off, nbytes), ...])``; the header is
        read first, then the body.  Bytes still in the tail cost nothing.
        """
        chunk, off = self._locate(handle)
        klen, vlen = _REC.unpack(self._raw(chunk, off, _REC.size))
        body = self._raw(chunk, off + _REC.size, klen + vlen)
        limit = self._tail_start if chunk == len(self._chunks) - 1 else self.chunk_bytes
        ranges = []
        for a, n in ((off, _REC.size), (off + _REC.size, klen + vlen)):
            n = min(a + n, limit) - a
            if n > 0:
                ranges.append((a, n))
        return body[:klen], body[klen:], self._chunks[chunk], ranges

    def get(self, handle: int) -> tuple[bytes, bytes]:
        key, value, ext, ranges = self.plan(handle)
        for a, n in ranges:
            self.store.touch(ext, a, n)
        return key, value

    def get_traced(self, handle: int, trace: Trace, q: int) -> tuple[bytes, bytes]:
        key, value, ext, ranges = self.plan(handle)
        for a, n in ranges:
            trace.add_range(q, ext, a, n, self.B)
        return key, value

    def key_of(self, handle: int) -> bytes:
        return self.get(handle)[0]

    def space_bytes(self) -> int:
        return len(self._chunks) * self.chunk_bytes

    def flush(self) -> None:
        """Write the partial tail block; it stays buffered for further appends."""
        self._flush_tail()
