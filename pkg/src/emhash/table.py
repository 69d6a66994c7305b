"""Common plumbing for the hash tables: hashing, the record log, the
in-memory insert buffer and batched query scaffolding."""
from __future__ import annotations

import numpy as np

from .fingerprint import WORD_BITS, CharCodec, default_degree, make_family
from .records import RecordLog
from .store import Store
from .trace import Trace


class CapacityError(RuntimeError):
    """The table already holds its declared maximum number of entries."""


class Table:
    """Base class; subclasses set ``buffer_capacity`` and implement
    ``_flush_buffer`` and ``_probe``."""

    name = "table"

    def __init__(self, store: Store, lam: int, n_max: int, seed: int = 0,
                 k: int | None = None):
        self.codec = CharCodec.for_lambda(lam)
        if n_max < 1:
            raise ValueError("n_max must be positive")
        if n_max > 1 << (WORD_BITS // 2):
            raise ValueError(f"n_max={n_max} exceeds 2^32: universe 2^64 must be >= n_max^2")
        self.store = store
        self.lam = lam
        self.n_max = n_max
        self.seed = seed
        self.family = make_family(k if k is not None else default_degree(n_max), seed)
        self.log = RecordLog(store)
        self.n = 0
        self._buf_fp: list[int] = []
        self._buf_h: list[int] = []
        self._buf_map: dict[bytes, bytes] = {}

    buffer_capacity: int = 1

    def __len__(self) -> int:
        return self.n

    # -- inserts ------------------------------------------------------------

    def insert(self, key: bytes, value: bytes) -> None:
        self.insert_many([key], [value])

    def insert_many(self, keys, values) -> None:
        """Insert pairs in order; equivalent to repeated :meth:`insert`."""
        keys = list(keys)
        values = list(values)
        if len(keys) != len(values):
            raise ValueError("keys and values differ in length")
        if self.n + len(keys) > self.n_max:
            raise CapacityError(f"{self.n} + {len(keys)} entries exceeds n_max={self.n_max}")
        fps = self.family.fingerprint_many(keys) if keys else np.zeros(0, np.uint64)
        cap = self.buffer_capacity
        i = 0
        while i < len(keys):
            j = min(len(keys), i + cap - len(self._buf_fp))
            handles = self.log.append_many(keys[i:j], values[i:j])
            self._buf_fp.extend(fps[i:j].tolist())
            self._buf_h.extend(handles.tolist())
            self._buf_map.update(zip(keys[i:j], values[i:j]))
            self.n += j - i
            if len(self._buf_fp) == cap:
                fp = np.array(self._buf_fp, dtype=np.uint64)
                h = np.array(self._buf_h, dtype=np.uint64)
                self._buf_fp, self._buf_h = [], []
                self._buf_map = {}
                self._flush_buffer(fp, h)
            i = j

    def _flush_buffer(self, fps: np.ndarray, handles: np.ndarray) -> None:
        raise NotImplementedError

    # -- queries ------------------------------------------------------------

    def query(self, key: bytes) -> bytes | None:
        return self.query_many([key])[0]

    def query_many(self, keys) -> list[bytes | None]:
        """Answer queries; IO is charged as if they ran one at a time."""
        keys = list(keys)
        results: list[bytes | None] = [None] * len(keys)
        active = np.ones(len(keys), dtype=bool)
        for i, key in enumerate(keys):
            v = self._buf_map.get(key)
            if v is not None:
                results[i] = v
                active[i] = False
        if active.any() and keys:
            fps = self.family.fingerprint_many(keys)
            trace = Trace()
            self._probe(keys, fps, active, results, trace)
            trace.replay(self.store)
        return results

    def _probe(self, keys, fps, active, results, trace: Trace) -> None:
        raise NotImplementedError

    def _verify(self, q: int, handles, keys, active, results, trace: Trace) -> bool:
        """Check candidate handles (newest first) against the full key of query ``q``."""
        for h in handles:
            key, value = self.log.get_traced(int(h), trace, q)
            if key == keys[q]:
                results[q] = value
                active[q] = False
                return True
        return False

    def space_bytes(self) -> int:
        raise NotImplementedError


def sorted_newest_first(fps: np.ndarray, handles: np.ndarray) -> np.ndarray:
    """Order buffer contents by fingerprint, later inserts first on ties."""
    seq = np.arange(len(fps), dtype=np.int64)
    return np.lexsort((-seq, fps))
