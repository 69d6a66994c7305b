import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emhash.store import BlockAddr, IOStats, Store, StoreConfig, StoreError

from conftest import make_store


@pytest.mark.parametrize("B,M,frames", [(4096, 65536, 16), (4096, 1 << 22, 1024), (512, 1024, 2)])
def test_frames(B, M, frames):
    assert Store(StoreConfig(B, M)).frames == frames


@pytest.mark.parametrize("B,M", [(4096, 4096), (4096, 6000), (1000, 4000), (256, 1024)])
def test_invalid_config(B, M):
    with pytest.raises(StoreError):
        Store(StoreConfig(B, M))


def test_unopenable_backing_file(tmp_path):
    with pytest.raises(StoreError):
        Store(StoreConfig(4096, 1 << 16, str(tmp_path / "missing" / "x.bin")))


def test_alloc_zeroed_and_disjoint(store):
    a = store.alloc(1)
    b = store.alloc(3)
    assert store.read(BlockAddr(a, 0)) == bytes(4096)
    ra = range(store.base_block(a), store.base_block(a) + store.extent_blocks(a))
    rb = range(store.base_block(b), store.base_block(b) + store.extent_blocks(b))
    assert not set(ra) & set(rb)
    with pytest.raises(StoreError):
        store.alloc(0)


def test_out_of_range(store):
    a = store.alloc(2)
    with pytest.raises(StoreError):
        store.read(BlockAddr(a, 2))
    with pytest.raises(StoreError):
        store.write(BlockAddr(a, -1), b"x")
    with pytest.raises(StoreError):
        store.read(BlockAddr(a + 99, 0))
    with pytest.raises(StoreError):
        store.touch(a, 2 * 4096 - 1, 2)


def test_stats_basics(store):
    assert store.stats() == IOStats()
    a = store.alloc(4)
    store.read(BlockAddr(a, 0))
    assert store.stats().block_reads == 1
    store.read(BlockAddr(a, 0))
    s = store.stats()
    assert (s.block_reads, s.cache_hits) == (1, 1)
    store.reset_stats()
    assert store.stats() == IOStats()


def test_write_then_read_hits(store):
    a = store.alloc(1)
    store.write(BlockAddr(a, 0), b"\x01" * 4096)   # whole block: no fetch
    assert store.read(BlockAddr(a, 0))[:2] == b"\x01\x01"
    s = store.stats()
    assert s.block_reads == 0 and s.block_writes == 0 and s.cache_hits == 1
    assert store.flush() == 1
    assert store.stats().block_writes == 1


def test_partial_write_fetches(store):
    a = store.alloc(1)
    store.write(BlockAddr(a, 0), b"abc")
    assert store.stats().block_reads == 1


def test_sequential_scan_cold():
    st_ = make_store(4096, 1 << 16)
    L = 100 * 4096 + 123
    a = st_.alloc_bytes(L)
    st_.read_bytes(a, 0, L)
    assert st_.stats().block_reads == math.ceil(L / 4096)


def test_dirty_eviction_counts_write():
    s = make_store(512, 1024)  # two frames
    a = s.alloc(3)
    for b in range(3):
        s.write(BlockAddr(a, b), bytes(512))
    assert s.stats().block_writes == 1


@settings(max_examples=40, deadline=None)
@given(frames=st.integers(2, 16), ws=st.integers(1, 16), rounds=st.integers(1, 4), seed=st.integers(0, 999))
def test_lru_working_set(frames, ws, rounds, seed):
    """A working set within the cache is charged once, whatever the access order."""
    ws = min(ws, frames)
    s = make_store(512, 512 * frames)
    a = s.alloc(ws)
    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        for b in rng.permutation(ws).tolist():
            s.read(BlockAddr(a, b))
    assert s.stats().block_reads == ws


@settings(max_examples=30, deadline=None)
@given(L=st.integers(1, 40 * 512), off=st.integers(0, 511))
def test_scan_charge_property(L, off):
    s = make_store(512, 1024)
    a = s.alloc_bytes(off + L)
    s.read_bytes(a, off, L)
    assert abs(s.stats().block_reads - math.ceil(L / 512)) <= 1


@pytest.mark.parametrize("file_backed", [False, True])
def test_roundtrip_through_eviction(tmp_path, file_backed):
    path = str(tmp_path / "s.bin") if file_backed else None
    s = Store(StoreConfig(512, 1024, path))
    rng = np.random.default_rng(1)
    exts = [s.alloc(int(n)) for n in rng.integers(1, 5, 6)]
    data = {}
    for e in exts:
        for b in range(s.extent_blocks(e)):
            blob = rng.integers(0, 256, 512, dtype=np.uint8).tobytes()
            s.write(BlockAddr(e, b), blob)
            data[(e, b)] = blob
    for (e, b), blob in data.items():
        assert s.read(BlockAddr(e, b)) == blob
    if file_backed:
        s.close()
        t = Store.load(path, 2048)
        with open(path, "rb") as fh:
            assert fh.read(5) == b"BOAH1"
        for (e, b), blob in data.items():
            assert t.read(BlockAddr(e, b)) == blob
        assert t.stats().block_reads == len(data)  # cold cache after reload


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"x" * 8192)
    with pytest.raises(StoreError):
        Store.load(str(p))


def test_trace_records_offsets(store):
    a = store.alloc(2)
    store.trace = []
    store.touch(a, 10, 5000)
    store.touch(a, 0, 4096, write=True)
    assert store.trace == [(a, 10, 5000, False), (a, 0, 4096, True)]


def test_free_drops_frames(store):
    a = store.alloc(1)
    store.read(BlockAddr(a, 0))
    assert store.is_cached(a, 0)
    store.free(a)
    with pytest.raises(StoreError):
        store.read(BlockAddr(a, 0))


def test_append_writes_fetch_only_mid_block():
    s = make_store(512, 1024)  # two frames
    a = s.alloc(4)
    for off in range(0, 4 * 512, 100):  # sequential appends of 100 bytes
        s.touch(a, off, min(100, 4 * 512 - off), write=True, append=True)
    assert s.stats().block_reads == 0
    s.drop_cache()
    s.reset_stats()
    s.touch(a, 700, 10, write=True, append=True)  # resumes inside an evicted block
    assert s.stats().block_reads == 1
