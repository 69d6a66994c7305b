import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emhash.bucketed_run import bucket_of
from emhash.fingerprint import CharCodec, default_degree, fingerprint, make_family

from conftest import random_keys


def test_deterministic_and_seeded():
    a, b = make_family(8, 3), make_family(8, 3)
    keys = random_keys(100)
    assert np.array_equal(a.fingerprint_many(keys), b.fingerprint_many(keys))
    c = make_family(8, 4)
    assert not np.array_equal(a.fingerprint_many(keys), c.fingerprint_many(keys))
    assert a.coeffs_hi[0] != 0 and a.coeffs_lo[0] != 0


def test_golden_values():
    assert fingerprint(make_family(20, 12345), b"hello world") == 0x52A64553F25EE614
    assert fingerprint(make_family(20, 12345), b"") == 0xF6E12117B4439140
    assert fingerprint(make_family(2, 7), b"hello world") == 0x4C0B8CF0222E8ADC


def test_degree_validation():
    with pytest.raises(ValueError):
        make_family(1, 0)
    assert default_degree(1 << 20) == 20
    assert default_degree(1) == 2


def test_pairwise_collisions_on_32_bit_fold():
    """Low 32 bits come from one degree-1 polynomial; collisions match (n choose 2)/2^32."""
    n, seeds = 100_000, 10
    keys = random_keys(n, seed=99)
    total = 0
    for seed in range(seeds):
        lo = make_family(2, seed).fingerprint_many(keys) & np.uint64(0xFFFFFFFF)
        _, counts = np.unique(lo, return_counts=True)
        total += int((counts * (counts - 1) // 2).sum())
    expect = seeds * math.comb(n, 2) / 2**32  # about 11.6
    assert abs(total - expect) <= 5 * math.sqrt(expect)


def test_character_frequencies_uniform():
    n = 1 << 20
    fps = make_family(20, 1).fingerprint_many(random_keys(n, seed=5))
    codec = CharCodec.for_lambda(16)
    sigma = math.sqrt(n * (1 / 16) * (15 / 16))
    for j in range(codec.n_chars):
        freq = np.bincount(codec.char(fps, j).astype(np.int64), minlength=16)
        assert np.all(np.abs(freq - n / 16) <= 5 * sigma), j


def test_balls_in_bins_single_seed():
    n = 1 << 20
    logn = 20
    Q = n // logn
    fps = make_family(logn, 2).fingerprint_many(random_keys(n, seed=2))
    load = np.bincount(bucket_of(fps, Q), minlength=Q).max()
    assert load <= 8 * n / Q


def test_bit_extraction_examples():
    c2 = CharCodec(2)
    f = 0b0110 << 60
    assert c2.prefix(f, 2) == 6
    assert c2.prefix(f, 0) == 0
    assert c2.prefix(f, 32) == f
    assert c2.next_char(0b011011 << 58, 2) == 0b11
    assert c2.next_char(f, 0) == 0b01
    w16 = CharCodec(2, width=16)
    assert w16.check_char(0x2A5C, 1) == 0b00
    assert w16.check_char(0x2A5C, 2) == 0b11
    with pytest.raises(ValueError):
        c2.prefix(f, 33)
    with pytest.raises(ValueError):
        c2.next_char(f, 32)
    with pytest.raises(ValueError):
        c2.check_char(f, 0)


def test_codec_validation():
    with pytest.raises(ValueError):
        CharCodec.for_lambda(6)
    with pytest.raises(ValueError):
        CharCodec.for_lambda(2)
    assert CharCodec.for_lambda(8).n_chars == 21  # 64 = 21*3 + 1 spare bit


@settings(max_examples=200, deadline=None)
@given(f=st.integers(0, (1 << 64) - 1), c=st.integers(2, 16), data=st.data())
def test_concatenation_identity(f, c, data):
    codec = CharCodec(c)
    h = data.draw(st.integers(0, codec.n_chars - 1))
    assert codec.prefix(f, h + 1) == (codec.prefix(f, h) << c) | codec.next_char(f, h)
    arr = np.array([f], dtype=np.uint64)
    assert int(codec.prefix(arr, h)[0]) == codec.prefix(f, h)
    assert int(codec.next_char(arr, h)[0]) == codec.next_char(f, h)


@settings(max_examples=100, deadline=None)
@given(c=st.integers(2, 16), data=st.data())
def test_check_ranges_disjoint(c, data):
    codec = CharCodec(c)
    i = data.draw(st.integers(1, codec.n_chars))
    j = data.draw(st.integers(1, codec.n_chars).filter(lambda x: x != i))
    a, b = codec.check_bits_start(i), codec.check_bits_start(j)
    assert a + c <= b or b + c <= a
