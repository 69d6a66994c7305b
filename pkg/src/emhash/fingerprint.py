"""k-wise independent fingerprints and character arithmetic on them.

A fingerprint is a 64-bit word read as a string of ``c``-bit characters
``K0 K1 K2 ...`` with ``K0`` the most significant.  When ``c`` does not
divide the word width the low ``width % c`` bits belong to no character.

Prefix convention: ``prefix(f, h)`` has exactly ``h`` characters.  A
structure that needs the prefix "up to and including character ``h``"
asks for ``prefix(f, h + 1)``.  Structures that size prefixes in bits use
:meth:`CharCodec.prefix_bits` and :meth:`CharCodec.next_bits`; the
character following an ``n``-bit prefix is the next ``c`` bits.

Hashing: a key is first folded into GF(2^61 - 1) by evaluating its 7-byte
limbs as a polynomial at a seeded point, then two independent degree
``k - 1`` polynomials over the same field each supply 32 bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import MERSENNE61, poly_eval_many, prehash_keys

WORD_BITS = 64
_MASK32 = np.uint64(0xFFFFFFFF)


def default_degree(n_max: int) -> int:
    """Independence used when none is given: ``max(2, ceil(log2 n_max))``."""
    return max(2, math.ceil(math.log2(max(2, n_max))))


@dataclass(frozen=True)
class HashFamily:
    k: int
    seed: int
    point: int
    coeffs_hi: tuple[int, ...]
    coeffs_lo: tuple[int, ...]

    def fingerprint(self, key: bytes) -> int:
        return int(self.fingerprint_many([key])[0])

    def fingerprint_many(self, keys) -> np.ndarray:
        xs = prehash_keys(list(keys), self.point)
        hi = poly_eval_many(xs, np.array(self.coeffs_hi, dtype=np.uint64))
        lo = poly_eval_many(xs, np.array(self.coeffs_lo, dtype=np.uint64))
        return ((hi & _MASK32) << np.uint64(32)) | (lo & _MASK32)


def _draw_coeffs(rng: np.random.Generator, k: int) -> tuple[int, ...]:
    coeffs = [int(x) for x in rng.integers(0, MERSENNE61, size=k, dtype=np.uint64)]
    while coeffs[0] == 0:
        coeffs[0] = int(rng.integers(1, MERSENNE61, dtype=np.uint64))
    return tuple(coeffs)


def make_family(k: int, seed: int) -> HashFamily:
    """Draw a k-wise independent family deterministically from ``seed``."""
    if k < 2:
        raise ValueError("independence degree k must be >= 2")
    rng = np.random.default_rng(seed)
    point = int(rng.integers(1, MERSENNE61, dtype=np.uint64))
    return HashFamily(k, seed, point, _draw_coeffs(rng, k), _draw_coeffs(rng, k))


def fingerprint(family: HashFamily, key: bytes) -> int:
    return family.fingerprint(key)


class CharCodec:
    """Bit-field views of ``width``-bit fingerprints with ``c``-bit characters.

    Methods accept Python ints or ``uint64`` arrays.
    """

    def __init__(self, c: int, width: int = WORD_BITS):
        if not 2 <= c <= 16:
            raise ValueError(f"character width must be in [2, 16] bits, got {c}")
        if width > WORD_BITS or width < c:
            raise ValueError(f"fingerprint width {width} unsupported")
        self.c = c
        self.width = width
        self.n_chars = width // c
        self.alphabet = 1 << c

    @classmethod
    def for_lambda(cls, lam: int, width: int = WORD_BITS) -> "CharCodec":
        if lam < 4 or lam & (lam - 1):
            raise ValueError(f"growth factor must be a power of two >= 4, got {lam}")
        return cls(lam.bit_length() - 1, width)

    def _shr(self, f, n: int):
        if isinstance(f, np.ndarray):
            if n >= 64:
                return np.zeros_like(f)
            return f >> np.uint64(n)
        return f >> n

    def _mask(self, f, nbits: int):
        if isinstance(f, np.ndarray):
            return f & np.uint64((1 << nbits) - 1)
        return f & ((1 << nbits) - 1)

    def prefix_bits(self, f, nbits: int):
        if not 0 <= nbits <= self.width:
            raise ValueError(f"prefix of {nbits} bits out of range")
        if nbits == 0:
            return np.zeros_like(f) if isinstance(f, np.ndarray) else 0
        return self._shr(f, self.width - nbits)

    def prefix(self, f, h: int):
        if not 0 <= h <= self.n_chars:
            raise ValueError(f"prefix length {h} out of range [0, {self.n_chars}]")
        return self.prefix_bits(f, h * self.c)

    def next_bits(self, f, nbits: int):
        """The ``c`` bits immediately after an ``nbits``-bit prefix."""
        if nbits + self.c > self.width:
            raise ValueError("no character follows a prefix this long")
        return self._mask(self._shr(f, self.width - nbits - self.c), self.c)

    def next_char(self, f, h: int):
        if not 0 <= h < self.n_chars:
            raise ValueError(f"no character follows a prefix of {h} characters")
        return self.next_bits(f, h * self.c)

    def char(self, f, j: int):
        return self.next_char(f, j)

    def check_char(self, f, i: int):
        """The ``i``-th character counted from the end of the character string."""
        if not 1 <= i <= self.n_chars:
            raise ValueError(f"check character index {i} out of range")
        return self.next_char(f, self.n_chars - i)

    def check_bits_start(self, i: int) -> int:
        """MSB-indexed bit position where check character ``i`` starts."""
        return (self.n_chars - i) * self.c
