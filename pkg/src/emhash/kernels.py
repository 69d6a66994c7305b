"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when importable; otherwise the
pure-Python ``_pykernels`` module is.  Set ``EMHASH_PURE=1`` to force the
fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("EMHASH_PURE") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

LRUCache = _impl.LRUCache
pack_fixed = _impl.pack_fixed
unpack_fixed = _impl.unpack_fixed
encode_entries = _impl.encode_entries
decode_entries = _impl.decode_entries
poly_eval_many = _impl.poly_eval_many
prehash_keys = _impl.prehash_keys
MERSENNE61 = _pykernels.MERSENNE61

__all__ = [
    "BACKEND",
    "LRUCache",
    "MERSENNE61",
    "decode_entries",
    "encode_entries",
    "pack_fixed",
    "poly_eval_many",
    "prehash_keys",
    "unpack_fixed",
]
