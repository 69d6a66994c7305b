"""Compare the Cython kernels with the pure-Python fallback.

Times each hot kernel under both implementations, then one end-to-end
benchmark run per backend (the pure one in a subprocess with EMHASH_PURE=1).

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from emhash import _pykernels

try:
    from emhash import _ckernels
except ImportError:
    _ckernels = None


def _cases(n: int, rng: np.random.Generator):
    vals = rng.integers(0, 1 << 12, n, dtype=np.uint64)
    packed = _pykernels.pack_fixed(vals, 12)
    deltas = rng.integers(0, 1 << 10, n // 4, dtype=np.uint64)
    sketch = rng.integers(0, 16, (n // 4, 3)).astype(np.uint16)
    buf, offs = _pykernels.encode_entries(deltas, sketch, 4)
    end = int(np.asarray(offs)[-1])
    xs = rng.integers(0, _pykernels.MERSENNE61, n // 4, dtype=np.uint64)
    coeffs = rng.integers(0, _pykernels.MERSENNE61, 20, dtype=np.uint64)
    keys = [int(x).to_bytes(12, "little") for x in rng.integers(0, 1 << 62, n // 4)]
    bids = rng.integers(0, 4096, n, dtype=np.int64)

    def lru(mod):
        def go():
            c = mod.LRUCache(1024)
            c.access(bids, False, True)
        return go

    return {
        "pack_fixed": lambda m: (lambda: m.pack_fixed(vals, 12)),
        "unpack_fixed": lambda m: (lambda: m.unpack_fixed(packed, 0, 12, n)),
        "encode_entries": lambda m: (lambda: m.encode_entries(deltas, sketch, 4)),
        "decode_entries": lambda m: (lambda: m.decode_entries(buf, 0, end, 4, 3)),
        "poly_eval_many": lambda m: (lambda: m.poly_eval_many(xs, coeffs)),
        "prehash_keys": lambda m: (lambda: m.prehash_keys(keys, 0x1234567)),
        "lru_access": lru,
    }


def _best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _end_to_end(pure: bool) -> float:
    env = dict(os.environ, EMHASH_PURE="1" if pure else "0")
    code = ("import time; from emhash.bench import WorkloadSpec, run; t=time.perf_counter(); "
            "run(WorkloadSpec(n=20000, ops=20000), 'boa', 16); print(time.perf_counter()-t)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run: python setup.py build_ext --inplace",
              file=sys.stderr)
        return 1
    cases = _cases(args.n, np.random.default_rng(0))
    print(f"{'kernel':<16}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for name, make in cases.items():
        py = _best(make(_pykernels), args.repeat)
        cy = _best(make(_ckernels), args.repeat)
        print(f"{name:<16}{py:>12.4f}{cy:>12.4f}{py / cy:>9.1f}x")
    if not args.skip_end_to_end:
        py, cy = _end_to_end(True), _end_to_end(False)
        print(f"{'boa end-to-end':<16}{py:>12.2f}{cy:>12.2f}{py / cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
