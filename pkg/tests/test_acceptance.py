"""Acceptance suite: one check per criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per criterion
is printed in the terminal summary) or directly with
``python tests/test_acceptance.py [numbers...]``.
"""
from __future__ import annotations

import math
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from emhash import bucketed_run as br  # noqa: E402
from emhash.bench import WorkloadSpec, run  # noqa: E402
from emhash.boa import Boa  # noqa: E402
from emhash.bot import Bot  # noqa: E402
from emhash.bucketed_run import bucket_of, make_entries  # noqa: E402
from emhash.fingerprint import CharCodec, make_family  # noqa: E402
from emhash.funnel import FunnelInput, funnel_merge  # noqa: E402
from emhash.queue import ruler  # noqa: E402
from emhash.routing import RefinedRoutingFilter  # noqa: E402

from conftest import make_store, random_keys  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}


def _record(n: int, ok: bool, detail: str) -> tuple[bool, str]:
    RESULTS[n] = (bool(ok), detail)
    return RESULTS[n]


def _fps(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 1 << 64, n, dtype=np.uint64)


# -- criteria -----------------------------------------------------------------


def criterion_1():
    bad, worst, runs = 0, {}, 0
    for structure in ("stlsm", "boa", "bot", "cobot"):
        t0 = time.perf_counter()
        for lam in (8, 16):
            for seed in range(10):
                rep = run(WorkloadSpec(n=100_000, ops=100_000, mix=(0, 0.5, 0.5), seed=seed),
                          structure, lam)
                bad += rep.mismatches
                runs += 1
        worst[structure] = time.perf_counter() - t0
    times = " ".join(f"{k}={v:.0f}s" for k, v in worst.items())
    return _record(1, bad == 0, f"{runs} runs, {bad} mismatches; {times}")


def criterion_2():
    s = make_store(4096, 1 << 16)
    fps = np.sort(_fps(100_000, 21))
    run_ = br.build(s, make_entries(fps, np.arange(len(fps), dtype=np.uint64)))
    rng = np.random.default_rng(22)
    probes = np.concatenate([rng.choice(fps, 5000), _fps(5000, 23)]).tolist()
    reads = []
    for f in probes:
        s.drop_cache()
        s.reset_stats()
        run_.lookup(f)
        reads.append(s.stats().block_reads)
    mean, p99 = float(np.mean(reads)), float(np.percentile(reads, 99))
    return _record(2, mean <= 2.0 and p99 <= 4, f"mean {mean:.3f} (<= 2), p99 {p99:g} (<= 4)")


def criterion_3():
    n = 1 << 20
    logn = math.ceil(math.log2(n))
    Q = n // logn
    loads = []
    for seed in range(10):
        fps = make_family(logn, seed).fingerprint_many(random_keys(n, seed=100 + seed))
        loads.append(int(np.bincount(bucket_of(fps, Q), minlength=Q).max()))
    ok = all(logn / 8 <= x <= 8 * logn for x in loads)
    return _record(3, ok, f"max loads {min(loads)}..{max(loads)} in [{logn / 8:g}, {8 * logn}]")


def criterion_4():
    n = 1 << 18
    t = Boa(make_store(4096, 1 << 20), 16, n, seed=4)
    keys = random_keys(n, 4)
    t.insert_many(keys, keys)
    t.runs_probed = t.level_probes = 0
    t.query_many(random_keys(10_000, 5, tag=1))
    per = t.runs_probed / t.level_probes
    return _record(4, per <= 2.0, f"{per:.3f} runs probed per level (<= 2)")


def _query_reads(structure: str, lam: int, n: int, M: int) -> float:
    rep = run(WorkloadSpec(n=n, ops=4000, mix=(0, 0.5, 0.5), seed=5), structure, lam, 4096, M)
    q = rep.phase("query")
    return q.reads / q.ops


def criterion_5():
    n, M = 1 << 20, 1 << 16
    boa16 = _query_reads("boa", 16, n, M)
    bound = 4 * math.log(n, 16)
    boa64, st64 = _query_reads("boa", 64, n, M), _query_reads("stlsm", 64, n, M)
    ok = boa16 <= bound and boa64 <= st64 / 8
    return _record(5, ok, f"boa lam=16 {boa16:.2f} reads/query (<= {bound:g}); lam=64 boa "
                          f"{boa64:.2f} vs stlsm {st64:.2f} (ratio {st64 / boa64:.1f} >= 8)")


def criterion_6():
    n = 1 << 20
    t = Bot(make_store(4096, 1 << 20), 16, n, seed=2)
    t.insert_many([i.to_bytes(8, "little") for i in range(n)], [b""] * n)
    full = t.levels()
    t.node_accesses = t.level_probes = 0
    t.query_many([(n + i).to_bytes(8, "little") for i in range(100_000)])
    extra = (t.node_accesses - t.level_probes) / t.level_probes
    ok = extra <= 0.25 and t.s == 3 and all(x > 0 for x in full)
    return _record(6, ok, f"root degrees {full}, {extra:.5f} extra node accesses per level (<= 0.25)")


def criterion_7():
    t = Bot(make_store(512, 1 << 16), 8, 1 << 23, seed=0)
    total = 8 ** (t.s - 1) * t.E_b
    step = 1 << 16
    for a in range(0, total, step):
        m = min(step, total - a)
        t.insert_many([i.to_bytes(4, "little") for i in range(a, a + m)], [b""] * m)
    got = {j: sorted(v) for j, v in t.merged_cols.items()}
    want = {j: [1 << ruler(j)] for j in range(1, t.s + 1)}
    return _record(7, t.s == 6 and got == want, f"s={t.s}, merged columns per level {got}")


def criterion_8():
    lam, C = 16, 1 << 16
    c = CharCodec.for_lambda(lam).c
    p_bits = (C * lam).bit_length() - 1
    f = RefinedRoutingFilter(make_store(4096, 1 << 20), p_bits, p_bits - c, c, adaptive_lam=lam)
    rng = np.random.default_rng(8)
    for _ in range(lam):
        f.insert_batch(np.sort(rng.integers(0, 1 << p_bits, C // lam, dtype=np.uint64)),
                       rng.integers(0, lam, (C // lam, 3)).astype(np.uint16))
    mean = float(f.prefix_chars().mean())
    return _record(8, mean <= 3, f"{mean:.3f} delta characters per entry (<= 3)")


def _insert_cost(structure: str, lam: int, n: int) -> float:
    rep = run(WorkloadSpec(n=n, seed=9), structure, lam, 4096, 1 << 20)
    p = rep.phase("load")
    return (p.reads + p.writes) / p.ops


def criterion_9():
    n = 1 << 20
    lams = np.array([16, 64, 256], dtype=float)
    y = np.array([_insert_cost("boa", int(x), n) for x in lams])
    X = np.stack([np.ones(3), lams / 4096], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r2 = 1 - float(((y - X @ coef) ** 2).sum() / ((y - y.mean()) ** 2).sum())
    bot8, boa8 = _insert_cost("bot", 8, n), _insert_cost("boa", 8, n)
    ok = r2 >= 0.9 and bot8 <= boa8
    costs = ", ".join(f"{int(a)}:{b:.4f}" for a, b in zip(lams, y))
    return _record(9, ok, f"boa blocks/insert {costs}, R^2 {r2:.3f} (>= 0.9); "
                          f"lam=8 bot {bot8:.4f} <= boa {boa8:.4f}")


def _funnel_job(B: int, M: int):
    K, L = 64, 1 << 18
    s = make_store(B, M)
    rng = np.random.default_rng(10)
    keys = rng.integers(0, 1 << 40, L, dtype=np.uint64)
    cuts = np.sort(rng.choice(np.arange(1, L), K - 1, replace=False))
    inputs = []
    for part in np.split(keys, cuts):
        part = np.sort(part)
        ext = s.alloc_bytes(max(1, 8 * len(part)))
        inputs.append(FunnelInput(part, ext, (np.arange(len(part), dtype=np.int64) + 1) * 8))
    s.flush()
    s.drop_cache()
    s.reset_stats()
    s.trace = []
    out = funnel_merge(s, inputs)
    s.flush()
    return keys, out, s.stats(), s.trace


def criterion_10():
    keys, out, st, trace = _funnel_job(4096, 4096 ** 2)
    _, _, _, trace_small = _funnel_job(512, 512 ** 2)
    exact = out.keys.tolist() == np.sort(keys).tolist()
    scan = len(keys) * 8 / 4096
    ratio = st.transfers / scan
    same = trace == trace_small
    return _record(10, exact and ratio <= 3 and same,
                   f"sorted {exact}, {st.transfers} IOs = {ratio:.2f}x scan (<= 3), "
                   f"traces identical {same}")


def criterion_11():
    lam, n = 16, 1 << 18
    c = CharCodec.for_lambda(lam).c
    p_bits = math.ceil(math.log2(lam * n))
    s = make_store(4096, 1 << 20)
    f = RefinedRoutingFilter(s, p_bits, p_bits - c, c, adaptive_lam=lam)
    rng = np.random.default_rng(11)
    stored = []
    for _ in range(lam):
        p = np.sort(rng.integers(0, 1 << p_bits, n // lam, dtype=np.uint64))
        f.insert_batch(p, rng.integers(0, lam, (len(p), 3)).astype(np.uint16))
        stored.append(p)
    s.flush()
    probes = np.concatenate([rng.choice(np.concatenate(stored), 5000),
                             rng.integers(0, 1 << p_bits, 5000, dtype=np.uint64)]).tolist()
    reads = []
    for x in probes:
        s.drop_cache()
        s.reset_stats()
        f.lookup(x)
        reads.append(s.stats().block_reads)
    mean = float(np.mean(reads))
    return _record(11, mean <= 3, f"{mean:.3f} block reads per lookup (<= 3)")


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    ok, detail = CRITERIA[n]()
    assert ok, f"criterion {n}: {detail}"


def report_lines() -> list[str]:
    return [f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
            for n, (ok, detail) in sorted(RESULTS.items())]


if __name__ == "__main__":
    wanted = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    for n in wanted:
        t0 = time.perf_counter()
        ok, detail = CRITERIA[n]()
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  "
              f"[{time.perf_counter() - t0:.0f}s]", flush=True)
    sys.exit(0 if all(RESULTS[n][0] for n in wanted) else 1)
