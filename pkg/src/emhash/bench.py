"""Benchmark CLI: build a structure, replay a workload, check every answer
against a dict, and report amortized block transfers per operation as CSV.

Example::

    emhash-bench --structure boa,bot --lambda 8,16 --n 65536 --ops 20000 \\
        --mix 0:0.5:0.5 --out report.csv
"""
from __future__ import annotations

import argparse
import csv
import itertools
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .boa import Boa
from .bot import Bot, Cobot
from .stlsm import StLsm
from .store import Store, StoreConfig

STRUCTURES = {"stlsm": StLsm, "boa": Boa, "bot": Bot, "cobot": Cobot}
COLUMNS = ["structure", "lambda", "B", "M", "N", "phase", "ops", "blocks_read_per_op",
           "blocks_written_per_op", "mismatches", "seed", "wall_seconds"]
KEY_BYTES = 12


@dataclass(frozen=True)
class WorkloadSpec:
    n: int                      # keys loaded before the measured operations
    ops: int = 0
    mix: tuple[float, float, float] = (0.0, 0.5, 0.5)  # insert, hit query, miss query
    keys: str = "random"        # "random" or "sequential"
    seed: int = 0
    key_file: str | None = None

    def __post_init__(self):
        if len(self.mix) != 3 or min(self.mix) < 0 or abs(sum(self.mix) - 1) > 1e-9:
            raise ValueError(f"mix fractions must be non-negative and sum to 1, got {self.mix}")
        if self.keys not in ("random", "sequential"):
            raise ValueError(f"unknown key distribution {self.keys!r}")
        if self.n < 0 or self.ops < 0:
            raise ValueError("counts must be non-negative")


@dataclass
class PhaseReport:
    phase: str
    ops: int = 0
    reads: int = 0
    writes: int = 0
    mismatches: int = 0
    wall: float = 0.0


@dataclass
class RunReport:
    structure: str
    lam: int
    B: int
    M: int
    N: int
    seed: int
    phases: list[PhaseReport] = field(default_factory=list)

    @property
    def mismatches(self) -> int:
        return sum(p.mismatches for p in self.phases)

    def phase(self, name: str) -> PhaseReport:
        for p in self.phases:
            if p.phase == name:
                return p
        raise KeyError(name)

    def rows(self) -> list[dict]:
        out = []
        for p in self.phases:
            per = max(p.ops, 1)
            out.append({
                "structure": self.structure, "lambda": self.lam, "B": self.B, "M": self.M,
                "N": self.N, "phase": p.phase, "ops": p.ops,
                "blocks_read_per_op": f"{p.reads / per:.6f}",
                "blocks_written_per_op": f"{p.writes / per:.6f}",
                "mismatches": p.mismatches, "seed": self.seed,
                "wall_seconds": f"{p.wall:.3f}",
            })
        return out


def _keys(spec: WorkloadSpec, count: int, rng: np.random.Generator, tag: int) -> list[bytes]:
    """Distinct keys; ``tag`` separates the stored and the absent key spaces."""
    if spec.keys == "sequential":
        base = tag << 64
        return [(base + i).to_bytes(KEY_BYTES, "big") for i in range(count)]
    hi = rng.integers(0, 1 << 63, count, dtype=np.int64).tolist()
    lo = np.arange(count, dtype=np.int64).tolist()  # uniqueness
    return [((tag << 95) | (h << 32) | x).to_bytes(KEY_BYTES, "big") for h, x in zip(hi, lo)]


def _load_key_file(path: str, count: int) -> list[bytes]:
    out = []
    with open(path, "rb") as fh:
        for line in fh:
            line = line.rstrip(b"\r\n")
            if line:
                out.append(line)
            if len(out) == count:
                break
    if len(out) < count:
        raise ValueError(f"{path} holds {len(out)} keys, {count} needed")
    return out


def _value(key: bytes) -> bytes:
    return key[::-1]


def _measure(store: Store, fn, phase: PhaseReport) -> None:
    store.reset_stats()
    t = time.perf_counter()
    fn()
    store.flush()
    s = store.stats()
    phase.reads += s.block_reads
    phase.writes += s.block_writes
    phase.wall += time.perf_counter() - t


def run(spec: WorkloadSpec, structure: str, lam: int, block_bytes: int = 4096,
        memory_bytes: int = 1 << 20, **kwargs) -> RunReport:
    """Load ``spec.n`` keys, then run ``spec.ops`` mixed operations.

    IO counters restart at each phase and dirty blocks are flushed before a
    phase is charged, so each phase's figures cover only its own work.
    """
    cls = STRUCTURES[structure]
    rng = np.random.default_rng(spec.seed)
    n_ins = int(round(spec.ops * spec.mix[0]))
    n_hit = int(round(spec.ops * spec.mix[1]))
    n_miss = spec.ops - n_ins - n_hit
    if n_hit and spec.n + n_ins == 0:
        raise ValueError("hit queries need loaded keys")
    total = spec.n + n_ins
    if spec.key_file:
        stored = _load_key_file(spec.key_file, total)
    else:
        stored = _keys(spec, total, rng, 0)
    absent = _keys(spec, n_miss, rng, 1)
    store = Store(StoreConfig(block_bytes, memory_bytes))
    table = cls(store, lam, max(total, 1), seed=spec.seed, **kwargs)
    report = RunReport(structure, lam, block_bytes, memory_bytes, spec.n, spec.seed)
    oracle: dict[bytes, bytes] = {}

    load = PhaseReport("load", ops=spec.n)
    load_keys = stored[: spec.n]

    def do_load():
        table.insert_many(load_keys, [_value(k) for k in load_keys])

    _measure(store, do_load, load)
    oracle.update((k, _value(k)) for k in load_keys)
    report.phases.append(load)
    if spec.ops == 0:
        return report

    # op sequence: 0 insert, 1 hit, 2 miss, shuffled deterministically
    kinds = np.array([0] * n_ins + [1] * n_hit + [2] * n_miss, dtype=np.int8)
    rng.shuffle(kinds)
    ins = PhaseReport("insert")
    qry = PhaseReport("query")
    next_ins = spec.n
    miss_i = 0
    cuts = np.flatnonzero(np.diff(kinds == 0)) + 1
    for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, len(kinds)]):
        seg = kinds[lo:hi]
        if seg[0] == 0:
            ks = stored[next_ins: next_ins + len(seg)]
            next_ins += len(seg)
            _measure(store, lambda: table.insert_many(ks, [_value(k) for k in ks]), ins)
            oracle.update((k, _value(k)) for k in ks)
            ins.ops += len(seg)
            continue
        qs = []
        for kind in seg.tolist():
            if kind == 1:
                qs.append(stored[int(rng.integers(0, next_ins))])
            else:
                qs.append(absent[miss_i])
                miss_i += 1
        got: list = []
        _measure(store, lambda: got.extend(table.query_many(qs)), qry)
        qry.ops += len(qs)
        qry.mismatches += sum(g != oracle.get(k) for g, k in zip(got, qs))
    for p in (ins, qry):
        if p.ops:
            report.phases.append(p)
    return report


def sweep(grid: dict, spec_kwargs: dict, out=None) -> list[dict]:
    """Run the cross product of ``grid`` (lists of structures, lambdas, B, M,
    N and seeds) and stream CSV rows to ``out``."""
    writer = None
    if out is not None:
        writer = csv.DictWriter(out, fieldnames=COLUMNS)
        writer.writeheader()
    rows: list[dict] = []
    keys = ["structure", "lambda", "B", "M", "N", "seed"]
    for combo in itertools.product(*(grid.get(k, []) for k in keys)):
        p = dict(zip(keys, combo))
        spec = WorkloadSpec(n=p["N"], seed=p["seed"], **spec_kwargs)
        try:
            rep = run(spec, p["structure"], p["lambda"], p["B"], p["M"])
        except Exception as exc:
            if out is not None:
                out.write(f"# aborted at {p}: {type(exc).__name__}: {exc}\n")
            raise
        for row in rep.rows():
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
                out.flush()
    return rows


def _list(conv):
    def parse(text: str):
        return [conv(x) for x in text.split(",") if x]
    return parse


def _mix(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(":")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("mix is insert:hit:miss")
    s = sum(parts)
    if s <= 0:
        raise argparse.ArgumentTypeError("mix needs a positive total")
    return tuple(x / s for x in parts)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="emhash-bench", description=__doc__.split("\n\n")[0])
    ap.add_argument("--structure", type=_list(str), default=["boa"],
                    help="comma list of " + "|".join(STRUCTURES))
    ap.add_argument("--lambda", dest="lam", type=_list(int), default=[16])
    ap.add_argument("--block-bytes", type=_list(int), default=[4096])
    ap.add_argument("--memory-bytes", type=_list(int), default=[1 << 20])
    ap.add_argument("--n", type=_list(int), default=[1 << 16])
    ap.add_argument("--ops", type=int, default=10000)
    ap.add_argument("--mix", type=_mix, default=(0.0, 0.5, 0.5), help="insert:hit:miss")
    ap.add_argument("--seed", type=_list(int), default=[0])
    ap.add_argument("--key-dist", choices=["random", "sequential"], default="random")
    ap.add_argument("--keys", default=None, help="newline-delimited key file for the stored keys")
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)
    for s in args.structure:
        if s not in STRUCTURES:
            ap.error(f"unknown structure {s!r}")
    grid = {"structure": args.structure, "lambda": args.lam, "B": args.block_bytes,
            "M": args.memory_bytes, "N": args.n, "seed": args.seed}
    spec_kwargs = {"ops": args.ops, "mix": args.mix, "keys": args.key_dist, "key_file": args.keys}
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    try:
        rows = sweep(grid, spec_kwargs, out)
    except Exception as exc:
        print(f"emhash-bench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finally:
        if out is not sys.stdout:
            out.close()
    bad = sum(int(r["mismatches"]) for r in rows)
    if bad:
        print(f"emhash-bench: {bad} oracle mismatches", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
