"""Bundle-of-Trees: a fingerprint log indexed by per-level routing trees.

Level ``i`` (1..s) owns a routing tree whose root has height ``i`` and
degree below ``lam``; a height-1 node's children are log blocks of ``E_b``
entries.  A node at height ``h`` keeps one routing-list entry per
fingerprint below it: its ``p_bits(h)``-bit prefix ``P_h`` with the sketch
(child, check_h, next_h), where ``next_h`` is the character extending
``P_h`` to ``P_{h+1}`` and ``check_h`` is the h-th character from the end.

Sketch columns for heights above a fingerprint's current level wait in
character queues: level ``i``'s series ``j`` holds ``P_j`` and the columns of
heights ``j .. j + 2**ruler(j) - 1``.  Merging level ``i`` into ``i + 1``
consumes series ``i + 1``: its first column feeds the target root, the rest
are re-keyed by longer prefixes into new series.

``Cobot`` uses one-block log blocks and partial funnelsort for series merges.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .funnel import FunnelStats
from .queue import Arena, QRun, merge_series, ruler, series_columns, series_starts, write_run
from .routing import CHECK, CHILD, NEXT, RefinedRoutingFilter, RoutingNode, StructureError
from .store import Store
from .table import CapacityError, Table
from .trace import Trace

LOG_ENTRY = np.dtype([("fp", "<u8"), ("handle", "<u8")])
LOG_CHUNK_BLOCKS = 64


class BudgetError(ValueError):
    """Prefix and check characters of the top level do not fit in a fingerprint."""


def _ceil_log(x: int, base: int) -> int:
    """Smallest e >= 0 with base**e >= x."""
    e, v = 0, 1
    while v < x:
        v *= base
        e += 1
    return e


class FingerprintLog:
    """Append-only log of (fingerprint, handle) blocks of ``E_b`` entries."""

    def __init__(self, store: Store, entries_per_block: int):
        self.store = store
        self.E_b = entries_per_block
        self.block_bytes = entries_per_block * LOG_ENTRY.itemsize
        self.store_blocks = -(-self.block_bytes // store.B)
        self.per_chunk = max(1, LOG_CHUNK_BLOCKS // self.store_blocks)
        self.chunks: list[int] = []
        self.n_blocks = 0

    def _where(self, b: int) -> tuple[int, int]:
        ch, k = divmod(b, self.per_chunk)
        return self.chunks[ch], k * self.store_blocks

    def append(self, fps: np.ndarray, handles: np.ndarray) -> int:
        if len(fps) != self.E_b:
            raise ValueError("log blocks are written whole")
        if self.n_blocks % self.per_chunk == 0:
            self.chunks.append(self.store.alloc(self.per_chunk * self.store_blocks))
        b = self.n_blocks
        rec = np.empty(self.E_b, dtype=LOG_ENTRY)
        rec["fp"] = fps
        rec["handle"] = handles
        buf = np.zeros(self.store_blocks * self.store.B, dtype=np.uint8)
        buf[: self.block_bytes] = rec.view(np.uint8)
        ext, first = self._where(b)
        self.store.write_bytes(ext, first * self.store.B, buf)
        self.n_blocks += 1
        return b

    def entries(self, b: int) -> np.ndarray:
        """Uncharged view of log block ``b``."""
        ext, first = self._where(b)
        off = first * self.store.B
        return self.store.peek(ext)[off: off + self.block_bytes].view(LOG_ENTRY)

    def scan_plan(self, b: int, pos: int) -> tuple[int, list[int]]:
        """Store blocks a reverse scan reads from the end of log block ``b``
        down to the one holding entry ``pos`` (``pos = -1``: the whole block)."""
        ext, first = self._where(b)
        B = self.store.B
        last = (self.block_bytes - 1) // B
        stop = 0 if pos < 0 else pos * LOG_ENTRY.itemsize // B
        return ext, [first + k for k in range(last, stop - 1, -1)]

    def space_bytes(self) -> int:
        return len(self.chunks) * self.per_chunk * self.store_blocks * self.store.B


class Bot(Table):
    name = "bot"
    funnel = False

    def __init__(self, store: Store, lam: int, n_max: int, seed: int = 0,
                 k: int | None = None, fan_in: int | None = None):
        super().__init__(store, lam, n_max, seed, k)
        c = self.codec.c
        self.fan_in = fan_in
        self.B_e = store.B // LOG_ENTRY.itemsize
        self.s = max(1, _ceil_log(-(-n_max // self.B_e), lam))
        self.E_b = self.B_e if self.funnel else self.B_e * self.s
        self.buffer_capacity = self.E_b
        self.g = math.ceil(math.log2(lam * self.E_b))
        self.d = _ceil_log(max(1, _ceil_log(n_max, lam)), lam)
        top = (1 << (self.s.bit_length())) - 1
        while top >= 1 and self.p_bits(top) + c > c * (self.codec.n_chars - top):
            top -= 1
        if top < self.s:
            raise BudgetError(
                f"lam={lam}, n_max={n_max}, B={store.B}: {self.s} levels need "
                f"{self.p_bits(self.s) + c} prefix bits plus {self.s} check characters")
        self.h_top = top
        self.fplog = FingerprintLog(store, self.E_b)
        self.roots: list[RoutingNode | None] = [None] * (self.s + 1)
        self.queues: list[dict[int, list[QRun]]] = [defaultdict(list) for _ in range(self.s + 1)]
        self.arenas: dict[int, Arena] = {}
        self.merged_cols: dict[int, set[int]] = defaultdict(set)
        self.merge_passes: dict[int, list[int]] = defaultdict(list)
        self.funnel_stats = FunnelStats()
        self.node_accesses = 0
        self.level_probes = 0
        self.blocks_scanned = 0
        self.queue_merge_io = 0     # transfers charged inside series merges
        self.queue_bytes_written = 0

    # -- geometry -------------------------------------------------------------

    def p_bits(self, h: int) -> int:
        return h * self.codec.c + self.g

    def pivot_bits(self, h: int) -> int:
        return max(0, self.p_bits(h) - self.codec.c * self.d)

    def _prefix(self, fps, h: int):
        return self.codec.prefix_bits(fps, self.p_bits(h))

    def _next(self, fps, h: int):
        return self.codec.next_bits(fps, self.p_bits(h))

    def _check(self, fps, h: int):
        return self.codec.check_char(fps, h)

    def _columns(self, fps: np.ndarray, heights) -> np.ndarray:
        cols = []
        for h in heights:
            cols.append(self._next(fps, h))
            cols.append(self._check(fps, h))
        return np.stack(cols, axis=1).astype(np.uint16)

    def _new_node(self, h: int) -> RoutingNode:
        f = RefinedRoutingFilter(self.store, self.p_bits(h), self.pivot_bits(h), self.codec.c,
                                 adaptive_lam=self.lam)
        return RoutingNode(h, f)

    def _arena(self, j: int) -> Arena:
        a = self.arenas.get(j)
        if a is None:
            a = self.arenas[j] = Arena(self.store)
        return a

    def _add_run(self, level: int, j: int, prefixes: np.ndarray, cols: np.ndarray) -> None:
        if len(prefixes):
            run = write_run(self._arena(j), prefixes, cols, self.codec.c)
            self.queue_bytes_written += run.hi - run.lo
            self.queues[level][j].append(run)

    # -- inserts ------------------------------------------------------------

    def _flush_buffer(self, fps: np.ndarray, handles: np.ndarray) -> None:
        """Write a full log block and add it to the level-1 tree."""
        b = self.fplog.append(fps, handles)
        root = self.roots[1]
        if root is None:
            root = self.roots[1] = self._new_node(1)
        p1 = self._prefix(fps, 1)
        order = np.argsort(p1, kind="stable")
        sk = np.stack([np.full(len(fps), root.degree, dtype=np.uint64),
                       self._check(fps, 1), self._next(fps, 1)], axis=1)
        root.filter.insert_batch(p1[order], sk[order])
        root.children.append(b)
        self.merged_cols[1].add(1)
        for j in series_starts(1, self.s):
            pj = self._prefix(fps, j)
            o = np.argsort(pj, kind="stable")
            self._add_run(1, j, pj[o], self._columns(fps[o], series_columns(j, self.h_top)))
        if root.degree == self.lam:
            self.merge_level(1)

    def merge_level(self, i: int) -> None:
        """Merge level ``i``'s tree into level ``i + 1``."""
        if i >= self.s:
            raise CapacityError(f"level {i} is the last level and is full")
        c = self.codec.c
        j = i + 1
        runs = self.queues[i].pop(j, [])
        if not runs:
            raise StructureError(f"level {i} has no queued series {j}")
        before = self.store.stats().transfers
        pre, cols, passes = merge_series(self.store, runs, c, self.fan_in, self.funnel,
                                         self.funnel_stats)
        self.queue_merge_io += self.store.stats().transfers - before
        for r in runs:
            r.release()
        self.merge_passes[j].append(passes)
        heights = series_columns(j, self.h_top)
        self.merged_cols[j].add(len(heights))
        target = self.roots[j]
        if target is None:
            target = self.roots[j] = self._new_node(j)
        child = np.full(len(pre), target.degree, dtype=np.uint64)
        target.filter.insert_batch(pre, np.stack([child, cols[:, 1], cols[:, 0]], axis=1))
        old = self.roots[i]
        old.filter.freeze()
        target.children.append(old)
        self.roots[i] = None
        self._rebatch(j, pre, cols, heights)
        for jj, rs in self.queues[i].items():
            self.queues[j][jj].extend(rs)
        self.queues[i] = defaultdict(list)
        if target.degree == self.lam:
            self.merge_level(j)

    def _rebatch(self, j: int, pre: np.ndarray, cols: np.ndarray, heights: range) -> None:
        """Re-key the surplus columns of series ``j`` (heights above ``j``) by
        their longer prefixes and queue them at level ``j``."""
        c = np.uint64(self.codec.c)
        p = pre
        h = j
        for q in range(ruler(j)):
            jq = j + (1 << q)
            if jq > self.s or jq > heights.stop - 1:
                break
            while h < jq:
                p = (p << c) | cols[:, 2 * (h - j)].astype(np.uint64)
                h += 1
            lo = 2 * (jq - j)
            hi = 2 * min(jq + (1 << q) - j, len(heights))
            o = np.argsort(p, kind="stable")
            self._add_run(j, jq, p[o], cols[o, lo:hi])

    # -- queries ------------------------------------------------------------

    def _probe(self, keys, fps, active, results, trace: Trace) -> None:
        for i in range(1, self.s + 1):
            root = self.roots[i]
            if root is None:
                continue
            act = np.flatnonzero(active)
            if len(act) == 0:
                return
            self.level_probes += len(act)
            self.node_accesses += len(act)
            q, rows, blk_q, ext, blocks = root.filter.plan_many(self._prefix(fps[act], i))
            trace.add(act[blk_q], ext, blocks)
            if len(q) == 0:
                continue
            sk = root.filter.entries()[1][rows]
            ok = sk[:, CHECK] == self._check(fps[act[q]], i)
            if not ok.any():
                continue
            cuts = np.flatnonzero(np.diff(q)) + 1
            for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, len(q)]):
                if not ok[lo:hi].any():
                    continue
                qq = int(act[q[lo]])
                if active[qq]:
                    self._descend(root, sk[lo:hi].tolist(), ok[lo:hi].tolist(), qq, int(fps[qq]),
                                  keys, active, results, trace)

    def _descend(self, node: RoutingNode, sk: list, alive: list, q: int, f: int,
                 keys, active, results, trace: Trace) -> bool:
        """Visit ``node``'s candidate children newest first.

        ``sk`` holds all of the node's (child, check, next) rows for ``f``'s
        prefix, in log order; ``alive`` marks the ones not yet ruled out.  A
        child's rows whose next character extends its prefix to ours are
        exactly our rows naming that child, in the same order.  Returns True
        once the key is found.
        """
        by_child: dict[int, list[int]] = {}
        for idx, row in enumerate(sk):
            by_child.setdefault(row[CHILD], []).append(idx)
        for x in sorted(by_child, reverse=True):
            mine = by_child[x]
            if not any(alive[k] for k in mine):
                continue
            if node.height == 1:
                if self._scan_block(node.children[x], q, f, keys, active, results, trace):
                    return True
                continue
            ch = node.children[x]
            h = ch.height
            rows, reads = ch.filter.probe_rows(self._prefix(f, h))
            self.node_accesses += 1
            for e, b in reads:
                trace.add_one(q, e, b)
            nxt, chk = self._next(f, h), self._check(f, h)
            ext = [k for k, r in enumerate(rows) if r[NEXT] == nxt]
            if len(ext) != len(mine):
                raise StructureError(
                    f"height {h} node lists {len(ext)} entries under a prefix its parent "
                    f"lists {len(mine)} times")
            ok = [False] * len(rows)
            for k, m in zip(ext, mine):
                ok[k] = alive[m] and rows[k][CHECK] == chk
            if any(ok) and self._descend(ch, rows, ok, q, f, keys, active, results, trace):
                return True
        return False

    def _scan_block(self, b: int, q: int, f: int, keys, active, results, trace: Trace) -> bool:
        """Reverse-scan log block ``b``; stop at the newest entry whose key matches."""
        self.blocks_scanned += 1
        ents = self.fplog.entries(b)
        hits = np.flatnonzero(ents["fp"] == np.uint64(f))[::-1]
        read: set[int] = set()
        for pos in hits.tolist():
            ext, blocks = self.fplog.scan_plan(b, pos)
            for x in blocks:
                if x not in read:
                    trace.add_one(q, ext, x)
                    read.add(x)
            key, value = self.log.get_traced(int(ents["handle"][pos]), trace, q)
            if key == keys[q]:
                results[q] = value
                active[q] = False
                return True
        ext, blocks = self.fplog.scan_plan(b, -1)
        for x in blocks:
            if x not in read:
                trace.add_one(q, ext, x)
        return False

    # -- audits ---------------------------------------------------------------

    def levels(self) -> list[int]:
        """Root degree per level (0 when empty)."""
        return [0 if r is None else r.degree for r in self.roots[1:]]

    def audit_shape(self) -> None:
        """Check degrees and heights of every tree."""
        for i, root in enumerate(self.roots):
            if root is None:
                continue
            if root.height != i or not 0 < root.degree < self.lam:
                raise StructureError(f"level {i} root has height {root.height}, degree {root.degree}")
            for node in root.walk():
                if node is not root and node.degree != self.lam:
                    raise StructureError(f"internal node of degree {node.degree}")
                if node.height > 1 and any(ch.height != node.height - 1 for ch in node.children):
                    raise StructureError("child height mismatch")

    def queue_chars_per_fp(self) -> dict[int, float]:
        """Characters per fingerprint held by each series, over all levels."""
        chars: dict[int, int] = defaultdict(int)
        count: dict[int, int] = defaultdict(int)
        for qd in self.queues:
            for j, runs in qd.items():
                for r in runs:
                    chars[j] += r.nbits // self.codec.c
                    count[j] += r.n
        return {j: chars[j] / count[j] for j in chars if count[j]}

    def queue_io(self) -> float:
        """Queue upkeep in blocks: merge transfers plus run bytes appended."""
        return self.queue_merge_io + self.queue_bytes_written / self.store.B

    def space_bytes(self) -> int:
        total = self.fplog.space_bytes() + self.log.space_bytes()
        total += sum(a.space_bytes() for a in self.arenas.values())
        for root in self.roots:
            if root is not None:
                for node in root.walk():
                    lb, tb = node.filter.space_bits()
                    total += -(-lb // 8) + tb // 8
        return total


class Cobot(Bot):
    """Cache-oblivious variant: one-block log blocks and funnel merges."""

    name = "cobot"
    funnel = True
