"""Size-tiered LSM baseline over bucketed runs.

Level ``l`` (1-based) holds fewer than ``lam`` runs of ``B_e * lam**(l-1)``
entries, ``B_e = B // 24``.  A full buffer becomes a level-1 run; a level
reaching ``lam`` runs is merged into one run on the next level.  Queries
probe every run, newest first.
"""
from __future__ import annotations

import numpy as np

from . import bucketed_run as br
from .bucketed_run import ENTRY_BYTES, BucketedRun
from .store import Store
from .table import Table, sorted_newest_first
from .trace import Trace


class StLsm(Table):
    name = "stlsm"

    def __init__(self, store: Store, lam: int, n_max: int, seed: int = 0,
                 k: int | None = None, fan_in: int | None = None):
        super().__init__(store, lam, n_max, seed, k)
        self.entries_per_block = store.B // ENTRY_BYTES
        self.buffer_capacity = self.entries_per_block
        self.fan_in = fan_in
        self.levels: list[list[BucketedRun]] = []
        self.runs_probed = 0
        self.level_probes = 0

    def run_entries(self, li: int) -> int:
        """Entries per run at 0-based level ``li``."""
        return self.entries_per_block * self.lam ** li

    # -- structure maintenance ---------------------------------------------

    def _flush_buffer(self, fps: np.ndarray, handles: np.ndarray) -> None:
        order = sorted_newest_first(fps, handles)
        self._push_run(0, br.make_entries(fps[order], handles[order]), None)

    def _push_run(self, li: int, entries: np.ndarray, staged: int | None) -> None:
        while len(self.levels) <= li:
            self.levels.append([])
        entries = self._annotate(li, entries, len(self.levels[li]) + 1)
        run = br.build(self.store, entries, staged=staged)
        self.levels[li].append(run)
        if len(self.levels[li]) == self.lam:
            self.merge_level(li)

    def _annotate(self, li: int, entries: np.ndarray, run_index: int) -> np.ndarray:
        return entries

    def _level_emptied(self, li: int) -> None:
        pass

    def merge_level(self, li: int) -> None:
        """Merge the runs of 0-based level ``li`` into one run on ``li + 1``."""
        runs = self.levels[li]
        res = br.merge(self.store, runs, self.fan_in)
        for r in runs:
            self.store.free(r.extent)
        self.levels[li] = []
        self._level_emptied(li)
        self._push_run(li + 1, res.entries, res.staged)

    # -- queries ------------------------------------------------------------

    def _probe(self, keys, fps, active, results, trace: Trace) -> None:
        for level in self.levels:
            if not level:
                continue
            act = np.flatnonzero(active)
            if len(act) == 0:
                return
            self.level_probes += len(act)
            for run in reversed(level):
                act = np.flatnonzero(active)
                if len(act) == 0:
                    return
                self.runs_probed += len(act)
                mq, found, bq, blocks = run.plan_many(fps[act])
                trace.add(act[bq], run.extent, blocks)
                self._verify_found(act, mq, found, keys, active, results, trace)

    def _verify_found(self, act, mq, found, keys, active, results, trace) -> None:
        if len(mq) == 0:
            return
        cuts = np.flatnonzero(np.diff(mq)) + 1
        for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, len(mq)]):
            q = int(act[mq[lo]])
            if active[q]:
                self._verify(q, found["handle"][lo:hi], keys, active, results, trace)

    def space_bytes(self) -> int:
        return sum(r.space_bytes() for lvl in self.levels for r in lvl) + self.log.space_bytes()

    def run_counts(self) -> list[int]:
        return [len(lvl) for lvl in self.levels]
