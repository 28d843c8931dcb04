from __future__ import annotations

import bisect
from collections import Counter, defaultdict
from typing import Iterable, Sequence

import numpy as np

from pmindex.application.services.workload_service import WorkloadService
from pmindex.domain.indexes.interfaces import IndexKind, Mutation, VolatileWordRule
from pmindex.domain.models.keys import KeyType
from pmindex.domain.models.pm import CACHE_LINE, WORD, Allocation, EventKind, PmEvent
from pmindex.infrastructure.indexes.registry import open_index
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.schemas.reports import DurabilityReport
from pmindex.utils import get_logger

logger = get_logger(__name__)


class _AllocMap:
    """Allocations live at a point of the log replay."""

    def __init__(self) -> None:
        self.starts: list[int] = []
        self.by_start: dict[int, Allocation] = {}

    def add(self, a: Allocation) -> None:
        if a.addr not in self.by_start:
            bisect.insort(self.starts, a.addr)
        self.by_start[a.addr] = a

    def remove(self, addr: int) -> Allocation | None:
        a = self.by_start.pop(addr, None)
        if a is not None:
            del self.starts[bisect.bisect_left(self.starts, addr)]
        return a

    def find(self, addr: int) -> Allocation | None:
        i = bisect.bisect_right(self.starts, addr) - 1
        if i < 0:
            return None
        a = self.by_start[self.starts[i]]
        return a if a.contains(addr) else None


def check_durability(
    events: Iterable[PmEvent],
    volatile_words: Sequence[VolatileWordRule] = (),
) -> DurabilityReport:
    """Replay a pool log and report lines an op dirtied but had not persisted when it returned.

    A store counts against every op open on its thread. A line becomes clean
    for a store once a flush issued after the store is followed by a fence.
    Stores outside any traced allocation, into freed regions or into words
    matched by ``volatile_words`` are not checked.
    """
    allocs = _AllocMap()
    stacks: dict[int, list[int]] = defaultdict(list)
    # line -> [(seq, addr, ops)] not yet covered by a fenced flush
    unpersisted: dict[int, list[tuple[int, int, tuple[int, ...]]]] = {}
    pending: dict[int, int] = {}
    dirty: dict[int, Counter[int]] = defaultdict(Counter)
    report = DurabilityReport()

    def _drop(line: int, keep) -> None:
        records = unpersisted.get(line)
        if not records:
            return
        left = []
        for rec in records:
            if keep(rec):
                left.append(rec)
                continue
            for op in rec[2]:
                c = dirty.get(op)
                if c is not None:
                    c[line] -= 1
                    if c[line] <= 0:
                        del c[line]
        if left:
            unpersisted[line] = left
        else:
            del unpersisted[line]

    for ev in events:
        kind = ev.kind
        if kind is EventKind.STORE:
            ops = tuple(stacks.get(ev.thread, ()))
            if not ops:
                continue
            a = allocs.find(ev.addr)
            if a is None or any(rule.matches(ev.addr, a) for rule in volatile_words):
                continue
            line = ev.addr // CACHE_LINE
            unpersisted.setdefault(line, []).append((ev.seq, ev.addr, ops))
            for op in ops:
                dirty[op][line] += 1
        elif kind is EventKind.FLUSH:
            pending[ev.addr // CACHE_LINE] = ev.seq
        elif kind is EventKind.FENCE:
            for line, fseq in pending.items():
                _drop(line, lambda rec, s=fseq: rec[0] > s)
            pending.clear()
        elif kind is EventKind.ALLOC:
            allocs.add(Allocation(ev.addr, ev.length, WORD, ev.tag))
        elif kind is EventKind.FREE:
            freed = allocs.remove(ev.addr)
            lo, hi = ev.addr, ev.addr + (freed.len if freed else ev.length)
            for line in range(lo // CACHE_LINE, (hi - 1) // CACHE_LINE + 1):
                _drop(line, lambda rec: not lo <= rec[1] < hi)
        elif kind is EventKind.OP_BEGIN:
            stacks[ev.thread].append(ev.op_id)
        elif kind is EventKind.OP_END:
            stack = stacks.get(ev.thread)
            if stack and stack[-1] == ev.op_id:
                stack.pop()
            lines = dirty.pop(ev.op_id, None)
            if ev.tag != "ok":
                continue
            report.ops_checked += 1
            if lines:
                report.unflushed_dirty_lines.extend((ev.op_id, line) for line in sorted(lines))
    return report


class DurabilityService:
    """Traced insert runs checked for acknowledgment durability."""

    def __init__(self, workloads: WorkloadService | None = None) -> None:
        self.workloads = workloads or WorkloadService()

    def trace_inserts(
        self,
        kind: IndexKind | str,
        n: int,
        *,
        seed: int = 0,
        key_type: KeyType | str = KeyType.RANDINT,
        pool_size: int | None = None,
        mutations: Iterable[Mutation] = (),
        index_kwargs: dict | None = None,
    ) -> DurabilityReport:
        pool = PmemPool(pool_size, keep_log=True)
        index = open_index(kind, pool, key_type=key_type, mutations=mutations, **(index_kwargs or {}))
        rng = np.random.default_rng(seed)
        keys = self.workloads.unique_keys(KeyType(key_type), n, rng)
        for key, value in zip(keys, self.workloads.values(rng, n)):
            index.insert(key, value)
        report = check_durability(pool.events, index.volatile_words)
        log = logger.info if report.passed else logger.warning
        log(
            "durability %s: %d ops checked, %d unflushed lines",
            IndexKind(kind).value,
            report.ops_checked,
            len(report.unflushed_dirty_lines),
        )
        return report


__all__ = ["check_durability", "DurabilityService"]
