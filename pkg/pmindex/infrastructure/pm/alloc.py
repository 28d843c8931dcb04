from __future__ import annotations

import bisect
from collections import defaultdict
import threading
from typing import Callable, Iterable

from pmindex.domain.models.pm import (
    CACHE_LINE,
    HEADER_SIZE,
    HEADER_TAG,
    WATERMARK_OFFSET,
    WORD,
    Allocation,
    EventKind,
    PmEvent,
    ReachabilityReport,
)
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import PmFault, PoolFullError
from pmindex.settings import settings
from pmindex.utils import get_logger

logger = get_logger(__name__)

RECOVERED_TAG = "pool.recovered"
MAX_ALIGN = 4096

ChildWalker = Callable[[int, Allocation], Iterable[int]]


def _align_up(x: int, align: int) -> int:
    return (x + align - 1) & ~(align - 1)


class _Arena(threading.local):
    def __init__(self) -> None:
        self.cur = 0
        self.end = 0


class PmAllocator:
    """Bump allocator over a pool with per-thread arenas and deferred frees.

    The only persistent allocator state is the watermark word; it is raised
    and persisted before any address from the new arena is handed out, so a
    restarted pool re-scans the heap as ``[HEADER_SIZE, watermark)``.
    """

    def __init__(self, pool: PmemPool, *, arena_size: int | None = None, recycle: bool | None = None) -> None:
        self.pool = pool
        self.arena_size = _align_up(int(arena_size or settings.arena_size), CACHE_LINE)
        self.recycle = settings.alloc_recycle if recycle is None else bool(recycle)
        # re-entrant: the watermark store may fire a crash hook that allocates
        self._lock = threading.RLock()
        self._arena = _Arena()
        self._live: dict[int, Allocation] = {}
        self._starts: list[int] = []
        self._deferred: list[tuple[int, Allocation]] = []
        self._free_lists: dict[tuple[int, int], list[Allocation]] = defaultdict(list)
        self.epoch = 0
        # bumped whenever freed space is handed out again
        self.generation = 0
        self._track(Allocation(0, HEADER_SIZE, CACHE_LINE, HEADER_TAG))
        wm = pool.load8(WATERMARK_OFFSET)
        if wm == 0:
            self._watermark = HEADER_SIZE
        else:
            self._watermark = wm
            if wm > HEADER_SIZE:
                self._track(pool.log_alloc(HEADER_SIZE, wm - HEADER_SIZE, RECOVERED_TAG, CACHE_LINE))

    @property
    def watermark(self) -> int:
        return self._watermark

    # ------------------------------------------------------------------ allocation
    def _raise_watermark(self, length: int, align: int) -> int:
        # caller holds self._lock
        start = _align_up(self._watermark, max(align, CACHE_LINE))
        end = start + length
        if end > self.pool.size:
            raise PoolFullError(f"pool exhausted: need {length} bytes at {start:#x}, size {self.pool.size:#x}")
        self._watermark = end
        self.pool.store8(WATERMARK_OFFSET, end, site="alloc.watermark")
        self.pool.flush_line(WATERMARK_OFFSET)
        self.pool.fence()
        return start

    def alloc(self, length: int, align: int = WORD, tag: str = "") -> int:
        if length <= 0:
            raise PmFault(f"allocation length must be positive, got {length}")
        if align <= 0 or align & (align - 1) or align > MAX_ALIGN:
            raise PmFault(f"alignment must be a power of two <= {MAX_ALIGN}, got {align}")
        align = max(align, WORD)
        size = _align_up(length, WORD)
        addr = self._reuse(size, align)
        if addr is None:
            if size > self.arena_size // 4:
                with self._lock:
                    addr = self._raise_watermark(size, align)
            else:
                addr = self._bump(size, align)
        self._track(self.pool.log_alloc(addr, size, tag, align))
        return addr

    def _track(self, a: Allocation) -> None:
        with self._lock:
            self._live[a.addr] = a
            bisect.insort(self._starts, a.addr)

    def _bump(self, size: int, align: int) -> int:
        arena = self._arena
        addr = _align_up(arena.cur, align)
        if arena.cur == 0 or addr + size > arena.end:
            with self._lock:
                start = self._raise_watermark(self.arena_size, CACHE_LINE)
            arena.cur, arena.end = start, start + self.arena_size
            addr = _align_up(arena.cur, align)
        arena.cur = addr + size
        return addr

    def _reuse(self, size: int, align: int) -> int | None:
        if not self.recycle:
            return None
        with self._lock:
            bucket = self._free_lists.get((size, align))
            if not bucket:
                return None
            return bucket.pop().addr

    # ------------------------------------------------------------------ reclamation
    def free(self, addr: int, *, missing_ok: bool = False) -> None:
        """Defer reclamation; the region stays intact until a later quiesce.

        Regions carved out of a recovered heap are not tracked one by one;
        with ``missing_ok`` freeing them is a no-op.
        """
        with self._lock:
            a = self._live.pop(addr, None)
            if a is None:
                if missing_ok:
                    return
                raise PmFault(f"free of unknown allocation {addr:#x}")
            i = bisect.bisect_left(self._starts, addr)
            del self._starts[i]
            self._deferred.append((self.epoch, a))
        self.pool.log_free(a.addr, a.len, a.tag)

    def quiesce(self) -> int:
        """Advance the epoch; with recycling on, zero and recycle earlier frees."""
        with self._lock:
            self.epoch += 1
            ready = [a for e, a in self._deferred if e < self.epoch]
            self._deferred = [(e, a) for e, a in self._deferred if e >= self.epoch]
        if not self.recycle or not ready:
            return 0
        for a in ready:
            for off in range(0, a.len, WORD):
                if self.pool.load8(a.addr + off):
                    self.pool.store8(a.addr + off, 0, site="alloc.zero")
            for line in range(a.addr - a.addr % CACHE_LINE, a.addr + a.len, CACHE_LINE):
                self.pool.flush_line(line)
            self.pool.untrack(a.addr)
        self.pool.fence()
        with self._lock:
            for a in ready:
                self._free_lists[(a.len, a.align)].append(a)
            self.generation += 1
        logger.debug("recycled %d regions at epoch %d", len(ready), self.epoch)
        return len(ready)

    # ------------------------------------------------------------------ introspection
    def allocations(self) -> list[Allocation]:
        with self._lock:
            return [self._live[s] for s in self._starts]

    def lookup(self, addr: int) -> Allocation | None:
        with self._lock:
            return _containing(self._starts, self._live, addr)

    def reachability_report(
        self,
        roots: Iterable[int],
        walker: ChildWalker,
        allocations: Iterable[Allocation] | None = None,
    ) -> ReachabilityReport:
        """Partition allocations into reachable and leaked by walking from ``roots``.

        ``allocations`` defaults to the live set; the crash harness passes the
        allocations traced in a crashed run's log instead.
        """
        if allocations is None:
            allocs = self.allocations()
        else:
            allocs = sorted(allocations, key=lambda a: a.addr)
        by_start = {a.addr: a for a in allocs}
        starts = sorted(by_start)
        report = ReachabilityReport()
        seen: set[int] = set()
        work = list(roots)
        while work:
            addr = work.pop()
            a = _containing(starts, by_start, addr)
            if a is None:
                report.corrupt.append(addr)
                continue
            if a.addr in seen:
                continue
            seen.add(a.addr)
            report.reachable.append(a)
            work.extend(c for c in walker(addr, a) if c)
        report.leaked = [a for a in allocs if a.addr not in seen and not a.tag.startswith("pool.")]
        report.reachable.sort(key=lambda a: a.addr)
        return report


def _containing(starts: list[int], by_start: dict[int, Allocation], addr: int) -> Allocation | None:
    i = bisect.bisect_right(starts, addr) - 1
    if i < 0:
        return None
    a = by_start[starts[i]]
    return a if a.contains(addr) else None


def traced_allocations(events: Iterable[PmEvent]) -> list[Allocation]:
    """Allocations alive at the end of ``events`` (Alloc minus Free)."""
    live: dict[int, Allocation] = {}
    for ev in events:
        if ev.kind is EventKind.ALLOC:
            live[ev.addr] = Allocation(ev.addr, ev.length, WORD, ev.tag)
        elif ev.kind is EventKind.FREE:
            live.pop(ev.addr, None)
    return sorted(live.values(), key=lambda a: a.addr)
