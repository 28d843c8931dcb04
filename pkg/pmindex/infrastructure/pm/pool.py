from __future__ import annotations

import bisect
from contextlib import contextmanager
import itertools
import os
from pathlib import Path
import struct
import threading
from typing import Callable, Iterator

import numpy as np

from pmindex.domain.models.pm import (
    CACHE_LINE,
    HEADER_SIZE,
    HEADER_TAG,
    WORD,
    WORDS_PER_LINE,
    Allocation,
    CrashMode,
    CrashPolicy,
    EventKind,
    HookVerdict,
    LineState,
    OpCounters,
    OpScope,
    PmEvent,
)
from pmindex.lib.errors import PmFault, SimulatedCrash, SnapshotError
from pmindex.lib.hashing import MASK64, combine
from pmindex.settings import settings
from pmindex.utils import get_logger

logger = get_logger(__name__)

SNAPSHOT_MAGIC = b"PMPOOL01"
_SNAPSHOT_HEADER = struct.Struct("<8sQ")
_READ_CHUNK = 8 << 20

CrashHook = Callable[[PmEvent], HookVerdict]


class PoolSnapshot:
    """Immutable sparse image of a pool: word address -> non-zero value."""

    __slots__ = ("size", "words")

    def __init__(self, size: int, words: dict[int, int]) -> None:
        self.size = size
        self.words = words

    def load8(self, addr: int) -> int:
        return self.words.get(addr, 0)

    def lines(self) -> list[int]:
        return sorted({a // CACHE_LINE for a in self.words})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoolSnapshot):
            return NotImplemented
        return self.size == other.size and self.words == other.words

    def __repr__(self) -> str:
        return f"PoolSnapshot(size={self.size}, words={len(self.words)})"

    def to_file(self, path: str | Path) -> Path:
        """Write ``PMPOOL01 | u64 size | raw bytes``; zero lines are left as holes."""
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "wb") as f:
            f.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, self.size))
            f.truncate(_SNAPSHOT_HEADER.size + self.size)
            for line in self.lines():
                base = line * CACHE_LINE
                raw = np.array(
                    [self.words.get(base + i * WORD, 0) for i in range(WORDS_PER_LINE)], dtype="<u8"
                ).tobytes()
                f.seek(_SNAPSHOT_HEADER.size + base)
                f.write(raw)
        return p

    @classmethod
    def from_file(cls, path: str | Path) -> "PoolSnapshot":
        p = Path(path)
        try:
            f = open(p, "rb")
        except OSError as e:
            raise SnapshotError(f"cannot open pool file {p}: {e}") from e
        with f:
            st_size = os.fstat(f.fileno()).st_size
            if st_size < _SNAPSHOT_HEADER.size:
                raise SnapshotError(f"pool file {p} is truncated (no header)")
            magic, size = _SNAPSHOT_HEADER.unpack(f.read(_SNAPSHOT_HEADER.size))
            if magic != SNAPSHOT_MAGIC:
                raise SnapshotError(f"pool file {p} has bad magic {magic!r}")
            if size % CACHE_LINE or st_size < _SNAPSHOT_HEADER.size + size:
                raise SnapshotError(f"pool file {p} is truncated: expected {size} data bytes")
            words: dict[int, int] = {}
            for start, end in _data_regions(f.fileno(), _SNAPSHOT_HEADER.size, _SNAPSHOT_HEADER.size + size):
                _read_words(f.fileno(), start, end, words)
        return cls(size, words)


def _data_regions(fd: int, start: int, end: int) -> Iterator[tuple[int, int]]:
    """Yield file ranges that may hold data, skipping holes where the OS reports them."""
    seek_data = getattr(os, "SEEK_DATA", None)
    seek_hole = getattr(os, "SEEK_HOLE", None)
    if seek_data is None or seek_hole is None:
        yield start, end
        return
    pos = start
    while pos < end:
        try:
            data = os.lseek(fd, pos, seek_data)
        except OSError:
            return
        if data >= end:
            return
        hole = min(os.lseek(fd, data, seek_hole), end)
        # regions are block aligned relative to the file; keep word alignment of the pool
        lo = max(start, data - ((data - start) % WORD))
        yield lo, hole
        pos = hole


def _read_words(fd: int, start: int, end: int, out: dict[int, int]) -> None:
    pos = start
    while pos < end:
        n = min(_READ_CHUNK, end - pos)
        n -= n % WORD
        if n <= 0:
            break
        buf = os.pread(fd, n, pos)
        if len(buf) < n:
            raise SnapshotError("pool file ended early")
        arr = np.frombuffer(buf, dtype="<u8")
        base = pos - _SNAPSHOT_HEADER.size
        for i in np.flatnonzero(arr):
            out[base + int(i) * WORD] = int(arr[i])
        pos += n


class _ThreadState(threading.local):
    def __init__(self) -> None:
        self.counters = OpCounters()
        self.stack: list[OpScope] = []


class PmemPool:
    """Shadow persistent memory.

    Volatile and durable images are sparse word dictionaries. A flush captures
    the line's volatile contents at flush time; a fence makes every pending
    capture durable. Every mutation is appended to an ordered event log and
    stores are offered to the crash hook after they are logged.
    """

    def __init__(
        self,
        size: int | None = None,
        *,
        keep_log: bool = True,
        trace_loads: bool = False,
        trace_allocations: bool = False,
    ) -> None:
        size = int(settings.pool_size if size is None else size)
        if size < HEADER_SIZE or size % CACHE_LINE:
            raise PmFault(f"pool size must be a multiple of {CACHE_LINE} and at least {HEADER_SIZE}")
        self.size = size
        self.keep_log = keep_log
        self.trace_loads = trace_loads
        self.trace_allocations = trace_allocations
        self._lock = threading.Lock()
        self._mem: dict[int, int] = {}
        self._durable: dict[int, int] = {}
        self._pending: dict[int, tuple[int, tuple[int, ...]]] = {}
        # line -> stores not yet covered by a fenced flush, in store order
        self._unpersisted: dict[int, list[tuple[int, int, int]]] = {}
        self._seq = 0
        self._log: list[PmEvent] = []
        self._hook: CrashHook | None = None
        self._crashed = False
        self._counters = OpCounters()
        self._tls = _ThreadState()
        self._op_ids = itertools.count(1)
        self._scope_totals: dict[str, tuple[int, OpCounters]] = {}
        self._alloc_starts: list[int] = []
        self._alloc_map: dict[int, Allocation] = {}
        self.log_alloc(0, HEADER_SIZE, HEADER_TAG)

    @classmethod
    def from_snapshot(cls, snapshot: PoolSnapshot, **kwargs) -> "PmemPool":
        """Restart: volatile and durable images both equal the snapshot."""
        pool = cls(snapshot.size, **kwargs)
        pool._mem = dict(snapshot.words)
        pool._durable = dict(snapshot.words)
        return pool

    @classmethod
    def open_from_file(cls, path: str | Path, **kwargs) -> "PmemPool":
        return cls.from_snapshot(PoolSnapshot.from_file(path), **kwargs)

    # ------------------------------------------------------------------ checks
    def _check_word(self, addr: int) -> None:
        if addr < 0 or addr + WORD > self.size or addr % WORD:
            raise PmFault(f"bad word address {addr:#x} (pool size {self.size:#x})")

    def _check_value(self, value: int) -> None:
        if value < 0 or value > MASK64:
            raise PmFault(f"value {value} does not fit in a word")

    def _guard_store(self, addr: int) -> None:
        if not self.trace_allocations:
            return
        i = bisect.bisect_right(self._alloc_starts, addr) - 1
        if i < 0 or not self._alloc_map[self._alloc_starts[i]].contains(addr):
            raise PmFault(f"store to unallocated address {addr:#x}")

    def _op_id(self) -> int:
        stack = self._tls.stack
        return stack[-1].op_id if stack else 0

    def _emit(self, kind: EventKind, **fields) -> PmEvent:
        # caller holds self._lock
        self._seq += 1
        ev = PmEvent(self._seq, kind, threading.get_ident(), **fields)
        if self.keep_log:
            self._log.append(ev)
        return ev

    def _fire(self, ev: PmEvent) -> None:
        hook = self._hook
        if hook is None:
            return
        if hook(ev) is HookVerdict.CRASH:
            with self._lock:
                self._crashed = True
            logger.debug("simulated crash at seq=%d site=%s", ev.seq, ev.site)
            raise SimulatedCrash(ev)

    # ------------------------------------------------------------------ words
    def _apply_store(self, addr: int, value: int, site: str, publish: bool) -> PmEvent:
        # caller holds self._lock
        old = self._mem.get(addr, 0)
        if value:
            self._mem[addr] = value
        else:
            self._mem.pop(addr, None)
        ev = self._emit(EventKind.STORE, addr=addr, old=old, new=value, op_id=self._op_id(), site=site, publish=publish)
        self._unpersisted.setdefault(addr // CACHE_LINE, []).append((ev.seq, addr, value))
        self._counters.stores += 1
        if publish:
            self._counters.publishes += 1
        return ev

    def _count_store(self, publish: bool) -> None:
        c = self._tls.counters
        c.stores += 1
        if publish:
            c.publishes += 1

    def store8(self, addr: int, value: int, *, site: str = "", publish: bool = False) -> None:
        self._check_word(addr)
        self._check_value(value)
        with self._lock:
            if self._crashed:
                raise SimulatedCrash()
            self._guard_store(addr)
            ev = self._apply_store(addr, value, site, publish)
        self._count_store(publish)
        self._fire(ev)

    def cas8(self, addr: int, expected: int, new: int, *, site: str = "", publish: bool = False) -> bool:
        """Store-conditional. A failed compare logs nothing and fires no hook."""
        self._check_word(addr)
        self._check_value(new)
        with self._lock:
            if self._crashed:
                raise SimulatedCrash()
            if self._mem.get(addr, 0) != expected:
                return False
            self._guard_store(addr)
            ev = self._apply_store(addr, new, site, publish)
        self._count_store(publish)
        self._fire(ev)
        return True

    def load8(self, addr: int) -> int:
        self._check_word(addr)
        value = self._mem.get(addr, 0)
        if self.trace_loads:
            with self._lock:
                self._emit(EventKind.LOAD, addr=addr, new=value, op_id=self._op_id())
        return value

    def flush_line(self, addr: int) -> None:
        if addr < 0 or addr >= self.size:
            raise PmFault(f"flush of out-of-bounds address {addr:#x}")
        line = addr // CACHE_LINE
        base = line * CACHE_LINE
        with self._lock:
            if self._crashed:
                raise SimulatedCrash()
            mem = self._mem
            capture = tuple(mem.get(base + i * WORD, 0) for i in range(WORDS_PER_LINE))
            ev = self._emit(EventKind.FLUSH, addr=base, op_id=self._op_id())
            self._pending[line] = (ev.seq, capture)
            self._counters.clwb += 1
        self._tls.counters.clwb += 1

    def fence(self) -> None:
        with self._lock:
            if self._crashed:
                raise SimulatedCrash()
            durable = self._durable
            for line, (cseq, capture) in self._pending.items():
                base = line * CACHE_LINE
                for i, v in enumerate(capture):
                    a = base + i * WORD
                    if v:
                        durable[a] = v
                    else:
                        durable.pop(a, None)
                left = self._unpersisted.get(line)
                if left is not None:
                    left = [s for s in left if s[0] > cseq]
                    if left:
                        self._unpersisted[line] = left
                    else:
                        del self._unpersisted[line]
            self._pending.clear()
            self._emit(EventKind.FENCE, op_id=self._op_id())
            self._counters.mfence += 1
        self._tls.counters.mfence += 1

    # ------------------------------------------------------------------ crash views
    def set_crash_hook(self, hook: CrashHook | None) -> None:
        self._hook = hook

    @property
    def crashed(self) -> bool:
        return self._crashed

    def persisted_view(self, policy: CrashPolicy | None = None) -> PoolSnapshot:
        policy = policy or CrashPolicy.strict()
        with self._lock:
            words = dict(self._durable)
            if policy.mode is CrashMode.ADVERSARIAL:
                for stores in self._unpersisted.values():
                    # a line is written back as a whole at some instant: a store-order prefix survives
                    for seq, addr, value in stores:
                        if not combine(policy.seed, seq, addr) & 1:
                            break
                        if value:
                            words[addr] = value
                        else:
                            words.pop(addr, None)
        return PoolSnapshot(self.size, words)

    def snapshot_to_file(self, path: str | Path, policy: CrashPolicy | None = None) -> Path:
        return self.persisted_view(policy).to_file(path)

    def line_state(self, addr: int) -> LineState:
        line = addr // CACHE_LINE
        base = line * CACHE_LINE
        with self._lock:
            mask = 0
            for i in range(WORDS_PER_LINE):
                a = base + i * WORD
                if self._mem.get(a, 0) != self._durable.get(a, 0):
                    mask |= 1 << i
            return LineState(line, mask, line in self._pending)

    def durable_load8(self, addr: int) -> int:
        self._check_word(addr)
        return self._durable.get(addr, 0)

    # ------------------------------------------------------------------ log / allocations
    @property
    def events(self) -> list[PmEvent]:
        return self._log

    @property
    def seq(self) -> int:
        return self._seq

    def log_alloc(self, addr: int, length: int, tag: str, align: int = WORD) -> Allocation:
        alloc = Allocation(addr, length, align, tag)
        with self._lock:
            self._emit(EventKind.ALLOC, addr=addr, length=length, tag=tag, op_id=self._op_id())
            if self.trace_allocations:
                bisect.insort(self._alloc_starts, addr)
                self._alloc_map[addr] = alloc
        return alloc

    def log_free(self, addr: int, length: int, tag: str) -> None:
        with self._lock:
            self._emit(EventKind.FREE, addr=addr, length=length, tag=tag, op_id=self._op_id())

    def untrack(self, addr: int) -> None:
        with self._lock:
            if self._alloc_map.pop(addr, None) is not None:
                i = bisect.bisect_left(self._alloc_starts, addr)
                del self._alloc_starts[i]

    # ------------------------------------------------------------------ op scopes / counters
    @property
    def counters(self) -> OpCounters:
        with self._lock:
            return self._counters.copy()

    def begin_op(self, name: str = "op", op_id: int | None = None) -> OpScope:
        tls = self._tls
        oid = op_id if op_id is not None else next(self._op_ids)
        with self._lock:
            self._emit(EventKind.OP_BEGIN, op_id=oid, site=name)
        scope = OpScope(oid, name, len(tls.stack), tls.counters.copy())
        tls.stack.append(scope)
        return scope

    def end_op(self, scope: OpScope, *, ok: bool = True) -> OpCounters:
        stack = self._tls.stack
        if not stack or stack[-1] is not scope:
            raise PmFault(f"unbalanced op scope {scope.name}#{scope.op_id}")
        stack.pop()
        delta = self._tls.counters - scope.start
        scope.delta = delta
        with self._lock:
            self._emit(EventKind.OP_END, op_id=scope.op_id, site=scope.name, tag="ok" if ok else "error")
            if scope.depth == 0:
                n, total = self._scope_totals.get(scope.name, (0, OpCounters()))
                self._scope_totals[scope.name] = (n + 1, total + delta)
        return delta

    def _abandon_op(self, scope: OpScope) -> None:
        stack = self._tls.stack
        if stack and stack[-1] is scope:
            stack.pop()
        scope.delta = self._tls.counters - scope.start

    @contextmanager
    def op_scope(self, name: str = "op", op_id: int | None = None) -> Iterator[OpScope]:
        scope = self.begin_op(name, op_id)
        try:
            yield scope
        except SimulatedCrash:
            # no OpEnd: the operation never returned
            self._abandon_op(scope)
            raise
        except BaseException:
            self.end_op(scope, ok=False)
            raise
        else:
            self.end_op(scope)

    def scope_totals(self) -> dict[str, tuple[int, OpCounters]]:
        with self._lock:
            return {k: (n, c.copy()) for k, (n, c) in self._scope_totals.items()}

    def reset_scope_totals(self) -> None:
        with self._lock:
            self._scope_totals.clear()
