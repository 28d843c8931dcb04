from __future__ import annotations

from contextlib import contextmanager
import threading
from typing import Iterable, Iterator, NamedTuple, Optional

from pmindex.domain.indexes.interfaces import IndexKind, Mutation, VolatileWordRule
from pmindex.domain.models.keys import Key, KeyType, validate_value
from pmindex.domain.models.pm import CACHE_LINE, HEADER_TAG, ROOT_OFFSET, WORD, Allocation, magic_word
from pmindex.infrastructure.indexes.base import PersistentIndex
from pmindex.lib.errors import InvalidKeyError, KeyExistsError, PoolFullError
from pmindex.lib.hashing import mix64
from pmindex.settings import settings
from pmindex.utils import get_logger

logger = get_logger(__name__)

# bucket layout: one cache line
B_LOCK = 0
B_KEYS = 8
B_VALS = 32
B_NEXT = 56
SLOTS = 3

ROOT_TABLE = ROOT_OFFSET + WORD

TABLE_TAG = "clht.table"
BUCKETS_TAG = "clht.buckets"
CHAIN_TAG = "clht.bucket"


class _Table(NamedTuple):
    addr: int
    num_buckets: int
    buckets: int
    seed: int


def _pow2_at_least(n: int) -> int:
    p = 1
    while p < n:
        p <<= 1
    return p


class PClht(PersistentIndex):
    """Persistent cache-line hash table.

    Each update commits with one atomic 8-byte key store. Rehash builds a new
    table off to the side and commits it with one root-link swap.
    """

    kind = IndexKind.CLHT
    ordered = False
    MAGIC = b"PCLHT001"
    CRASH_SITES = (
        "clht.lock",
        "clht.value",
        "clht.key",
        "clht.unlock",
        "clht.delete_key",
        "clht.chain_value",
        "clht.chain_key",
        "clht.chain_link",
        "clht.rehash_copy",
        "clht.table_init",
        "clht.root_swap",
    )
    volatile_words = (
        VolatileWordRule(BUCKETS_TAG, CACHE_LINE, B_LOCK),
        VolatileWordRule(CHAIN_TAG, CACHE_LINE, B_LOCK),
    )

    def __init__(
        self,
        pool,
        *,
        initial_bytes: int | None = None,
        chain_threshold: int | None = None,
        hash_seed: int | None = None,
        **kwargs,
    ) -> None:
        if KeyType(kwargs.get("key_type", KeyType.RANDINT)) is not KeyType.RANDINT:
            raise InvalidKeyError("P-CLHT stores 8-byte integer keys only")
        self.initial_bytes = int(initial_bytes or settings.clht_initial_bytes)
        self.chain_threshold = max(2, int(chain_threshold or settings.clht_chain_threshold))
        self.hash_seed = settings.clht_hash_seed if hash_seed is None else int(hash_seed)
        self._resize_lock = threading.Lock()
        super().__init__(pool, **kwargs)

    # ------------------------------------------------------------------ open
    def _create(self) -> None:
        n = _pow2_at_least(max(1, self.initial_bytes // CACHE_LINE))
        table = self._new_table(n)
        self.pool.store8(ROOT_TABLE, table.addr, site="clht.table_init")
        self.pool.store8(ROOT_OFFSET, magic_word(self.MAGIC), site="clht.table_init")
        self._persist(ROOT_OFFSET, 2 * WORD)

    def _attach(self) -> None:
        # in-bucket lock words are volatile state that happens to live in PM
        t = self._table()
        for i in range(t.num_buckets):
            head = t.buckets + i * CACHE_LINE
            if self.pool.load8(head + B_LOCK):
                self.pool.store8(head + B_LOCK, 0, site="clht.lock_reset")

    def _new_table(self, num_buckets: int) -> _Table:
        header = self._alloc(CACHE_LINE, TABLE_TAG)
        try:
            buckets = self._alloc(num_buckets * CACHE_LINE, BUCKETS_TAG)
        except PoolFullError:
            self.allocator.free(header)
            raise
        self.pool.store8(header, num_buckets, site="clht.table_init")
        self.pool.store8(header + WORD, buckets, site="clht.table_init")
        self.pool.store8(header + 2 * WORD, self.hash_seed & ((1 << 64) - 1) or 1, site="clht.table_init")
        self._persist(header, 3 * WORD)
        return _Table(header, num_buckets, buckets, self.pool.load8(header + 2 * WORD))

    def _table(self) -> _Table:
        load = self.pool.load8
        addr = load(ROOT_TABLE)
        return _Table(addr, load(addr), load(addr + WORD), load(addr + 2 * WORD))

    def _head(self, t: _Table, key: int) -> int:
        return t.buckets + (mix64(key, t.seed) & (t.num_buckets - 1)) * CACHE_LINE

    # ------------------------------------------------------------------ locking
    def _lock_head(self, key: int) -> tuple[_Table, int]:
        while True:
            t = self._table()
            head = self._head(t, key)
            self.locks.lock(head)
            if self.pool.load8(ROOT_TABLE) == t.addr:
                return t, head
            # table swapped while we waited
            self.locks.unlock(head)
            self.stats.restarts += 1

    def _release(self, head: int) -> None:
        self.pool.store8(head + B_LOCK, 0, site="clht.unlock")
        self.locks.unlock(head)

    @contextmanager
    def _bucket_locked(self, key: int) -> Iterator[tuple[_Table, int]]:
        t, head = self._lock_head(key)
        try:
            self.pool.store8(head + B_LOCK, 1, site="clht.lock")
            yield t, head
        except Exception:
            self._release(head)
            raise
        # a simulated crash skips this: no cleanup on the way out
        self._release(head)

    # ------------------------------------------------------------------ operations
    def insert(self, key: Key, value: int) -> None:
        key = self.codec.validate(key)
        validate_value(value)
        with self._op("insert"):
            grown_from = self._insert(int(key), value)
            if grown_from is not None:
                self._rehash(grown_from)

    def _insert(self, key: int, value: int) -> Optional[int]:
        pool = self.pool
        load = pool.load8
        with self._bucket_locked(key) as (t, head):
            free_slot: tuple[int, int] | None = None
            b, last, chain = head, head, 0
            while b:
                chain += 1
                for i in range(SLOTS):
                    k = load(b + B_KEYS + i * WORD)
                    if k == key:
                        raise KeyExistsError(f"key {key} already present")
                    if k == 0 and free_slot is None:
                        free_slot = (b, i)
                last, b = b, load(b + B_NEXT)
            if free_slot is not None:
                b, i = free_slot
                pool.store8(b + B_VALS + i * WORD, value, site="clht.value")
                pool.fence()
                pool.store8(b + B_KEYS + i * WORD, key, site="clht.key", publish=True)
                if Mutation.CLHT_SKIP_INSERT_PERSIST not in self.mutations:
                    pool.flush_line(b)
                    pool.fence()
                return None
            nb = self._alloc(CACHE_LINE, CHAIN_TAG)
            pool.store8(nb + B_VALS, value, site="clht.chain_value")
            pool.store8(nb + B_KEYS, key, site="clht.chain_key")
            self._persist(nb, CACHE_LINE)
            pool.store8(last + B_NEXT, nb, site="clht.chain_link", publish=True)
            self._persist(last + B_NEXT)
            if chain + 1 >= self.chain_threshold:
                return t.num_buckets
            return None

    def lookup(self, key: Key) -> Optional[int]:
        key = int(self.codec.validate(key))
        load = self.pool.load8
        with self._op("lookup"):
            b = self._head(self._table(), key)
            while b:
                for i in range(SLOTS):
                    ka = b + B_KEYS + i * WORD
                    if load(ka) == key:
                        v = load(b + B_VALS + i * WORD)
                        # second key read: the pair is only valid if the key did not change under us
                        if load(ka) == key:
                            return v
                b = load(b + B_NEXT)
            return None

    def delete(self, key: Key) -> None:
        key = int(self.codec.validate(key))
        load = self.pool.load8
        with self._op("delete"), self._bucket_locked(key) as (_, head):
            b = head
            while b:
                for i in range(SLOTS):
                    ka = b + B_KEYS + i * WORD
                    if load(ka) == key:
                        self.pool.store8(ka, 0, site="clht.delete_key", publish=True)
                        self._persist(ka)
                        return
                b = load(b + B_NEXT)

    # ------------------------------------------------------------------ rehash
    def rehash(self) -> None:
        """Double the table now instead of waiting for a long chain."""
        self._rehash(self._table().num_buckets)

    def _rehash(self, observed_buckets: int) -> None:
        with self._resize_lock:
            old = self._table()
            if old.num_buckets != observed_buckets:
                return
            heads = [old.buckets + i * CACHE_LINE for i in range(old.num_buckets)]
            for h in heads:
                self.locks.lock(h)
            try:
                with self._op("rehash"):
                    self._rehash_locked(old)
            except Exception:
                for h in heads:
                    self.locks.unlock(h)
                raise
            for h in heads:
                self.locks.unlock(h)

    def _rehash_locked(self, old: _Table) -> None:
        pool = self.pool
        load = pool.load8
        allocated: list[int] = []
        try:
            new = self._new_table(old.num_buckets * 2)
            allocated += [new.addr, new.buckets]
            old_chain: list[int] = []
            for i in range(old.num_buckets):
                b = old.buckets + i * CACHE_LINE
                while b:
                    for s in range(SLOTS):
                        k = load(b + B_KEYS + s * WORD)
                        if k:
                            allocated += self._copy_pair(new, k, load(b + B_VALS + s * WORD))
                    b = load(b + B_NEXT)
                    if b:
                        old_chain.append(b)
        except PoolFullError as e:
            logger.warning("rehash of %d buckets aborted: %s", old.num_buckets, e)
            self.stats.aborted_smos += 1
            for a in allocated:
                self._free(a)
            return
        for line in range(new.buckets, new.buckets + new.num_buckets * CACHE_LINE, CACHE_LINE):
            pool.flush_line(line)
        for a in allocated[2:]:
            pool.flush_line(a)
        pool.fence()
        pool.store8(ROOT_TABLE, new.addr, site="clht.root_swap", publish=True)
        self._persist(ROOT_TABLE)
        for a in [old.addr, old.buckets, *old_chain]:
            self._free(a)
        self.stats.rehashes += 1
        logger.debug("rehashed %d -> %d buckets", old.num_buckets, new.num_buckets)

    def _copy_pair(self, t: _Table, key: int, value: int) -> list[int]:
        pool = self.pool
        load = pool.load8
        b = self._head(t, key)
        last = b
        while b:
            for i in range(SLOTS):
                if load(b + B_KEYS + i * WORD) == 0:
                    pool.store8(b + B_VALS + i * WORD, value, site="clht.rehash_copy")
                    pool.store8(b + B_KEYS + i * WORD, key, site="clht.rehash_copy")
                    return []
            last, b = b, load(b + B_NEXT)
        nb = self._alloc(CACHE_LINE, CHAIN_TAG)
        pool.store8(nb + B_VALS, value, site="clht.rehash_copy")
        pool.store8(nb + B_KEYS, key, site="clht.rehash_copy")
        pool.store8(last + B_NEXT, nb, site="clht.rehash_copy")
        return [nb]

    # ------------------------------------------------------------------ introspection
    @property
    def num_buckets(self) -> int:
        return self._table().num_buckets

    def items(self) -> list[tuple[int, int]]:
        load = self.pool.load8
        t = self._table()
        out = []
        for i in range(t.num_buckets):
            b = t.buckets + i * CACHE_LINE
            while b:
                for s in range(SLOTS):
                    k = load(b + B_KEYS + s * WORD)
                    if k:
                        out.append((k, load(b + B_VALS + s * WORD)))
                b = load(b + B_NEXT)
        return out

    def verify(self) -> list[str]:
        load = self.pool.load8
        problems: list[str] = []
        t = self._table()
        if t.num_buckets == 0 or t.num_buckets & (t.num_buckets - 1):
            return [f"bucket count {t.num_buckets} is not a power of two"]
        seen: set[int] = set()
        for i in range(t.num_buckets):
            head = t.buckets + i * CACHE_LINE
            if load(head + B_LOCK) and not self.locks.is_locked(head):
                problems.append(f"bucket {i}: lock word set without a holder")
            b, visited = head, set()
            while b:
                if b in visited:
                    problems.append(f"bucket {i}: chain cycle at {b:#x}")
                    break
                visited.add(b)
                for s in range(SLOTS):
                    k = load(b + B_KEYS + s * WORD)
                    if not k:
                        continue
                    if self._head(t, k) != head:
                        problems.append(f"key {k} stored in wrong bucket {i}")
                    if k in seen:
                        problems.append(f"duplicate key {k}")
                    if load(b + B_VALS + s * WORD) == 0:
                        problems.append(f"key {k} has a zero value")
                    seen.add(k)
                b = load(b + B_NEXT)
        return problems

    def children(self, addr: int, alloc: Allocation) -> Iterable[int]:
        load = self.pool.load8
        if alloc.tag == HEADER_TAG:
            return [load(ROOT_TABLE)]
        if alloc.tag == TABLE_TAG:
            return [load(alloc.addr + WORD)]
        if alloc.tag in (BUCKETS_TAG, CHAIN_TAG):
            return [load(b + B_NEXT) for b in range(alloc.addr, alloc.end, CACHE_LINE)]
        return []
