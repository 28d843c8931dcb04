from __future__ import annotations

from abc import ABC, abstractmethod
from contextlib import AbstractContextManager
from typing import Iterable, Optional

from pmindex.domain.indexes.interfaces import IndexKind, IndexStats, Mutation, VolatileWordRule
from pmindex.domain.models.keys import Key, KeyCodec, KeyType
from pmindex.domain.models.pm import CACHE_LINE, ROOT_OFFSET, WORD, Allocation, OpScope, magic_word
from pmindex.infrastructure.pm.alloc import PmAllocator
from pmindex.infrastructure.pm.locks import LockTable
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import OpenError, SpecRejectedError
from pmindex.utils import get_logger

logger = get_logger(__name__)


def persist(pool: PmemPool, addr: int, length: int = WORD) -> None:
    """Flush every line covering ``[addr, addr + length)`` then fence once."""
    first = addr // CACHE_LINE
    last = (addr + max(length, 1) - 1) // CACHE_LINE
    for line in range(first, last + 1):
        pool.flush_line(line * CACHE_LINE)
    pool.fence()


class PersistentIndex(ABC):
    """Shared open/attach protocol for the persistent indexes.

    Opening never replays a log or runs a recovery pass: it checks the root
    magic, resets the volatile lock table and rebuilds volatile caches only.
    """

    kind: IndexKind
    ordered: bool = False
    MAGIC: bytes = b""
    CRASH_SITES: tuple[str, ...] = ()
    volatile_words: tuple[VolatileWordRule, ...] = ()

    def __init__(
        self,
        pool: PmemPool,
        *,
        allocator: PmAllocator | None = None,
        locks: LockTable | None = None,
        key_type: KeyType | str = KeyType.RANDINT,
        mutations: Iterable[Mutation] = (),
    ) -> None:
        self.pool = pool
        self.allocator = allocator or PmAllocator(pool)
        self.locks = locks or LockTable()
        self.codec = KeyCodec(key_type)
        self.key_type = self.codec.key_type
        self.mutations = frozenset(Mutation(m) for m in mutations)
        self.stats = IndexStats()
        self.locks.reset_all()
        found = pool.load8(ROOT_OFFSET)
        if found == 0:
            self._create()
            logger.debug("created %s index", self.kind.value)
        elif found == magic_word(self.MAGIC):
            self._attach()
        else:
            raise OpenError(f"unrecognized root magic {found:#x} for {self.kind.value}")

    @classmethod
    def open(cls, pool: PmemPool, **kwargs) -> "PersistentIndex":
        return cls(pool, **kwargs)

    def _op(self, name: str) -> AbstractContextManager[OpScope]:
        return self.pool.op_scope(name)

    def _persist(self, addr: int, length: int = WORD) -> None:
        persist(self.pool, addr, length)

    def _alloc(self, length: int, tag: str, align: int = CACHE_LINE) -> int:
        return self.allocator.alloc(length, align, tag)

    def _free(self, addr: int) -> None:
        self.allocator.free(addr, missing_ok=True)

    def roots(self) -> list[int]:
        return [ROOT_OFFSET]

    # ------------------------------------------------------------------ to implement
    @abstractmethod
    def _create(self) -> None: ...

    @abstractmethod
    def _attach(self) -> None: ...

    @abstractmethod
    def insert(self, key: Key, value: int) -> None: ...

    @abstractmethod
    def lookup(self, key: Key) -> Optional[int]: ...

    @abstractmethod
    def delete(self, key: Key) -> None: ...

    @abstractmethod
    def verify(self) -> list[str]: ...

    @abstractmethod
    def children(self, addr: int, alloc: Allocation) -> Iterable[int]: ...

    def range_query(self, lo: Key, hi: Key) -> list[tuple[Key, int]]:
        raise SpecRejectedError(f"{self.kind.value} does not support range queries")
