from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Protocol

from pmindex.domain.models.keys import Key, KeyType
from pmindex.domain.models.pm import Allocation


class IndexKind(str, Enum):
    CLHT = "clht"
    BWTREE = "bwtree"
    ART = "art"


class Mutation(str, Enum):
    """Seeded defects used to prove the crash harness is sensitive."""

    CLHT_SKIP_INSERT_PERSIST = "clht_skip_insert_persist"
    BWTREE_SKIP_HELPER_FLUSH = "bwtree_skip_helper_flush"
    ART_DISABLE_FIX = "art_disable_fix"


class FixOutcome(str, Enum):
    CONSISTENT = "consistent"
    FIXED = "fixed"
    TRANSIENT = "transient"


@dataclass(frozen=True)
class VolatileWordRule:
    """Words excluded from the durability check.

    A word at ``addr`` inside an allocation tagged ``tag`` is volatile when
    ``(addr - allocation.addr) % stride == offset``.
    """

    tag: str
    stride: int
    offset: int

    def matches(self, addr: int, alloc: Allocation) -> bool:
        return alloc.tag == self.tag and (addr - alloc.addr) % self.stride == self.offset


@dataclass
class IndexStats:
    restarts: int = 0
    reader_restarts: int = 0
    helps: int = 0
    fixes: int = 0
    transient: int = 0
    splits: int = 0
    merges: int = 0
    consolidations: int = 0
    rehashes: int = 0
    aborted_smos: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


class IIndex(Protocol):
    kind: IndexKind
    ordered: bool
    key_type: KeyType
    stats: IndexStats
    CRASH_SITES: tuple[str, ...]
    volatile_words: tuple[VolatileWordRule, ...]

    def insert(self, key: Key, value: int) -> None:
        ...

    def lookup(self, key: Key) -> Optional[int]:
        ...

    def delete(self, key: Key) -> None:
        ...

    def range_query(self, lo: Key, hi: Key) -> list[tuple[Key, int]]:
        ...

    def verify(self) -> list[str]:
        ...

    def roots(self) -> list[int]:
        ...

    def children(self, addr: int, alloc: Allocation) -> Iterable[int]:
        ...
