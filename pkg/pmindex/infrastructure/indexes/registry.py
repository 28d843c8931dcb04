from __future__ import annotations

from pmindex.domain.indexes.interfaces import IndexKind
from pmindex.infrastructure.indexes.art import PArt
from pmindex.infrastructure.indexes.base import PersistentIndex
from pmindex.infrastructure.indexes.bwtree import PBwTree
from pmindex.infrastructure.indexes.clht import PClht
from pmindex.infrastructure.pm.pool import PmemPool

INDEXES: dict[IndexKind, type[PersistentIndex]] = {
    IndexKind.CLHT: PClht,
    IndexKind.BWTREE: PBwTree,
    IndexKind.ART: PArt,
}


def index_class(kind: IndexKind | str) -> type[PersistentIndex]:
    return INDEXES[IndexKind(kind)]


def open_index(kind: IndexKind | str, pool: PmemPool, **kwargs) -> PersistentIndex:
    """Create or attach the index living in ``pool``; extra kwargs go to the index constructor."""
    return index_class(kind).open(pool, **kwargs)
