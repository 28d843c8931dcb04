from __future__ import annotations

import pytest

from pmindex.domain.indexes.interfaces import IndexKind
from pmindex.domain.models.harness import CampaignConfig
from pmindex.infrastructure.indexes.registry import open_index
from pmindex.infrastructure.pm.pool import PmemPool

MiB = 1 << 20

# small structures so that splits, grows and rehashes happen within a few hundred keys
SMALL_INDEX_KWARGS = {
    IndexKind.CLHT: {"initial_bytes": 512, "chain_threshold": 3},
    IndexKind.BWTREE: {"capacity": 4096, "max_pairs": 8, "min_pairs": 2, "consolidate_depth": 4},
    IndexKind.ART: {},
}


@pytest.fixture
def pool() -> PmemPool:
    return PmemPool(16 * MiB)


@pytest.fixture
def make_index():
    """Open an index of ``kind`` over a fresh (or given) pool with small-structure defaults."""

    def _make(kind: IndexKind, pool: PmemPool | None = None, **kwargs):
        pool = pool or PmemPool(64 * MiB)
        opts = {**SMALL_INDEX_KWARGS[IndexKind(kind)], **kwargs}
        return open_index(kind, pool, **opts)

    return _make


@pytest.fixture
def campaign_config():
    def _cfg(kind: IndexKind, **overrides) -> CampaignConfig:
        base = dict(
            index=kind,
            states=4,
            load_n=60,
            test_ops=40,
            threads=2,
            seed=11,
            pool_size=64 * MiB,
            delete_fraction=0.1,
            interpose_probability=0.25,
            index_kwargs=dict(SMALL_INDEX_KWARGS[IndexKind(kind)]),
        )
        base.update(overrides)
        return CampaignConfig(**base)

    return _cfg
