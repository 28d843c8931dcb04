from __future__ import annotations

import pytest

from pmindex.application.services.durability_service import DurabilityService, check_durability
from pmindex.domain.indexes.interfaces import IndexKind, Mutation, VolatileWordRule
from pmindex.domain.models.keys import KeyType
from pmindex.domain.models.pm import CACHE_LINE
from pmindex.infrastructure.pm.alloc import PmAllocator
from pmindex.infrastructure.pm.pool import PmemPool

SMALL = {
    IndexKind.CLHT: {"initial_bytes": 512},
    IndexKind.BWTREE: {"capacity": 4096, "max_pairs": 8, "consolidate_depth": 4},
    IndexKind.ART: {},
}


@pytest.fixture
def traced():
    pool = PmemPool(16 << 20, keep_log=True)
    alloc = PmAllocator(pool, arena_size=4096)
    return pool, alloc


def test_persisted_store_is_clean(traced):
    pool, alloc = traced
    a = alloc.alloc(CACHE_LINE, CACHE_LINE, "obj")
    with pool.op_scope("w"):
        pool.store8(a, 5)
        pool.flush_line(a)
        pool.fence()
    report = check_durability(pool.events)
    assert report.passed and report.ops_checked == 1


def test_unflushed_store_is_reported_against_its_op(traced):
    pool, alloc = traced
    a = alloc.alloc(CACHE_LINE, CACHE_LINE, "obj")
    with pool.op_scope("w") as scope:
        pool.store8(a + 8, 5)
    report = check_durability(pool.events)
    assert report.unflushed_dirty_lines == [(scope.op_id, a // CACHE_LINE)]


def test_flush_without_fence_is_not_enough(traced):
    pool, alloc = traced
    a = alloc.alloc(CACHE_LINE, CACHE_LINE, "obj")
    with pool.op_scope("w"):
        pool.store8(a, 5)
        pool.flush_line(a)
    assert not check_durability(pool.events).passed


def test_store_after_flush_needs_another_flush(traced):
    pool, alloc = traced
    a = alloc.alloc(CACHE_LINE, CACHE_LINE, "obj")
    with pool.op_scope("w"):
        pool.store8(a, 5)
        pool.flush_line(a)
        pool.store8(a + 8, 6)
        pool.fence()
    assert len(check_durability(pool.events).unflushed_dirty_lines) == 1


def test_volatile_words_are_ignored(traced):
    pool, alloc = traced
    a = alloc.alloc(2 * CACHE_LINE, CACHE_LINE, "buckets")
    with pool.op_scope("w"):
        pool.store8(a, 1)
        pool.store8(a + CACHE_LINE, 1)
    rule = VolatileWordRule("buckets", CACHE_LINE, 0)
    assert check_durability(pool.events, [rule]).passed
    assert not check_durability(pool.events, [VolatileWordRule("other", CACHE_LINE, 0)]).passed


def test_stores_into_freed_or_untracked_memory_are_ignored(traced):
    pool, alloc = traced
    a = alloc.alloc(CACHE_LINE, CACHE_LINE, "obj")
    with pool.op_scope("w"):
        pool.store8(a, 1)
        alloc.free(a)
        pool.store8(pool.size - CACHE_LINE, 1)
    assert check_durability(pool.events).passed


def test_failed_ops_are_not_checked(traced):
    pool, alloc = traced
    a = alloc.alloc(CACHE_LINE, CACHE_LINE, "obj")
    with pytest.raises(RuntimeError):
        with pool.op_scope("w"):
            pool.store8(a, 1)
            raise RuntimeError("boom")
    report = check_durability(pool.events)
    assert report.passed and report.ops_checked == 0


def test_nested_op_dirt_counts_against_the_outer_op(traced):
    pool, alloc = traced
    a = alloc.alloc(CACHE_LINE, CACHE_LINE, "obj")
    with pool.op_scope("outer") as outer:
        with pool.op_scope("inner") as inner:
            pool.store8(a, 1)
            pool.flush_line(a)
            pool.fence()
        pool.store8(a + 8, 2)
    report = check_durability(pool.events)
    assert report.unflushed_dirty_lines == [(outer.op_id, a // CACHE_LINE)]
    assert inner.op_id not in {op for op, _ in report.unflushed_dirty_lines}


@pytest.mark.parametrize("kind", list(IndexKind))
def test_every_index_persists_what_its_inserts_dirty(kind):
    report = DurabilityService().trace_inserts(kind, 400, seed=3, index_kwargs=SMALL[kind])
    assert report.passed, report.unflushed_dirty_lines[:5]
    assert report.ops_checked >= 400


@pytest.mark.parametrize("kind", [IndexKind.BWTREE, IndexKind.ART])
def test_string_key_inserts_are_durable(kind):
    report = DurabilityService().trace_inserts(kind, 200, key_type=KeyType.STRING, index_kwargs=SMALL[kind])
    assert report.passed


def test_clht_mutation_fails_the_trace():
    report = DurabilityService().trace_inserts(
        IndexKind.CLHT, 100, mutations=[Mutation.CLHT_SKIP_INSERT_PERSIST], index_kwargs={"initial_bytes": 1 << 16}
    )
    assert not report.passed
