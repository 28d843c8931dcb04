from __future__ import annotations

from hypothesis import given, settings, strategies as st
import pytest

from pmindex.application.services.durability_service import check_durability
from pmindex.domain.indexes.interfaces import IndexKind, Mutation
from pmindex.domain.models.pm import HookVerdict
from pmindex.infrastructure.indexes.clht import PClht
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import KeyExistsError, SimulatedCrash

ops = st.lists(
    st.tuples(st.sampled_from(["insert", "delete", "lookup"]), st.integers(1, 300), st.integers(1, 10**6)),
    max_size=250,
)


@settings(max_examples=40, deadline=None)
@given(ops)
def test_matches_dict_oracle(ops):
    idx = PClht(PmemPool(16 << 20), initial_bytes=256, chain_threshold=3)
    model: dict[int, int] = {}
    for op, key, value in ops:
        if op == "insert":
            if key in model:
                with pytest.raises(KeyExistsError):
                    idx.insert(key, value)
            else:
                idx.insert(key, value)
                model[key] = value
        elif op == "delete":
            idx.delete(key)
            model.pop(key, None)
        else:
            assert idx.lookup(key) == model.get(key)
    assert sorted(idx.items()) == sorted(model.items())
    assert idx.verify() == []


def test_insert_into_free_slot_costs_one_flush_and_two_fences():
    pool = PmemPool(16 << 20)
    idx = PClht(pool, initial_bytes=64 * 1024)
    before = pool.counters
    idx.insert(12345, 6789)
    delta = pool.counters - before
    assert (delta.clwb, delta.mfence, delta.publishes) == (1, 2, 1)


def test_lookup_writes_nothing():
    pool = PmemPool(16 << 20)
    idx = PClht(pool)
    idx.insert(7, 70)
    before = pool.counters
    assert idx.lookup(7) == 70
    assert idx.lookup(8) is None
    assert pool.counters == before


def test_delete_absent_key_is_a_no_op(make_index):
    idx = make_index(IndexKind.CLHT)
    idx.insert(1, 10)
    idx.delete(2)
    idx.delete(1)
    idx.delete(1)
    assert idx.lookup(1) is None
    idx.insert(1, 11)
    assert idx.lookup(1) == 11


def test_rehash_keeps_every_key(make_index):
    idx = make_index(IndexKind.CLHT)
    start = idx.num_buckets
    for k in range(1, 401):
        idx.insert(k, k + 1)
    assert idx.num_buckets > start
    assert idx.stats.rehashes >= 1
    assert all(idx.lookup(k) == k + 1 for k in range(1, 401))
    assert idx.verify() == []
    # old tables are handed back to the allocator
    assert not [a for a in idx.allocator.allocations() if a.tag == "clht.table" and a.addr != idx._table().addr]


def test_explicit_rehash_doubles_the_table(make_index):
    idx = make_index(IndexKind.CLHT)
    for k in range(1, 6):
        idx.insert(k, k)
    before = idx.num_buckets
    idx.rehash()
    assert idx.num_buckets == 2 * before
    assert sorted(idx.items()) == [(k, k) for k in range(1, 6)]
    assert idx.pool.scope_totals()["rehash"][0] == 1


def test_rehash_is_durable_across_restart(make_index):
    idx = make_index(IndexKind.CLHT)
    for k in range(1, 201):
        idx.insert(k, k)
    again = make_index(IndexKind.CLHT, PmemPool.from_snapshot(idx.pool.persisted_view()))
    assert again.num_buckets == idx.num_buckets
    assert sorted(again.items()) == [(k, k) for k in range(1, 201)]


@pytest.mark.parametrize("site", ["clht.lock", "clht.value", "clht.key", "clht.unlock"])
def test_crash_inside_insert_never_exposes_a_torn_pair(site, make_index):
    idx = make_index(IndexKind.CLHT, initial_bytes=64 * 1024)
    for k in range(1, 6):
        idx.insert(k, k * 100)
    idx.pool.set_crash_hook(lambda ev: HookVerdict.CRASH if ev.site == site else HookVerdict.CONTINUE)
    with pytest.raises(SimulatedCrash):
        idx.insert(99, 9900)
    again = make_index(IndexKind.CLHT, PmemPool.from_snapshot(idx.pool.persisted_view()), initial_bytes=64 * 1024)
    assert [again.lookup(k) for k in range(1, 6)] == [100, 200, 300, 400, 500]
    assert again.lookup(99) in (None, 9900)
    assert again.verify() == []
    # the crashed holder's lock is gone after restart
    again.insert(99 if again.lookup(99) is None else 98, 1)


def test_inserts_are_durable_when_acknowledged():
    pool = PmemPool(16 << 20, keep_log=True)
    idx = PClht(pool, initial_bytes=512)
    for k in range(1, 300):
        idx.insert(k * 7919, k)
    report = check_durability(pool.events, idx.volatile_words)
    assert report.passed
    assert report.ops_checked >= 299


def test_skipped_insert_persist_is_caught_by_the_durability_check():
    pool = PmemPool(16 << 20, keep_log=True)
    idx = PClht(pool, initial_bytes=64 * 1024, mutations=[Mutation.CLHT_SKIP_INSERT_PERSIST])
    for k in range(1, 20):
        idx.insert(k, k)
    report = check_durability(pool.events, idx.volatile_words)
    assert not report.passed
    assert len({op for op, _ in report.unflushed_dirty_lines}) == 19
