from __future__ import annotations

import threading

from hypothesis import given, settings, strategies as st
import pytest

from pmindex.domain.indexes.interfaces import FixOutcome, Mutation
from pmindex.domain.models.keys import KeyType, string_key
from pmindex.domain.models.pm import HookVerdict
from pmindex.infrastructure.indexes.art import N256, PArt
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import SimulatedCrash


def key(*head: int) -> int:
    """8-byte big-endian key from its leading bytes, padded with a fixed tail."""
    tail = bytes(range(0x60, 0x68))
    return int.from_bytes(bytes(head) + tail[len(head) :], "big")


# two leaves under byte 0x01 that share four more bytes: one N4 with a 4-byte prefix
K1 = key(0x01, 0x11, 0x12, 0x13, 0x14, 0x15)
K2 = key(0x01, 0x11, 0x12, 0x13, 0x14, 0x25)
# diverges inside that prefix at byte 2
K3 = key(0x01, 0x11, 0x32)
# diverges at byte 4, below the node whose prefix K3 shortened
K4 = key(0x01, 0x11, 0x12, 0x13, 0x44)

# keys over a three-letter alphabet share long prefixes, so path splits are common
dense_keys = st.lists(st.sampled_from([0x01, 0x02, 0xFE]), min_size=8, max_size=8).map(
    lambda bs: int.from_bytes(bytes(bs), "big")
)
ops = st.lists(
    st.tuples(st.sampled_from(["insert", "insert", "delete", "lookup"]), dense_keys, st.integers(1, 10**6)),
    max_size=200,
)


def _restart(art: PArt, **kwargs) -> PArt:
    return PArt(PmemPool.from_snapshot(art.pool.persisted_view()), **kwargs)


@settings(max_examples=40, deadline=None)
@given(ops)
def test_matches_dict_oracle(ops):
    art = PArt(PmemPool(64 << 20))
    model: dict[int, int] = {}
    for op, k, value in ops:
        if op == "insert":
            art.insert(k, value)
            model[k] = value
        elif op == "delete":
            art.delete(k)
            model.pop(k, None)
        else:
            assert art.lookup(k) == model.get(k)
    assert art.items() == sorted(model.items())
    assert art.verify() == []
    assert art.inconsistent_nodes() == []


def test_random_keys_insert_scan_delete():
    art = PArt(PmemPool(64 << 20))
    keys = [(i * 0x9E3779B97F4A7C15) % (1 << 64) or 1 for i in range(1, 3001)]
    for k in keys:
        art.insert(k, k % 1000 + 1)
    assert all(art.lookup(k) == k % 1000 + 1 for k in keys)
    assert [k for k, _ in art.items()] == sorted(keys)
    lo, hi = sorted(keys)[100], sorted(keys)[200]
    assert [k for k, _ in art.range_query(lo, hi)] == sorted(keys)[100:201]
    for k in keys[::2]:
        art.delete(k)
    assert [k for k, _ in art.items()] == sorted(keys[1::2])
    assert art.verify() == []


def test_string_keys():
    art = PArt(PmemPool(64 << 20), key_type=KeyType.STRING)
    keys = [string_key(n) for n in range(0, 5000, 37)]
    for i, k in enumerate(keys):
        art.insert(k, i + 1)
    assert [k for k, _ in art.items()] == sorted(keys)
    assert art.lookup(string_key(37)) == 2
    assert art.lookup(string_key(38)) is None


def test_insert_of_existing_key_updates_value():
    art = PArt(PmemPool(16 << 20))
    art.insert(K1, 1)
    art.insert(K1, 2)
    assert art.lookup(K1) == 2
    assert len(art.items()) == 1


def _with_prefix_node() -> PArt:
    art = PArt(PmemPool(16 << 20))
    art.insert(K1, 1)
    art.insert(K2, 2)
    return art


def test_path_split_is_two_publishes():
    art = _with_prefix_node()
    before = art.pool.counters
    art.insert(K3, 3)
    assert (art.pool.counters - before).publishes == 2
    assert [art.lookup(k) for k in (K1, K2, K3)] == [1, 2, 3]
    assert art.verify() == []


def _crash_between_path_split_steps(mutations=()) -> PArt:
    art = _with_prefix_node()
    art.pool.set_crash_hook(lambda ev: HookVerdict.CRASH if ev.site == "art.prefix_update" else HookVerdict.CONTINUE)
    with pytest.raises(SimulatedCrash):
        art.insert(K3, 3)
    return _restart(art, mutations=mutations)


def test_readers_tolerate_a_stale_prefix():
    art = _crash_between_path_split_steps()
    assert len(art.inconsistent_nodes()) == 1
    assert [art.lookup(k) for k in (K1, K2, K3)] == [1, 2, 3]
    assert art.lookup(K4) is None
    assert [k for k, _ in art.items()] == sorted([K1, K2, K3])


def test_writer_fixes_the_stale_prefix_before_using_it():
    art = _crash_between_path_split_steps()
    art.insert(K4, 4)
    assert art.stats.fixes == 1
    assert art.inconsistent_nodes() == []
    assert [art.lookup(k) for k in (K1, K2, K3, K4)] == [1, 2, 3, 4]
    assert art.verify() == []


def test_detect_and_fix_directly():
    art = _crash_between_path_split_steps()
    [(node, depth)] = art.inconsistent_nodes()
    assert art.detect_and_fix(node, depth) is FixOutcome.FIXED
    assert art.detect_and_fix(node, depth) is FixOutcome.CONSISTENT
    assert art.verify() == []


def test_writer_trusting_the_stale_prefix_loses_keys():
    art = _crash_between_path_split_steps([Mutation.ART_DISABLE_FIX])
    art.insert(K4, 4)
    assert art.lookup(K4) == 4
    assert art.lookup(K1) is None


def test_writer_reaching_a_node_after_a_split_above_it_restarts_instead_of_fixing(monkeypatch):
    art = _with_prefix_node()
    find = art._find
    split_done = []

    def find_then_split(node, kind, b):
        found = find(node, kind, b)
        if not split_done and node == art.root():
            split_done.append(True)
            # another writer splits the prefix between our root lookup and our visit to the child
            art.insert(K3, 3)
        return found

    monkeypatch.setattr(art, "_find", find_then_split)
    art.insert(K4, 4)
    assert split_done
    assert art.stats.fixes == 0
    assert art.stats.transient >= 1
    assert art.inconsistent_nodes() == []
    assert art.verify() == []
    assert [art.lookup(k) for k in (K1, K2, K3, K4)] == [1, 2, 3, 4]


def test_fix_with_a_moved_link_is_transient():
    art = _with_prefix_node()
    link, node = art._find(art.root(), N256, 0x01)
    art.insert(K3, 3)
    assert art.detect_and_fix(node, 1, link) is FixOutcome.TRANSIENT
    assert art.stats.fixes == 0
    assert art.verify() == []


def test_in_progress_path_split_is_transient_not_a_crash_remnant():
    art = _with_prefix_node()
    paused, resume = threading.Event(), threading.Event()

    def hook(ev):
        if ev.site == "art.split_link" and not paused.is_set():
            paused.set()
            resume.wait(10)
        return HookVerdict.CONTINUE

    art.pool.set_crash_hook(hook)
    writer = threading.Thread(target=art.insert, args=(K3, 3))
    writer.start()
    try:
        assert paused.wait(10)
        [(node, depth)] = art.inconsistent_nodes()
        assert art.detect_and_fix(node, depth) is FixOutcome.TRANSIENT
        assert art.stats.transient == 1
        # readers are not blocked by the writer's locks
        assert art.lookup(K1) == 1 and art.lookup(K3) == 3
    finally:
        resume.set()
        writer.join(10)
    assert art.detect_and_fix(node, depth) is FixOutcome.CONSISTENT
    assert art.stats.fixes == 0
    assert art.verify() == []


def test_deleting_every_key_leaves_an_empty_root():
    art = _with_prefix_node()
    art.insert(K3, 3)
    for k in (K1, K2, K3):
        art.delete(k)
    art.delete(K4)
    assert art.items() == []
    assert art.verify() == []
    art.insert(K4, 4)
    assert art.lookup(K4) == 4
