from __future__ import annotations

import pytest

from pmindex.domain.indexes.interfaces import IndexKind
from pmindex.domain.models.keys import KeyCodec, KeyType, string_key
from pmindex.infrastructure.indexes.art import PArt
from pmindex.infrastructure.indexes.bwtree import PBwTree
from pmindex.infrastructure.indexes.clht import PClht
from pmindex.infrastructure.indexes.registry import INDEXES, index_class, open_index
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import InvalidKeyError, OpenError, SpecRejectedError


def test_registry_covers_every_kind():
    assert set(INDEXES) == set(IndexKind)
    assert index_class("clht") is PClht
    assert index_class(IndexKind.BWTREE) is PBwTree
    assert index_class("art") is PArt
    assert not PClht.ordered and PBwTree.ordered and PArt.ordered
    with pytest.raises(ValueError):
        index_class("btree")


@pytest.mark.parametrize("kind", list(IndexKind))
def test_reopen_sees_persisted_contents(kind, make_index):
    idx = make_index(kind)
    for k in range(1, 50):
        idx.insert(k, k * 10)
    restarted = PmemPool.from_snapshot(idx.pool.persisted_view())
    again = make_index(kind, restarted)
    assert [again.lookup(k) for k in range(1, 50)] == [k * 10 for k in range(1, 50)]
    assert again.verify() == []


def test_opening_with_the_wrong_index_kind_fails(make_index):
    idx = make_index(IndexKind.CLHT)
    with pytest.raises(OpenError):
        make_index(IndexKind.ART, idx.pool)


@pytest.mark.parametrize("kind", list(IndexKind))
def test_zero_key_and_zero_value_are_rejected(kind, make_index):
    idx = make_index(kind)
    with pytest.raises(InvalidKeyError):
        idx.insert(0, 1)
    with pytest.raises(InvalidKeyError):
        idx.insert(1, 0)
    with pytest.raises(InvalidKeyError):
        idx.lookup(-3)


def test_clht_rejects_string_keys_and_ranges(make_index):
    with pytest.raises(InvalidKeyError):
        make_index(IndexKind.CLHT, key_type=KeyType.STRING)
    idx = make_index(IndexKind.CLHT)
    with pytest.raises(SpecRejectedError):
        idx.range_query(1, 10)


def test_open_index_passes_constructor_kwargs():
    idx = open_index("clht", PmemPool(16 << 20), initial_bytes=1024)
    assert idx.num_buckets == 16


def test_key_codec_orders_like_bytes():
    ints = KeyCodec(KeyType.RANDINT)
    assert ints.to_bytes(1) < ints.to_bytes(256) < ints.to_bytes(ints.max_key)
    assert ints.from_words(ints.to_words(0x0102030405060708)) == 0x0102030405060708
    strings = KeyCodec(KeyType.STRING)
    a, b = string_key(5), string_key(40)
    assert len(a) == 24 and a.startswith(b"user")
    assert strings.to_words(a) < strings.to_words(b)
    assert strings.validate(b"abc") == b"abc".ljust(24, b"\x00")
    with pytest.raises(InvalidKeyError):
        strings.validate(b"\x00" * 24)
    with pytest.raises(InvalidKeyError):
        strings.validate(b"x" * 25)
