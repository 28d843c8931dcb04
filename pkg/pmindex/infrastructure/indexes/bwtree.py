from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Optional

from pmindex.domain.indexes.interfaces import IndexKind, Mutation
from pmindex.domain.models.keys import Key, validate_value
from pmindex.domain.models.pm import CACHE_LINE, HEADER_TAG, ROOT_OFFSET, WORD, Allocation, magic_word
from pmindex.infrastructure.indexes.base import PersistentIndex
from pmindex.lib.cache import DecodeCache
from pmindex.lib.errors import CorruptionError, OpenError, PoolFullError
from pmindex.settings import settings
from pmindex.utils import get_logger

logger = get_logger(__name__)

# root record words
R_TABLE = ROOT_OFFSET + WORD
R_ROOT_SLOT = ROOT_OFFSET + 2 * WORD
R_KEY_WORDS = ROOT_OFFSET + 3 * WORD
R_NEXT_ID = ROOT_OFFSET + 4 * WORD
R_CAPACITY = ROOT_OFFSET + 5 * WORD

ROOT_SLOT = 0
FIRST_NODE_ID = 1

# record types (low 7 bits of word 0); deltas carry LEAF_BIT
BASE_LEAF = 1
BASE_INNER = 2
D_INSERT = 3
D_DELETE = 4
D_SPLIT = 5
D_INDEX_INSERT = 6
D_REMOVE = 7
D_MERGE = 8
D_INDEX_DELETE = 9
LEAF_BIT = 0x80

LOW_INF = 1
HIGH_INF = 2

MAPPING_TAG = "bwtree.mapping"
BASE_TAG = "bwtree.base"
DELTA_TAG = "bwtree.delta"

FOUND, ABSENT, RIGHT = 0, 1, 2
MAX_READER_RESTARTS = 64

Words = tuple[int, ...]
Bound = Optional[Words]


def _below(key: Words, high: Bound) -> bool:
    return high is None or key < high


def _high_lt(a: Bound, b: Bound) -> bool:
    """``a < b`` where ``None`` is +infinity."""
    if a is None:
        return False
    return b is None or a < b


@dataclass(frozen=True, slots=True)
class _Base:
    leaf: bool
    right: int
    low: Bound
    high: Bound
    keys: tuple[Words, ...]
    vals: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class _Delta:
    kind: int
    leaf: bool
    depth: int
    next: int
    payload: int
    extra: int
    key: Words


@dataclass
class NodeView:
    """Logical node: the base node with its delta chain replayed. Never mutated once cached."""

    node_id: int
    head: int
    leaf: bool
    low: Bound
    high: Bound
    right: int
    pairs: dict[Words, int]
    frozen: bool = False
    depth: int = 0
    _sorted: list[Words] | None = field(default=None, repr=False)

    def keys(self) -> list[Words]:
        if self._sorted is None:
            self._sorted = sorted(self.pairs)
        return self._sorted

    def items(self) -> list[tuple[Words, int]]:
        return [(k, self.pairs[k]) for k in self.keys()]

    def route(self, key: Words) -> tuple[int, Bound, int]:
        """Child id for ``key``, the child's upper bound in this node, and its position."""
        ks = self.keys()
        i = max(0, bisect.bisect_right(ks, key) - 1)
        ub = ks[i + 1] if i + 1 < len(ks) else self.high
        return self.pairs[ks[i]], ub, i


class _Restart(Exception):
    pass


class PBwTree(PersistentIndex):
    """Persistent Bw-tree.

    All updates are delta records prepended with one compare-and-swap on the
    node's mapping-table slot. Splits and merges are two-step B-link SMOs that
    any writer completes when it runs into one; readers never restart.
    """

    kind = IndexKind.BWTREE
    ordered = True
    MAGIC = b"PBWT0001"
    CRASH_SITES = (
        "bwtree.record",
        "bwtree.node_id",
        "bwtree.slot_init",
        "bwtree.insert_delta",
        "bwtree.delete_delta",
        "bwtree.split_delta",
        "bwtree.index_insert",
        "bwtree.root_swap",
        "bwtree.consolidate",
        "bwtree.remove_delta",
        "bwtree.merge_delta",
        "bwtree.index_delete",
    )

    def __init__(
        self,
        pool,
        *,
        capacity: int | None = None,
        consolidate_depth: int | None = None,
        max_pairs: int | None = None,
        min_pairs: int | None = None,
        **kwargs,
    ) -> None:
        self.capacity = int(capacity or settings.bwtree_capacity)
        self.consolidate_depth = max(2, int(consolidate_depth or settings.bwtree_consolidate_depth))
        self.max_pairs = max(4, int(max_pairs or settings.bwtree_max_pairs))
        min_pairs = settings.bwtree_min_pairs if min_pairs is None else min_pairs
        self.min_pairs = max(0, min(int(min_pairs), self.max_pairs // 2))
        super().__init__(pool, **kwargs)

    # ------------------------------------------------------------------ open
    def _init_caches(self) -> None:
        gen = lambda: self.allocator.generation  # noqa: E731
        self._records: DecodeCache[_Base | _Delta] = DecodeCache(gen)
        self._views: DecodeCache[NodeView] = DecodeCache(gen, max_items=1 << 16)
        self._kw = self.codec.words
        self._zero: Words = (0,) * self._kw

    def _create(self) -> None:
        self._init_caches()
        self._table = self._alloc(self.capacity * CACHE_LINE, MAPPING_TAG)
        leaf = self._write(self._base_words(True, 0, None, None, []), BASE_TAG)
        self.pool.store8(self._slot(FIRST_NODE_ID), leaf, site="bwtree.slot_init")
        self.pool.store8(self._slot(ROOT_SLOT), FIRST_NODE_ID, site="bwtree.slot_init")
        self.pool.flush_line(self._slot(FIRST_NODE_ID))
        self._persist(self._slot(ROOT_SLOT))
        store = self.pool.store8
        store(R_TABLE, self._table, site="bwtree.slot_init")
        store(R_KEY_WORDS, self._kw, site="bwtree.slot_init")
        store(R_NEXT_ID, FIRST_NODE_ID + 1, site="bwtree.slot_init")
        store(R_CAPACITY, self.capacity, site="bwtree.slot_init")
        store(ROOT_OFFSET, magic_word(self.MAGIC), site="bwtree.slot_init")
        self._persist(ROOT_OFFSET, 6 * WORD)

    def _attach(self) -> None:
        self._init_caches()
        load = self.pool.load8
        if load(R_KEY_WORDS) != self._kw:
            raise OpenError(f"pool holds {load(R_KEY_WORDS) * 8}-byte keys, opened with {self._kw * 8}-byte keys")
        self._table = load(R_TABLE)
        self.capacity = load(R_CAPACITY)

    # ------------------------------------------------------------------ records
    def _slot(self, node_id: int) -> int:
        return self._table + node_id * CACHE_LINE

    def _base_words(self, leaf: bool, right: int, low: Bound, high: Bound, items: list[tuple[Words, int]]) -> list[int]:
        flags = (LOW_INF if low is None else 0) | (HIGH_INF if high is None else 0)
        words = [(BASE_LEAF if leaf else BASE_INNER) | (len(items) << 8), right, flags]
        words += list(low if low is not None else self._zero)
        words += list(high if high is not None else self._zero)
        for k, v in items:
            words += k
            words.append(v)
        return words

    def _write(self, words: list[int], tag: str) -> int:
        addr = self._alloc(len(words) * WORD, tag)
        store = self.pool.store8
        for i, w in enumerate(words):
            if w:
                store(addr + i * WORD, w, site="bwtree.record")
        self._persist(addr, len(words) * WORD)
        return addr

    def _decode(self, addr: int) -> _Base | _Delta:
        rec = self._records.get(addr)
        if rec is not None:
            return rec
        load = self.pool.load8
        kw = self._kw
        w0 = load(addr)
        t = w0 & 0x7F
        if t in (BASE_LEAF, BASE_INNER):
            count = w0 >> 8
            right, flags = load(addr + WORD), load(addr + 2 * WORD)
            p = addr + 3 * WORD
            low = None if flags & LOW_INF else tuple(load(p + i * WORD) for i in range(kw))
            p += kw * WORD
            high = None if flags & HIGH_INF else tuple(load(p + i * WORD) for i in range(kw))
            p += kw * WORD
            keys, vals = [], []
            for _ in range(count):
                keys.append(tuple(load(p + i * WORD) for i in range(kw)))
                vals.append(load(p + kw * WORD))
                p += (kw + 1) * WORD
            rec = _Base(t == BASE_LEAF, right, low, high, tuple(keys), tuple(vals))
        elif D_INSERT <= t <= D_INDEX_DELETE:
            rec = _Delta(
                t,
                bool(w0 & LEAF_BIT),
                w0 >> 8,
                load(addr + WORD),
                load(addr + 2 * WORD),
                load(addr + 3 * WORD),
                tuple(load(addr + (4 + i) * WORD) for i in range(kw)),
            )
        else:
            raise CorruptionError(f"bad record type {t} at {addr:#x}")
        self._records.set(addr, rec)
        return rec

    def _view(self, node_id: int) -> NodeView:
        head = self.pool.load8(self._slot(node_id))
        if head == 0:
            raise CorruptionError(f"node {node_id} has an empty mapping slot")
        return self._view_at(node_id, head)

    def _view_at(self, node_id: int, head: int) -> NodeView:
        view = self._views.get(head)
        if view is not None:
            return view
        chain: list[_Delta] = []
        seen: set[int] = set()
        addr = head
        while True:
            if addr == 0 or addr in seen:
                raise CorruptionError(f"broken delta chain for node {node_id} at {addr:#x}")
            seen.add(addr)
            rec = self._decode(addr)
            if isinstance(rec, _Base):
                break
            chain.append(rec)
            addr = rec.next
        pairs = dict(zip(rec.keys, rec.vals))
        low, high, right, frozen = rec.low, rec.high, rec.right, False
        for d in reversed(chain):
            k = d.kind
            if k == D_INSERT or k == D_INDEX_INSERT:
                pairs[d.key] = d.payload
            elif k == D_DELETE or k == D_INDEX_DELETE:
                pairs.pop(d.key, None)
            elif k == D_SPLIT:
                high, right = d.key, d.payload
                pairs = {kk: vv for kk, vv in pairs.items() if kk < d.key}
            elif k == D_MERGE:
                victim = self._view_at(d.payload, d.extra)
                pairs.update(victim.pairs)
                high, right = victim.high, victim.right
            elif k == D_REMOVE:
                frozen = True
        view = NodeView(node_id, head, rec.leaf, low, high, right, pairs, frozen, len(chain))
        self._views.set(head, view)
        return view

    def _new_id(self) -> int:
        pool = self.pool
        while True:
            cur = pool.load8(R_NEXT_ID)
            if cur >= self.capacity:
                raise PoolFullError(f"mapping table full ({self.capacity} slots)")
            if pool.cas8(R_NEXT_ID, cur, cur + 1, site="bwtree.node_id"):
                self._persist(R_NEXT_ID)
                return cur

    def _post(self, view: NodeView, kind: int, key: Words, payload: int, *, site: str, extra: int = 0) -> bool:
        """Prepend one persisted delta to ``view``'s chain via CAS; persist the slot on success."""
        words = [kind | (LEAF_BIT if view.leaf else 0) | ((view.depth + 1) << 8), view.head, payload, extra, *key]
        d = self._write(words, DELTA_TAG)
        slot = self._slot(view.node_id)
        if self.pool.cas8(slot, view.head, d, site=site, publish=True):
            self._persist(slot)
            return True
        self._free(d)
        return False

    def _flush_loaded(self, *addrs: int) -> None:
        """Helping path: persist the state another writer published before acting on it."""
        if Mutation.BWTREE_SKIP_HELPER_FLUSH in self.mutations:
            return
        for a in addrs:
            self.pool.flush_line(a)
        self.pool.fence()

    def _pred(self, key: Words) -> Words:
        n = 0
        for w in key:
            n = (n << 64) | w
        n = max(0, n - 1)
        return tuple((n >> (64 * (self._kw - 1 - i))) & ((1 << 64) - 1) for i in range(self._kw))

    # ------------------------------------------------------------------ readers
    def _leaf_search(self, head: int, key: Words) -> tuple[int, int]:
        addr = head
        while True:
            rec = self._decode(addr)
            if isinstance(rec, _Base):
                if rec.high is not None and key >= rec.high:
                    return RIGHT, rec.right
                i = bisect.bisect_left(rec.keys, key)
                if i < len(rec.keys) and rec.keys[i] == key:
                    return FOUND, rec.vals[i]
                return ABSENT, 0
            k = rec.kind
            if k == D_INSERT:
                if rec.key == key:
                    return FOUND, rec.payload
            elif k == D_DELETE:
                if rec.key == key:
                    return ABSENT, 0
            elif k == D_SPLIT:
                if key >= rec.key:
                    return RIGHT, rec.payload
            elif k == D_MERGE:
                if key >= rec.key:
                    addr = rec.extra
                    continue
            addr = rec.next

    def _reader_leaf(self, key: Words) -> tuple[int, int]:
        """Descend to the leaf whose range holds ``key``; returns (node id, chain head)."""
        load = self.pool.load8
        for _ in range(MAX_READER_RESTARTS):
            node_id = load(self._slot(ROOT_SLOT))
            while True:
                head = load(self._slot(node_id))
                if head == 0:
                    self.stats.reader_restarts += 1
                    break
                rec = self._decode(head)
                if rec.leaf:
                    return node_id, head
                view = self._view_at(node_id, head)
                if view.high is not None and key >= view.high:
                    node_id = view.right
                else:
                    node_id = view.route(key)[0]
        raise CorruptionError("reader could not reach a leaf")

    def lookup(self, key: Key) -> Optional[int]:
        kw = self.codec.to_words(self.codec.validate(key))
        with self._op("lookup"):
            node_id, head = self._reader_leaf(kw)
            while True:
                status, x = self._leaf_search(head, kw)
                if status == FOUND:
                    return x
                if status == ABSENT:
                    return None
                head = self.pool.load8(self._slot(x))

    def range_query(self, lo: Key, hi: Key) -> list[tuple[Key, int]]:
        lo_w = self.codec.to_words(self.codec.validate(lo))
        hi_w = self.codec.to_words(self.codec.validate(hi))
        out: list[tuple[Key, int]] = []
        if lo_w > hi_w:
            return out
        with self._op("range"):
            node_id, head = self._reader_leaf(lo_w)
            seen: set[int] = set()
            while node_id not in seen:
                seen.add(node_id)
                view = self._view_at(node_id, head)
                for k in view.keys():
                    if lo_w <= k <= hi_w:
                        out.append((self.codec.from_words(k), view.pairs[k]))
                if view.high is None or view.high > hi_w:
                    break
                node_id = view.right
                head = self.pool.load8(self._slot(node_id))
        return out

    # ------------------------------------------------------------------ writers
    def _writer_path(self, key: Words) -> list[NodeView]:
        while True:
            try:
                return self._descend_helping(key)
            except _Restart:
                self.stats.restarts += 1

    def _descend_helping(self, key: Words) -> list[NodeView]:
        view = self._view(self.pool.load8(self._slot(ROOT_SLOT)))
        if view.high is not None:
            self._install_root(view, helping=True)
            raise _Restart
        path = [view]
        while not view.leaf:
            child_id, ub, idx = view.route(key)
            child = self._view(child_id)
            if child.frozen:
                self._help_merge(view, child, helping=True)
                raise _Restart
            if child.high != ub:
                if _high_lt(child.high, ub):
                    self._help_split(view, child, helping=True)
                else:
                    self._help_absorbed(view, child, idx, ub)
                raise _Restart
            path.append(child)
            view = child
        return path

    def insert(self, key: Key, value: int) -> None:
        kw = self.codec.to_words(self.codec.validate(key))
        validate_value(value)
        with self._op("insert"):
            while True:
                path = self._writer_path(kw)
                if self._post(path[-1], D_INSERT, kw, value, site="bwtree.insert_delta"):
                    break
                self.stats.restarts += 1
            self._maintain(path, allow_merge=False)

    def delete(self, key: Key) -> None:
        kw = self.codec.to_words(self.codec.validate(key))
        with self._op("delete"):
            while True:
                path = self._writer_path(kw)
                if kw not in path[-1].pairs:
                    return
                if self._post(path[-1], D_DELETE, kw, 0, site="bwtree.delete_delta"):
                    break
                self.stats.restarts += 1
            self._maintain(path, allow_merge=True)

    def _maintain(self, path: list[NodeView], *, allow_merge: bool) -> None:
        i = len(path) - 1
        while i >= 0:
            v = self._view(path[i].node_id)
            if v.frozen:
                return
            parent = path[i - 1] if i > 0 else None
            if len(v.pairs) > self.max_pairs:
                if not self._split(v, parent):
                    return
                i -= 1
                continue
            if allow_merge and v.leaf and parent is not None and len(v.pairs) < self.min_pairs:
                if self._merge(parent, v):
                    return
            if v.depth >= self.consolidate_depth:
                self._consolidate(v)
            return

    # ------------------------------------------------------------------ SMOs
    def _consolidate(self, v: NodeView) -> bool:
        if v.frozen:
            return False
        try:
            base = self._write(self._base_words(v.leaf, v.right, v.low, v.high, v.items()), BASE_TAG)
        except PoolFullError:
            return False
        slot = self._slot(v.node_id)
        if not self.pool.cas8(slot, v.head, base, site="bwtree.consolidate", publish=True):
            self._free(base)
            return False
        self._persist(slot)
        addr = v.head
        while True:
            rec = self._decode(addr)
            self._free(addr)
            if isinstance(rec, _Base):
                break
            addr = rec.next
        self.stats.consolidations += 1
        return True

    def _split(self, v: NodeView, parent: NodeView | None) -> bool:
        with self._op("split"):
            items = v.items()
            mid = len(items) // 2
            sep = items[mid][0]
            try:
                rid = self._new_id()
                rbase = self._write(self._base_words(v.leaf, v.right, sep, v.high, items[mid:]), BASE_TAG)
            except PoolFullError as e:
                logger.warning("split of node %d aborted: %s", v.node_id, e)
                self.stats.aborted_smos += 1
                return False
            rslot = self._slot(rid)
            self.pool.store8(rslot, rbase, site="bwtree.slot_init")
            self._persist(rslot)
            if not self._post(v, D_SPLIT, sep, rid, site="bwtree.split_delta"):
                self.pool.store8(rslot, 0, site="bwtree.slot_init")
                self._persist(rslot)
                self._free(rbase)
                return False
            self.stats.splits += 1
            split_view = self._view(v.node_id)
            if parent is None:
                self._install_root(split_view, helping=False)
            else:
                self._post_index_insert(self._view(parent.node_id), split_view)
            return True

    def _post_index_insert(self, parent: NodeView, child: NodeView) -> bool:
        if parent.frozen or child.high is None or not _below(child.high, parent.high):
            return False
        cid, ub, _ = parent.route(child.high)
        if cid != child.node_id or not _high_lt(child.high, ub):
            return False
        return self._post(parent, D_INDEX_INSERT, child.high, child.right, site="bwtree.index_insert")

    def _help_split(self, parent: NodeView, child: NodeView, *, helping: bool) -> None:
        if helping:
            self.stats.helps += 1
            self._flush_loaded(self._slot(child.node_id), child.head, self._slot(child.right))
        self._post_index_insert(parent, child)

    def _install_root(self, old_root: NodeView, *, helping: bool) -> None:
        if helping:
            self.stats.helps += 1
            self._flush_loaded(self._slot(old_root.node_id), old_root.head, self._slot(old_root.right))
        items = [(self._zero, old_root.node_id), (old_root.high, old_root.right)]
        try:
            nid = self._new_id()
            base = self._write(self._base_words(False, 0, None, None, items), BASE_TAG)
        except PoolFullError as e:
            logger.warning("root split aborted: %s", e)
            self.stats.aborted_smos += 1
            return
        nslot = self._slot(nid)
        self.pool.store8(nslot, base, site="bwtree.slot_init")
        self._persist(nslot)
        root_slot = self._slot(ROOT_SLOT)
        if self.pool.cas8(root_slot, old_root.node_id, nid, site="bwtree.root_swap", publish=True):
            self._persist(root_slot)
            logger.debug("new root %d over %d", nid, old_root.node_id)
            return
        self.pool.store8(nslot, 0, site="bwtree.slot_init")
        self._persist(nslot)
        self._free(base)

    def _merge(self, parent: NodeView, v: NodeView) -> bool:
        parent = self._view(parent.node_id)
        if parent.frozen or v.low is None or parent.pairs.get(v.low) != v.node_id:
            return False
        ks = parent.keys()
        i = bisect.bisect_left(ks, v.low)
        if i == 0:
            return False
        _, ub, _ = parent.route(v.low)
        if v.high != ub:
            return False
        left = self._view(parent.pairs[ks[i - 1]])
        if left.frozen or left.high != v.low or len(left.pairs) + len(v.pairs) > self.max_pairs:
            return False
        with self._op("merge"):
            if not self._post(v, D_REMOVE, v.low, 0, site="bwtree.remove_delta"):
                return False
            self._help_merge(parent, self._view(v.node_id), helping=False)
        return True

    def _help_merge(self, parent: NodeView, v: NodeView, *, helping: bool) -> None:
        if v.low is None or parent.pairs.get(v.low) != v.node_id:
            return
        if helping:
            self.stats.helps += 1
        ks = parent.keys()
        i = bisect.bisect_left(ks, v.low)
        if i == 0:
            self._repair_orphan(v)
            return
        left = self._view(parent.pairs[ks[i - 1]])
        if left.frozen:
            self._help_merge(parent, left, helping=True)
            return
        if _high_lt(left.high, v.low):
            self._help_split(parent, left, helping=True)
            return
        if left.high == v.low:
            if helping:
                self._flush_loaded(self._slot(v.node_id), v.head)
            remove = self._decode(v.head)
            if not isinstance(remove, _Delta) or remove.kind != D_REMOVE:
                raise CorruptionError(f"frozen node {v.node_id} does not start with a remove delta")
            if not self._post(left, D_MERGE, v.low, v.node_id, site="bwtree.merge_delta", extra=remove.next):
                return
            left = self._view(left.node_id)
        if helping:
            self._flush_loaded(self._slot(left.node_id), left.head)
        if self._post(parent, D_INDEX_DELETE, v.low, v.node_id, site="bwtree.index_delete"):
            self.stats.merges += 1

    def _help_absorbed(self, parent: NodeView, child: NodeView, idx: int, ub: Bound) -> None:
        """``child`` covers more than its parent entry: finish the merge or hand the range back."""
        ks = parent.keys()
        if idx + 1 < len(ks):
            nxt = self._view(parent.pairs[ks[idx + 1]])
            if not nxt.frozen:
                # only reachable when a split's first step was lost under a durable parent entry
                raise CorruptionError(f"node {child.node_id} overlaps live sibling {nxt.node_id}")
            self._help_merge(parent, nxt, helping=True)
            return
        if not child.leaf or ub is None:
            return
        owner_id, _ = self._reader_leaf(ub)
        if owner_id == child.node_id:
            return
        self.stats.helps += 1
        self._flush_loaded(self._slot(child.node_id), child.head, self._slot(owner_id))
        self._post(child, D_SPLIT, ub, owner_id, site="bwtree.split_delta")

    def _repair_orphan(self, v: NodeView) -> None:
        """A frozen leaf became the first child of its parent; it can no longer merge left."""
        assert v.low is not None
        left_id, left_head = self._reader_leaf(self._pred(v.low))
        left = self._view_at(left_id, left_head)
        remove = self._decode(v.head)
        slot = self._slot(v.node_id)
        if left_id == v.node_id or not isinstance(remove, _Delta):
            return
        if left.high is not None and left.high <= v.low:
            # nobody absorbed it: drop the remove delta
            if self.pool.cas8(slot, v.head, remove.next, site="bwtree.consolidate", publish=True):
                self._persist(slot)
                self._free(v.head)
            return
        items = [(k, val) for k, val in left.items() if k >= v.low and _below(k, v.high)]
        try:
            base = self._write(self._base_words(True, v.right, v.low, v.high, items), BASE_TAG)
        except PoolFullError:
            return
        if not self.pool.cas8(slot, v.head, base, site="bwtree.consolidate", publish=True):
            self._free(base)
            return
        self._persist(slot)
        self._flush_loaded(slot)
        self._post(left, D_SPLIT, v.low, v.node_id, site="bwtree.split_delta")

    # ------------------------------------------------------------------ public SMO entry points
    def _path_to(self, node_id: int) -> list[NodeView] | None:
        target = self._view(node_id)
        key = target.low if target.low is not None else self._zero
        view = self._view(self.pool.load8(self._slot(ROOT_SLOT)))
        path = [view]
        while view.node_id != node_id:
            if view.high is not None and key >= view.high:
                view = self._view(view.right)
                path[-1] = view
                continue
            if view.leaf:
                return None
            view = self._view(view.route(key)[0])
            path.append(view)
        return path

    def leaf_id_for(self, key: Key) -> int:
        return self._reader_leaf(self.codec.to_words(self.codec.validate(key)))[0]

    def consolidate(self, node_id: int) -> bool:
        with self._op("consolidate"):
            return self._consolidate(self._view(node_id))

    def split_smo(self, node_id: int) -> bool:
        path = self._path_to(node_id)
        if path is None:
            return False
        return self._split(path[-1], path[-2] if len(path) > 1 else None)

    def merge_smo(self, victim_id: int) -> bool:
        path = self._path_to(victim_id)
        if path is None or len(path) < 2 or not path[-1].leaf:
            return False
        return self._merge(path[-2], path[-1])

    def complete_smo(self, node_id: int) -> bool:
        """Finish a half-done SMO on ``node_id`` as a helping writer would."""
        with self._op("help"):
            path = self._path_to(node_id)
            if path is None:
                return False
            v = path[-1]
            if len(path) == 1:
                if v.high is not None:
                    self._install_root(v, helping=True)
                    return True
                return False
            parent = path[-2]
            if v.frozen:
                self._help_merge(parent, v, helping=True)
                return True
            cid, ub, idx = parent.route(v.low if v.low is not None else self._zero)
            if cid != v.node_id or v.high == ub:
                return False
            if _high_lt(v.high, ub):
                self._help_split(parent, v, helping=True)
            else:
                self._help_absorbed(parent, v, idx, ub)
            return True

    # ------------------------------------------------------------------ introspection
    def root_id(self) -> int:
        return self.pool.load8(self._slot(ROOT_SLOT))

    def view(self, node_id: int) -> NodeView:
        return self._view(node_id)

    def _levels(self) -> list[list[NodeView]]:
        levels: list[list[NodeView]] = []
        first = self.root_id()
        while first:
            level: list[NodeView] = []
            seen: set[int] = set()
            node_id = first
            while node_id and node_id not in seen:
                seen.add(node_id)
                v = self._view(node_id)
                level.append(v)
                node_id = v.right if v.high is not None else 0
            levels.append(level)
            head = level[0]
            first = 0 if head.leaf or not head.pairs else head.pairs[head.keys()[0]]
        return levels

    def verify(self) -> list[str]:
        problems: list[str] = []
        try:
            levels = self._levels()
        except CorruptionError as e:
            return [str(e)]
        for depth, level in enumerate(levels):
            kinds = {v.leaf for v in level}
            if len(kinds) > 1:
                problems.append(f"level {depth} mixes leaf and inner nodes")
            if level[0].low is not None:
                problems.append(f"level {depth} starts at a finite low key")
            if level[-1].high is not None:
                problems.append(f"level {depth} ends at a finite high key (right-link cycle or dangling)")
            for a, b in zip(level, level[1:]):
                if a.high != b.low:
                    problems.append(f"level {depth}: node {a.node_id} high != node {b.node_id} low")
            for v in level:
                for k in v.keys():
                    in_low = v.low is None or k >= v.low or (not v.leaf and k == self._zero)
                    if not in_low or not _below(k, v.high):
                        problems.append(f"node {v.node_id}: key {k} outside its range")
                if not v.leaf and not v.pairs:
                    problems.append(f"inner node {v.node_id} has no children")
        return problems

    def pending_smos(self) -> list[str]:
        pending: list[str] = []
        levels = self._levels()
        root = levels[0][0]
        if root.high is not None:
            pending.append(f"root {root.node_id} split not installed")
        for level in levels:
            for v in level:
                if v.frozen:
                    pending.append(f"node {v.node_id} frozen for merge")
                if v.leaf:
                    continue
                for i, k in enumerate(v.keys()):
                    child = self._view(v.pairs[k])
                    ub = v.keys()[i + 1] if i + 1 < len(v.pairs) else v.high
                    if child.high != ub:
                        pending.append(f"node {child.node_id} high does not match parent {v.node_id}")
        return pending

    def items(self) -> list[tuple[Key, int]]:
        return self.range_query(self.codec.min_key, self.codec.max_key)

    def children(self, addr: int, alloc: Allocation) -> Iterable[int]:
        load = self.pool.load8
        if alloc.tag == HEADER_TAG:
            return [load(R_TABLE)]
        if alloc.tag == MAPPING_TAG:
            n = min(load(R_NEXT_ID), self.capacity)
            return [load(self._slot(i)) for i in range(FIRST_NODE_ID, n)]
        if alloc.tag == DELTA_TAG:
            rec = self._decode(alloc.addr)
            assert isinstance(rec, _Delta)
            return [rec.next, rec.extra] if rec.kind == D_MERGE else [rec.next]
        return []
