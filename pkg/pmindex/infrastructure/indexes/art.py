from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Iterator, Optional

from pmindex.domain.indexes.interfaces import FixOutcome, IndexKind, Mutation
from pmindex.domain.models.keys import Key, validate_value
from pmindex.domain.models.pm import CACHE_LINE, HEADER_TAG, ROOT_OFFSET, WORD, Allocation, magic_word
from pmindex.infrastructure.indexes.base import PersistentIndex
from pmindex.lib.errors import CorruptionError, PoolFullError
from pmindex.utils import get_logger

logger = get_logger(__name__)

R_ROOT = ROOT_OFFSET + WORD

N4, N16, N48, N256, LEAF = 1, 2, 3, 4, 5

H_META = 0
H_PREFIX = 8
H_COUNT = 16

# kind -> (key bytes / index offset, children offset, node size)
LAYOUT = {
    N4: (24, 32, 64),
    N16: (24, 40, 168),
    N48: (24, 280, 664),
    N256: (0, 24, 2072),
}
CAPACITY = {N4: 4, N16: 16, N48: 48, N256: 256}
SHRINK_BELOW = {N16: 3, N48: 12, N256: 37}
TAGS = {N4: "art.n4", N16: "art.n16", N48: "art.n48", N256: "art.n256", LEAF: "art.leaf"}
INNER_TAGS = {TAGS[k]: k for k in (N4, N16, N48, N256)}

LEAF_VALUE = 8
LEAF_KEY = 16
STORED_PREFIX = 7


def _pack_prefix(plen: int, prefix: bytes) -> int:
    w = plen & 0xFF
    for j, b in enumerate(prefix[:STORED_PREFIX]):
        w |= b << (8 * (j + 1))
    return w


def _unpack_prefix(w: int) -> tuple[int, bytes]:
    plen = w & 0xFF
    return plen, bytes((w >> (8 * (j + 1))) & 0xFF for j in range(min(plen, STORED_PREFIX)))


def _kind_for(n: int) -> int:
    if n <= 4:
        return N4
    if n <= 16:
        return N16
    if n <= 48:
        return N48
    return N256


def _byte_in(word: int, i: int) -> int:
    return (word >> (8 * i)) & 0xFF


class _Restart(Exception):
    pass


class PArt(PersistentIndex):
    """Persistent adaptive radix tree with blocking writers and non-blocking readers.

    Node levels are immutable, so a reader that finds ``depth + prefix_len !=
    level`` skips the ambiguous prefix and checks the full key at the leaf.
    Writers that find the same mismatch try-lock the node: a held lock means a
    writer is mid-SMO (transient); a free lock means a crash remnant, which
    they repair from a leaf key.
    """

    kind = IndexKind.ART
    ordered = True
    MAGIC = b"PART0001"
    CRASH_SITES = (
        "art.root_init",
        "art.leaf_init",
        "art.node_init",
        "art.entry",
        "art.count",
        "art.n48_index",
        "art.child",
        "art.grow",
        "art.shrink",
        "art.split_link",
        "art.prefix_update",
        "art.leaf_split",
        "art.value_update",
        "art.delete",
        "art.unlink",
        "art.fix_prefix",
    )

    def _create(self) -> None:
        self._init_volatile()
        root = self._build_node(N256, 0, 0, [])
        self.pool.store8(R_ROOT, root, site="art.root_init")
        self.pool.store8(ROOT_OFFSET, magic_word(self.MAGIC), site="art.root_init")
        self._persist(ROOT_OFFSET, 2 * WORD)

    def _attach(self) -> None:
        self._init_volatile()

    def _init_volatile(self) -> None:
        self._retired: set[int] = set()
        self._retired_gen = self.allocator.generation
        self._width = self.codec.width

    # ------------------------------------------------------------------ node access
    def _meta(self, node: int) -> tuple[int, int]:
        m = self.pool.load8(node + H_META)
        return m & 0xFF, (m >> 8) & 0xFF

    def _header(self, node: int) -> tuple[int, int, int]:
        """(level, prefix_len, raw prefix word)."""
        level = (self.pool.load8(node + H_META) >> 8) & 0xFF
        pword = self.pool.load8(node + H_PREFIX)
        return level, pword & 0xFF, pword

    def _leaf_key(self, leaf: int) -> bytes:
        load = self.pool.load8
        return b"".join(load(leaf + LEAF_KEY + i * WORD).to_bytes(8, "big") for i in range(self._width // WORD))

    def _is_leaf(self, node: int) -> bool:
        return self.pool.load8(node + H_META) & 0xFF == LEAF

    def _find(self, node: int, kind: int, b: int) -> tuple[int, int]:
        """Link address and child for key byte ``b``; the link may be a tombstone (child 0)."""
        load = self.pool.load8
        keys, children, _ = LAYOUT[kind]
        if kind == N256:
            link = node + children + b * WORD
            return link, load(link)
        if kind == N48:
            idx = _byte_in(load(node + keys + (b // 8) * WORD), b % 8)
            if not idx:
                return 0, 0
            link = node + children + (idx - 1) * WORD
            return link, load(link)
        count = min(load(node + H_COUNT), CAPACITY[kind])
        tomb = 0
        for i in range(count):
            if _byte_in(load(node + keys + (i // 8) * WORD), i % 8) != b:
                continue
            link = node + children + i * WORD
            c = load(link)
            # re-read: a tombstone may be reused for another byte under us
            if c and _byte_in(load(node + keys + (i // 8) * WORD), i % 8) == b:
                return link, c
            tomb = tomb or link
        return tomb, 0

    def _entries(self, node: int) -> list[tuple[int, int, int]]:
        """Live ``(byte, link, child)`` entries in key-byte order."""
        load = self.pool.load8
        kind, _ = self._meta(node)
        keys, children, _ = LAYOUT[kind]
        out: list[tuple[int, int, int]] = []
        if kind == N256:
            for b in range(256):
                link = node + children + b * WORD
                c = load(link)
                if c:
                    out.append((b, link, c))
            return out
        if kind == N48:
            count = load(node + H_COUNT)
            for w in range(32):
                word = load(node + keys + w * WORD)
                if not word:
                    continue
                for j in range(8):
                    idx = _byte_in(word, j)
                    if idx and idx <= count:
                        link = node + children + (idx - 1) * WORD
                        c = load(link)
                        if c:
                            out.append((w * 8 + j, link, c))
            return out
        count = min(load(node + H_COUNT), CAPACITY[kind])
        for i in range(count):
            link = node + children + i * WORD
            c = load(link)
            if c:
                out.append((_byte_in(load(node + keys + (i // 8) * WORD), i % 8), link, c))
        out.sort()
        return out

    def _leftmost_leaf(self, node: int) -> int | None:
        seen = 0
        while not self._is_leaf(node):
            entries = self._entries(node)
            if not entries:
                return None
            node = entries[0][2]
            seen += 1
            if seen > self._width + 1:
                raise CorruptionError("cycle while searching for a leaf")
        return node

    def _full_prefix(self, node: int, depth: int, plen: int, pword: int) -> bytes:
        if plen <= STORED_PREFIX:
            return _unpack_prefix(pword)[1]
        leaf = self._leftmost_leaf(node)
        if leaf is None:
            raise CorruptionError(f"inner node {node:#x} has no leaf to read its prefix from")
        return self._leaf_key(leaf)[depth : depth + plen]

    # ------------------------------------------------------------------ node construction
    def _new_leaf(self, kb: bytes, value: int) -> int:
        size = LEAF_KEY + self._width
        leaf = self._alloc(size, TAGS[LEAF])
        store = self.pool.store8
        store(leaf + H_META, LEAF | (self._width << 8), site="art.leaf_init")
        store(leaf + LEAF_VALUE, value, site="art.leaf_init")
        for i in range(0, self._width, WORD):
            w = int.from_bytes(kb[i : i + WORD], "big")
            if w:
                store(leaf + LEAF_KEY + i, w, site="art.leaf_init")
        self._persist(leaf, size)
        return leaf

    def _build_node(self, kind: int, level: int, pword: int, entries: list[tuple[int, int]]) -> int:
        keys, children, size = LAYOUT[kind]
        node = self._alloc(size, TAGS[kind])
        store = self.pool.store8
        store(node + H_META, kind | (level << 8), site="art.node_init")
        if pword:
            store(node + H_PREFIX, pword, site="art.node_init")
        if kind == N256:
            for b, c in entries:
                store(node + children + b * WORD, c, site="art.node_init")
        elif kind == N48:
            index: dict[int, int] = {}
            for slot, (b, c) in enumerate(entries):
                store(node + children + slot * WORD, c, site="art.node_init")
                index[b // 8] = index.get(b // 8, 0) | ((slot + 1) << (8 * (b % 8)))
            for w, v in index.items():
                store(node + keys + w * WORD, v, site="art.node_init")
        else:
            packed: dict[int, int] = {}
            for i, (b, c) in enumerate(entries):
                store(node + children + i * WORD, c, site="art.node_init")
                packed[i // 8] = packed.get(i // 8, 0) | (b << (8 * (i % 8)))
            for w, v in packed.items():
                if v:
                    store(node + keys + w * WORD, v, site="art.node_init")
        if kind != N256 and entries:
            store(node + H_COUNT, len(entries), site="art.node_init")
        self._persist(node, size)
        return node

    def _persist_lines(self, *addrs: int) -> None:
        for line in sorted({a - a % CACHE_LINE for a in addrs}):
            self.pool.flush_line(line)
        self.pool.fence()

    # ------------------------------------------------------------------ locking
    @contextmanager
    def _locked(self, *nodes: int) -> Iterator[None]:
        """Lock nodes in the given (bottom-up) order."""
        taken: list[int] = []
        try:
            for n in nodes:
                self.locks.lock(n)
                taken.append(n)
            yield
        except Exception:
            for n in reversed(taken):
                self.locks.unlock(n)
            raise
        for n in reversed(taken):
            self.locks.unlock(n)

    def _is_retired(self, node: int) -> bool:
        if self.allocator.generation != self._retired_gen:
            self._retired = set()
            self._retired_gen = self.allocator.generation
        return node in self._retired

    def _retire(self, node: int) -> None:
        self._retired.add(node)
        self._free(node)

    # ------------------------------------------------------------------ fix path
    def detect_and_fix(self, node: int, depth: int, link: int = 0) -> FixOutcome:
        """Resolve a level/prefix mismatch seen at ``node`` reached at ``depth``.

        With ``link`` (the slot the caller followed to ``node``) the mismatch is
        only repaired while that slot still points at ``node``; a moved link
        means a path split landed above the caller after it read the slot.
        """
        level, plen, _ = self._header(node)
        if depth + plen == level:
            return FixOutcome.CONSISTENT
        if not self.locks.try_lock(node):
            self.stats.transient += 1
            return FixOutcome.TRANSIENT
        try:
            if self._is_retired(node) or (link and self.pool.load8(link) != node):
                self.stats.transient += 1
                return FixOutcome.TRANSIENT
            level, plen, _ = self._header(node)
            if depth + plen == level:
                return FixOutcome.CONSISTENT
            new_len = level - depth
            if new_len < 0:
                raise CorruptionError(f"node {node:#x} at depth {depth} is above its level {level}")
            leaf = self._leftmost_leaf(node)
            if leaf is None:
                raise CorruptionError(f"fix path found an empty subtree under {node:#x}")
            prefix = self._leaf_key(leaf)[depth:level]
            self.pool.store8(node + H_PREFIX, _pack_prefix(new_len, prefix), site="art.fix_prefix", publish=True)
            self._persist(node + H_PREFIX)
            self.stats.fixes += 1
            logger.debug("fixed prefix of %#x: len %d -> %d", node, plen, new_len)
            return FixOutcome.FIXED
        finally:
            self.locks.unlock(node)

    def _writer_header(self, node: int, depth: int, link: int) -> tuple[int, int, int]:
        level, plen, pword = self._header(node)
        if depth + plen == level:
            return level, plen, pword
        if Mutation.ART_DISABLE_FIX in self.mutations:
            # trusts the stale prefix
            return depth + plen, plen, pword
        if self.detect_and_fix(node, depth, link) is FixOutcome.TRANSIENT:
            raise _Restart
        level, plen, pword = self._header(node)
        if depth + plen != level:
            raise _Restart
        return level, plen, pword

    # ------------------------------------------------------------------ reads
    def lookup(self, key: Key) -> Optional[int]:
        kb = self.codec.to_bytes(self.codec.validate(key))
        load = self.pool.load8
        with self._op("lookup"):
            node, depth = load(R_ROOT), 0
            while node:
                kind, level = self._meta(node)
                if kind == LEAF:
                    return load(node + LEAF_VALUE) if self._leaf_key(node) == kb else None
                plen, stored = _unpack_prefix(load(node + H_PREFIX))
                if depth + plen == level and stored != kb[depth : depth + len(stored)]:
                    return None
                # a stale prefix is skipped; the leaf compare decides
                depth = level
                node = self._find(node, kind, kb[depth])[1]
                depth += 1
            return None

    def range_query(self, lo: Key, hi: Key) -> list[tuple[Key, int]]:
        lo_b = self.codec.to_bytes(self.codec.validate(lo))
        hi_b = self.codec.to_bytes(self.codec.validate(hi))
        out: list[tuple[Key, int]] = []
        if lo_b > hi_b:
            return out
        with self._op("range"):
            self._range(self.pool.load8(R_ROOT), 0, b"", lo_b, hi_b, out)
        return out

    def _range(self, node: int, depth: int, path: bytes, lo: bytes, hi: bytes, out: list) -> None:
        kind, level = self._meta(node)
        if kind == LEAF:
            k = self._leaf_key(node)
            if lo <= k <= hi:
                out.append((self.codec.from_bytes(k), self.pool.load8(node + LEAF_VALUE)))
            return
        plen, stored = _unpack_prefix(self.pool.load8(node + H_PREFIX))
        if depth + plen == level and plen <= STORED_PREFIX:
            path = path + stored
        else:
            leaf = self._leftmost_leaf(node)
            if leaf is None:
                return
            path = self._leaf_key(leaf)[:level]
        if path < lo[:level] or path > hi[:level]:
            return
        for b, _, child in self._entries(node):
            p = path + bytes((b,))
            if p < lo[: level + 1]:
                continue
            if p > hi[: level + 1]:
                break
            self._range(child, level + 1, p, lo, hi, out)

    # ------------------------------------------------------------------ writes
    def insert(self, key: Key, value: int) -> None:
        kb = self.codec.to_bytes(self.codec.validate(key))
        validate_value(value)
        with self._op("insert"):
            while True:
                try:
                    self._insert(kb, value)
                    return
                except _Restart:
                    self.stats.restarts += 1

    def _insert(self, kb: bytes, value: int) -> None:
        load = self.pool.load8
        parent, link = 0, R_ROOT
        node, depth = load(R_ROOT), 0
        while True:
            level, plen, pword = self._writer_header(node, depth, link)
            if plen:
                prefix = self._full_prefix(node, depth, plen, pword)
                for i in range(plen):
                    if prefix[i] != kb[depth + i]:
                        self._split_prefix(parent, link, node, depth, i, prefix, pword, kb, value)
                        return
            depth = level
            kind = self._meta(node)[0]
            slot, child = self._find(node, kind, kb[depth])
            if not child:
                self._add_child(node, parent, link, kb[depth], kb, value)
                return
            if self._is_leaf(child):
                self._leaf_hit(node, slot, child, kb, value, depth + 1)
                return
            parent, link, node, depth = node, slot, child, depth + 1

    def _add_child(self, node: int, parent: int, link: int, b: int, kb: bytes, value: int) -> None:
        pool = self.pool
        with self._locked(node):
            if self._is_retired(node):
                raise _Restart
            kind = self._meta(node)[0]
            slot, child = self._find(node, kind, b)
            if child:
                raise _Restart
            leaf = self._new_leaf(kb, value)
            if slot:
                pool.store8(slot, leaf, site="art.child", publish=True)
                self._persist(slot)
                return
            if self._append(node, kind, b, leaf):
                return
            try:
                with self._locked(parent):
                    if self._is_retired(parent) or pool.load8(link) != node:
                        raise _Restart
                    live = len(self._entries(node)) + 1
                    self._replace(node, link, _kind_for(live), (b, leaf), site="art.grow")
            except (_Restart, PoolFullError):
                self._free(leaf)
                raise

    def _append(self, node: int, kind: int, b: int, leaf: int) -> bool:
        """Use the next unused slot; False when the node is full."""
        pool = self.pool
        keys, children, _ = LAYOUT[kind]
        count = pool.load8(node + H_COUNT)
        if count >= CAPACITY[kind]:
            return False
        link = node + children + count * WORD
        if kind == N48:
            pool.store8(node + H_COUNT, count + 1, site="art.count")
            pool.store8(link, leaf, site="art.entry")
            self._persist_lines(node + H_COUNT, link)
            iw = node + keys + (b // 8) * WORD
            word = pool.load8(iw) & ~(0xFF << (8 * (b % 8)))
            pool.store8(iw, word | ((count + 1) << (8 * (b % 8))), site="art.n48_index", publish=True)
            self._persist(iw)
            return True
        kw = node + keys + (count // 8) * WORD
        word = pool.load8(kw) & ~(0xFF << (8 * (count % 8)))
        pool.store8(kw, word | (b << (8 * (count % 8))), site="art.entry")
        pool.store8(link, leaf, site="art.entry")
        self._persist_lines(kw, link)
        pool.store8(node + H_COUNT, count + 1, site="art.count", publish=True)
        self._persist(node + H_COUNT)
        return True

    def _replace(self, node: int, link: int, new_kind: int, extra: tuple[int, int] | None, *, site: str) -> None:
        """Copy ``node`` into a node of ``new_kind`` and swing the parent link; caller holds both locks."""
        entries = [(b, c) for b, _, c in self._entries(node)]
        if extra is not None:
            entries.append(extra)
            entries.sort()
        level, _, pword = self._header(node)
        fresh = self._build_node(new_kind, level, pword, entries)
        self.pool.store8(link, fresh, site=site, publish=True)
        self._persist(link)
        self._retire(node)

    def _split_prefix(
        self, parent: int, link: int, node: int, depth: int, i: int, prefix: bytes, pword: int, kb: bytes, value: int
    ) -> None:
        """Two visibility stores: install the new branch node, then shorten the old node's prefix."""
        pool = self.pool
        with self._locked(node, parent):
            if self._is_retired(node) or self._is_retired(parent) or pool.load8(link) != node:
                raise _Restart
            if pool.load8(node + H_PREFIX) != pword:
                raise _Restart
            with self._op("path_split"):
                leaf = self._new_leaf(kb, value)
                level = depth + i
                try:
                    branch = self._build_node(
                        N4, level, _pack_prefix(i, prefix[:i]), sorted([(kb[level], leaf), (prefix[i], node)])
                    )
                except PoolFullError:
                    self._free(leaf)
                    raise
                pool.store8(link, branch, site="art.split_link", publish=True)
                self._persist(link)
                rest = prefix[i + 1 :]
                pool.store8(node + H_PREFIX, _pack_prefix(len(rest), rest), site="art.prefix_update", publish=True)
                self._persist(node + H_PREFIX)

    def _leaf_hit(self, node: int, slot: int, leaf: int, kb: bytes, value: int, depth: int) -> None:
        pool = self.pool
        existing = self._leaf_key(leaf)
        with self._locked(node):
            if self._is_retired(node) or pool.load8(slot) != leaf:
                raise _Restart
            if existing == kb:
                pool.store8(leaf + LEAF_VALUE, value, site="art.value_update", publish=True)
                self._persist(leaf + LEAF_VALUE)
                return
            j = next((p for p in range(depth, self._width) if existing[p] != kb[p]), None)
            if j is None:
                raise CorruptionError(f"leaf {leaf:#x} sits on the wrong path for its key")
            fresh = self._new_leaf(kb, value)
            try:
                branch = self._build_node(
                    N4, j, _pack_prefix(j - depth, kb[depth:j]), sorted([(existing[j], leaf), (kb[j], fresh)])
                )
            except PoolFullError:
                self._free(fresh)
                raise
            pool.store8(slot, branch, site="art.leaf_split", publish=True)
            self._persist(slot)

    def delete(self, key: Key) -> None:
        kb = self.codec.to_bytes(self.codec.validate(key))
        with self._op("delete"):
            while True:
                try:
                    self._delete(kb)
                    return
                except _Restart:
                    self.stats.restarts += 1

    def _delete(self, kb: bytes) -> None:
        pool = self.pool
        path: list[tuple[int, int]] = []
        node, link, depth = pool.load8(R_ROOT), R_ROOT, 0
        while True:
            level, plen, pword = self._writer_header(node, depth, link)
            stored = _unpack_prefix(pword)[1]
            if stored != kb[depth : depth + len(stored)]:
                return
            depth = level
            path.append((node, link))
            slot, child = self._find(node, self._meta(node)[0], kb[depth])
            if not child:
                return
            if self._is_leaf(child):
                if self._leaf_key(child) != kb:
                    return
                break
            link, node, depth = slot, child, depth + 1
        with self._locked(node):
            if self._is_retired(node) or pool.load8(slot) != child:
                raise _Restart
            pool.store8(slot, 0, site="art.delete", publish=True)
            self._persist(slot)
        self._free(child)
        self._compact(path)

    def _compact(self, path: list[tuple[int, int]]) -> None:
        """Unlink emptied inner nodes and shrink underfull ones, bottom-up; the root stays."""
        pool = self.pool
        for i in range(len(path) - 1, 0, -1):
            node, link = path[i]
            parent = path[i - 1][0]
            with self._locked(node, parent):
                if self._is_retired(node) or self._is_retired(parent) or pool.load8(link) != node:
                    return
                live = len(self._entries(node))
                kind = self._meta(node)[0]
                if live == 0:
                    pool.store8(link, 0, site="art.unlink", publish=True)
                    self._persist(link)
                    self._retire(node)
                    continue
                if live < SHRINK_BELOW.get(kind, 0):
                    self._replace(node, link, _kind_for(live), None, site="art.shrink")
                return

    # ------------------------------------------------------------------ introspection
    def root(self) -> int:
        return self.pool.load8(R_ROOT)

    def _walk(self) -> Iterator[tuple[int, int, int]]:
        """(node, depth-reached, parent) for every reachable inner node."""
        stack = [(self.root(), 0, 0)]
        while stack:
            node, depth, parent = stack.pop()
            kind, level = self._meta(node)
            if kind == LEAF:
                continue
            yield node, depth, parent
            for _, _, child in reversed(self._entries(node)):
                stack.append((child, level + 1, node))

    def inconsistent_nodes(self) -> list[tuple[int, int]]:
        out = []
        for node, depth, _ in self._walk():
            level, plen, _ = self._header(node)
            if depth + plen != level:
                out.append((node, depth))
        return out

    def items(self) -> list[tuple[Key, int]]:
        return self.range_query(self.codec.min_key, self.codec.max_key)

    def verify(self) -> list[str]:
        problems: list[str] = []
        seen: set[bytes] = set()
        root = self.root()
        stack: list[tuple[int, int, bytes]] = [(root, 0, b"")]
        while stack:
            node, depth, path = stack.pop()
            kind, level = self._meta(node)
            if kind == LEAF:
                k = self._leaf_key(node)
                if k[: len(path)] != path:
                    problems.append(f"leaf {k.hex()} reached through path {path.hex()}")
                if k in seen:
                    problems.append(f"duplicate key {k.hex()}")
                seen.add(k)
                continue
            if kind not in LAYOUT:
                problems.append(f"node {node:#x} has unknown kind {kind}")
                continue
            plen, stored = _unpack_prefix(self.pool.load8(node + H_PREFIX))
            if depth + plen != level:
                problems.append(f"node {node:#x}: depth {depth} + prefix {plen} != level {level}")
            entries = self._entries(node)
            if not entries and node != root:
                problems.append(f"inner node {node:#x} has no children")
                continue
            if kind != N256 and self.pool.load8(node + H_COUNT) > CAPACITY[kind]:
                problems.append(f"node {node:#x} count exceeds capacity")
            leaf = self._leftmost_leaf(node)
            if leaf is not None:
                lk = self._leaf_key(leaf)
                if lk[depth : depth + len(stored)] != stored and depth + plen == level:
                    problems.append(f"node {node:#x} stored prefix disagrees with its keys")
                path = lk[:level]
            for b, _, child in entries:
                stack.append((child, level + 1, path + bytes((b,))))
        return problems

    def children(self, addr: int, alloc: Allocation) -> Iterable[int]:
        if alloc.tag == HEADER_TAG:
            return [self.pool.load8(R_ROOT)]
        if alloc.tag in INNER_TAGS:
            return [c for _, _, c in self._entries(alloc.addr)]
        return []
