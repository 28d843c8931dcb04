from __future__ import annotations

from typing import Callable, Generic, Optional, TypeVar

T = TypeVar("T")


class DecodeCache(Generic[T]):
    """A minimal in-memory cache for decoded immutable PM records.

    - Keys are pool addresses; entries never go stale while the address is
      not handed out again, so invalidation follows the allocator generation.
    - KISS: when the cache is full it is simply cleared.
    - Thread-safe enough given the GIL: lookups and inserts are single dict ops.
    """

    def __init__(self, generation: Callable[[], int], max_items: int = 1 << 18) -> None:
        self._generation = generation
        self._max = int(max_items)
        self._gen = generation()
        self._store: dict[int, T] = {}

    def get(self, addr: int) -> Optional[T]:
        gen = self._generation()
        if gen != self._gen:
            self._store = {}
            self._gen = gen
            return None
        return self._store.get(addr)

    def set(self, addr: int, value: T) -> None:
        if len(self._store) >= self._max:
            self._store = {}
        self._store[addr] = value

    def clear(self) -> None:
        self._store = {}

    def __len__(self) -> int:
        return len(self._store)
