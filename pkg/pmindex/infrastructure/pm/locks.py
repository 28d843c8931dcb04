from __future__ import annotations

from contextlib import contextmanager
import threading
from typing import Iterator

from pmindex.lib.errors import LockError


class _Entry:
    __slots__ = ("lock", "owner")

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.owner: int | None = None


class LockTable:
    """Volatile lock registry keyed by lock id (a pool address).

    Nothing here is persistent: ``reset_all`` drops every entry so that a lock
    held when the pool crashed can never block recovery.
    """

    def __init__(self) -> None:
        self._guard = threading.Lock()
        self._entries: dict[int, _Entry] = {}

    def _entry(self, lock_id: int) -> _Entry:
        e = self._entries.get(lock_id)
        if e is None:
            with self._guard:
                e = self._entries.setdefault(lock_id, _Entry())
        return e

    def lock(self, lock_id: int) -> None:
        e = self._entry(lock_id)
        me = threading.get_ident()
        if e.owner == me:
            raise LockError(f"self-deadlock on lock {lock_id:#x}")
        e.lock.acquire()
        e.owner = me

    def try_lock(self, lock_id: int) -> bool:
        e = self._entry(lock_id)
        if not e.lock.acquire(blocking=False):
            return False
        e.owner = threading.get_ident()
        return True

    def unlock(self, lock_id: int) -> None:
        e = self._entries.get(lock_id)
        if e is None or e.owner != threading.get_ident():
            raise LockError(f"unlock of lock {lock_id:#x} not held by this thread")
        e.owner = None
        e.lock.release()

    def held_by_current(self, lock_id: int) -> bool:
        e = self._entries.get(lock_id)
        return e is not None and e.owner == threading.get_ident()

    def is_locked(self, lock_id: int) -> bool:
        e = self._entries.get(lock_id)
        return e is not None and e.lock.locked()

    @contextmanager
    def locked(self, lock_id: int) -> Iterator[None]:
        self.lock(lock_id)
        try:
            yield
        finally:
            self.unlock(lock_id)

    def reset_all(self) -> None:
        with self._guard:
            self._entries = {}

    def __len__(self) -> int:
        return len(self._entries)
