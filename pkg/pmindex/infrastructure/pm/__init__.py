# Simulated persistent memory: pool, allocator, lock table

from .alloc import PmAllocator, traced_allocations
from .locks import LockTable
from .pool import PmemPool, PoolSnapshot

__all__ = ["PmAllocator", "traced_allocations", "LockTable", "PmemPool", "PoolSnapshot"]
