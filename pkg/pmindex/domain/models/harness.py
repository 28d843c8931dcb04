from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Optional

from pmindex.domain.indexes.interfaces import IndexKind, Mutation
from pmindex.domain.models.keys import Key, KeyType
from pmindex.domain.models.pm import Allocation, CrashMode
from pmindex.domain.models.workload import WorkloadOp

if TYPE_CHECKING:
    from pmindex.infrastructure.pm.pool import PoolSnapshot


class CampaignMode(str, Enum):
    RANDOM = "random"
    SWEEP = "sweep"


@dataclass(frozen=True)
class CrashPoint:
    """Where a load phase was cut: the ``store_index``-th store of op ``ordinal``."""

    ordinal: int
    store_index: int
    site: str = ""
    seq: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {"ordinal": self.ordinal, "store_index": self.store_index, "site": self.site, "seq": self.seq}


@dataclass
class CrashState:
    """A persisted view plus what the crashed run acknowledged before it stopped."""

    state_index: int
    seed: int
    snapshot: "PoolSnapshot"
    acked: dict[Key, int] = field(default_factory=dict)
    deleted: set[Key] = field(default_factory=set)
    # keys whose op was in flight at the crash: either outcome is legal
    in_flight: set[Key] = field(default_factory=set)
    crash_point: Optional[CrashPoint] = None
    allocations: list[Allocation] = field(default_factory=list)
    ops: list[WorkloadOp] = field(default_factory=list)

    @property
    def crashed(self) -> bool:
        return self.crash_point is not None


@dataclass
class CampaignConfig:
    index: IndexKind = IndexKind.CLHT
    states: int = 10_000
    load_n: int = 10_000
    test_ops: int = 10_000
    threads: int = 4
    policy: CrashMode = CrashMode.STRICT
    seed: int = 0
    mode: CampaignMode = CampaignMode.RANDOM
    key_type: KeyType = KeyType.RANDINT
    key_bits: int = 64
    # randint keys built from this many distinct byte values (0: uniform); small alphabets share long prefixes
    key_alphabet: int = 0
    pool_size: int = 1 << 30
    delete_fraction: float = 0.1
    interpose_probability: float = 0.25
    publish_boost: float = 25.0
    crash_probability: Optional[float] = None
    # only stores at these sites are crash candidates (empty: every store)
    crash_sites: tuple[str, ...] = ()
    # only stores issued by an interposed op are crash candidates
    crash_interposed_only: bool = False
    # only publishes at these sites run an interposed op (empty: every publish)
    interpose_sites: tuple[str, ...] = ()
    mutations: tuple[Mutation, ...] = ()
    index_kwargs: dict[str, Any] = field(default_factory=dict)
    artifacts_dir: Optional[str] = None

    def __post_init__(self) -> None:
        self.index = IndexKind(self.index)
        self.policy = CrashMode(self.policy)
        self.mode = CampaignMode(self.mode)
        self.key_type = KeyType(self.key_type)
        self.mutations = tuple(Mutation(m) for m in self.mutations)
        self.crash_sites = tuple(self.crash_sites)
        self.interpose_sites = tuple(self.interpose_sites)
        if not 1 <= self.key_bits <= 64:
            raise ValueError("key_bits must be in [1, 64]")
        if self.key_alphabet and not 2 <= self.key_alphabet <= 256:
            raise ValueError("key_alphabet must be 0 or in [2, 256]")
        if self.key_alphabet and self.key_type is not KeyType.RANDINT:
            raise ValueError("key_alphabet applies to randint keys only")
        if self.states < 0 or self.load_n < 0 or self.test_ops < 0 or self.threads <= 0:
            raise ValueError("campaign sizes must be non-negative and threads positive")
