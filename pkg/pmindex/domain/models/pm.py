from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

CACHE_LINE = 64
WORD = 8
WORDS_PER_LINE = CACHE_LINE // WORD

# Fixed pool layout: the root record owns line 0, the allocator watermark
# lives at offset 64 and the heap starts after the header page.
ROOT_OFFSET = 0
WATERMARK_OFFSET = 64
HEADER_SIZE = 4096
HEADER_TAG = "pool.header"


def magic_word(tag: bytes) -> int:
    """Encode an 8-byte ASCII magic (e.g. b"PCLHT001") as a pool word."""
    if len(tag) != WORD:
        raise ValueError("magic must be exactly 8 bytes")
    return int.from_bytes(tag, "little")


class EventKind(str, Enum):
    STORE = "store"
    FLUSH = "flush"
    FENCE = "fence"
    ALLOC = "alloc"
    FREE = "free"
    LOAD = "load"
    OP_BEGIN = "op_begin"
    OP_END = "op_end"


@dataclass(slots=True)
class PmEvent:
    seq: int
    kind: EventKind
    thread: int
    addr: int = 0
    old: int = 0
    new: int = 0
    length: int = 0
    op_id: int = 0
    site: str = ""
    publish: bool = False
    tag: str = ""

    @property
    def line(self) -> int:
        return self.addr // CACHE_LINE


@dataclass(frozen=True)
class LineState:
    line: int
    dirty_words: int
    flush_pending: bool

    @property
    def clean(self) -> bool:
        return self.dirty_words == 0


class CrashMode(str, Enum):
    STRICT = "strict"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class CrashPolicy:
    mode: CrashMode = CrashMode.STRICT
    seed: int = 0

    @classmethod
    def strict(cls) -> "CrashPolicy":
        return cls(CrashMode.STRICT, 0)

    @classmethod
    def adversarial(cls, seed: int) -> "CrashPolicy":
        return cls(CrashMode.ADVERSARIAL, seed)


class HookVerdict(str, Enum):
    CONTINUE = "continue"
    CRASH = "crash"


@dataclass(slots=True)
class OpCounters:
    clwb: int = 0
    mfence: int = 0
    stores: int = 0
    publishes: int = 0

    def copy(self) -> "OpCounters":
        return OpCounters(self.clwb, self.mfence, self.stores, self.publishes)

    def __add__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(
            self.clwb + other.clwb,
            self.mfence + other.mfence,
            self.stores + other.stores,
            self.publishes + other.publishes,
        )

    def __sub__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(
            self.clwb - other.clwb,
            self.mfence - other.mfence,
            self.stores - other.stores,
            self.publishes - other.publishes,
        )

    def as_dict(self) -> dict[str, int]:
        return {"clwb": self.clwb, "mfence": self.mfence, "stores": self.stores, "publishes": self.publishes}


@dataclass
class OpScope:
    """Handle returned by ``PmemPool.op_scope``; ``delta`` is filled on exit."""

    op_id: int
    name: str
    depth: int
    start: OpCounters
    delta: OpCounters | None = None


@dataclass(frozen=True)
class Allocation:
    addr: int
    len: int
    align: int = WORD
    tag: str = ""

    @property
    def end(self) -> int:
        return self.addr + self.len

    def contains(self, addr: int) -> bool:
        return self.addr <= addr < self.addr + self.len

    def as_dict(self) -> dict[str, object]:
        return {"addr": self.addr, "len": self.len, "tag": self.tag}


@dataclass
class ReachabilityReport:
    reachable: list[Allocation] = field(default_factory=list)
    leaked: list[Allocation] = field(default_factory=list)
    corrupt: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.corrupt

    def leak_entries(self) -> list[dict[str, object]]:
        return [a.as_dict() for a in self.leaked]
