from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from pmindex.domain.models.keys import Key, KeyType


class Pattern(str, Enum):
    LOADA = "loada"
    A = "a"
    B = "b"
    C = "c"
    E = "e"


class OpKind(str, Enum):
    INSERT = "insert"
    LOOKUP = "lookup"
    DELETE = "delete"
    SCAN = "scan"


# pattern -> (read, insert, scan) fractions of the run phase
MIXES: dict[Pattern, tuple[float, float, float]] = {
    Pattern.LOADA: (0.0, 1.0, 0.0),
    Pattern.A: (0.5, 0.5, 0.0),
    Pattern.B: (0.95, 0.05, 0.0),
    Pattern.C: (1.0, 0.0, 0.0),
    Pattern.E: (0.0, 0.05, 0.95),
}


@dataclass(frozen=True, slots=True)
class WorkloadOp:
    """One operation of a stream.

    ``ordinal`` is the op's position in its generated sequence and never
    changes when a sequence is trimmed, so per-op decisions keyed on it
    replay identically.
    """

    kind: OpKind
    key: Key
    value: int = 0
    end_key: Optional[Key] = None
    ordinal: int = 0


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: Pattern = Pattern.LOADA
    key_type: KeyType = KeyType.RANDINT
    n: int = 1_000_000
    threads: int = 1
    seed: int = 0
    scan_len_max: int = 100
    distribution: str = "uniform"

    def __post_init__(self) -> None:
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        object.__setattr__(self, "key_type", KeyType(self.key_type))
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.threads <= 0:
            raise ValueError("threads must be positive")
        if self.distribution != "uniform":
            raise ValueError("only the uniform key distribution is supported")

    @property
    def needs_range(self) -> bool:
        return MIXES[self.pattern][2] > 0


@dataclass
class Workload:
    """Per-thread op streams for the populate phase and the measured phase."""

    spec: WorkloadSpec
    load: list[list[WorkloadOp]] = field(default_factory=list)
    run: list[list[WorkloadOp]] = field(default_factory=list)

    def load_ops(self) -> list[WorkloadOp]:
        return [op for stream in self.load for op in stream]

    def run_ops(self) -> list[WorkloadOp]:
        return [op for stream in self.run for op in stream]

    def inserted_keys(self) -> dict[Key, int]:
        out: dict[Key, int] = {}
        for op in self.load_ops() + self.run_ops():
            if op.kind is OpKind.INSERT:
                out[op.key] = op.value
        return out
