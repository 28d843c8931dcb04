from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field

from pmindex.domain.models.keys import Key

BENCH_COLUMNS = [
    "index",
    "pattern",
    "phase",
    "key_type",
    "threads",
    "n",
    "ops_per_sec",
    "ops_per_sec_std",
    "clwb_per_op",
    "mfence_per_op",
    "seed",
    "repeat",
]


def key_repr(key: Key) -> str:
    if isinstance(key, int):
        return str(key)
    raw = bytes(key)
    text = raw.rstrip(b"\x00")
    return text.decode("ascii") if text.isascii() and text.decode("ascii").isprintable() else raw.hex()


class ValueMismatch(BaseModel):
    key: str
    expected: Optional[int] = None
    found: Optional[int] = None


class LeakEntry(BaseModel):
    addr: int
    len: int
    tag: str


class ConsistencyReport(BaseModel):
    model_config = ConfigDict(extra="forbid")
    lost_keys: list[str] = Field(default_factory=list)
    wrong_values: list[ValueMismatch] = Field(default_factory=list)
    post_crash_op_failures: list[str] = Field(default_factory=list)
    concurrent_read_failures: list[str] = Field(default_factory=list)
    range_failures: list[str] = Field(default_factory=list)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return not (
            self.lost_keys
            or self.wrong_values
            or self.post_crash_op_failures
            or self.concurrent_read_failures
            or self.range_failures
        )


class DurabilityReport(BaseModel):
    unflushed_dirty_lines: list[tuple[int, int]] = Field(default_factory=list)
    ops_checked: int = 0

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return not self.unflushed_dirty_lines


class StateFailure(BaseModel):
    state: int
    seed: int
    crash_point: Optional[dict[str, Any]] = None
    consistency: ConsistencyReport
    durability_violations: int = 0
    corrupt_pointers: int = 0
    artifact: Optional[str] = None


class CampaignReport(BaseModel):
    index: str
    policy: str
    mode: str
    key_type: str
    seed: int
    states: int
    load_n: int
    test_ops: int
    threads: int
    mutations: list[str] = Field(default_factory=list)
    crash_probability: float = 0.0
    crashed_states: int = 0
    failed_states: int = 0
    failures: list[StateFailure] = Field(default_factory=list)
    site_coverage: dict[str, int] = Field(default_factory=dict)
    sites_missing: list[str] = Field(default_factory=list)
    reader_restarts: int = 0
    helps: int = 0
    fixes: int = 0
    transient: int = 0
    interposed_ops: int = 0
    concurrent_read_failures: int = 0
    durability_violations: int = 0
    leaked_objects: int = 0
    corrupt_pointers: int = 0
    elapsed_s: float = 0.0
    ms_per_state: float = 0.0

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return self.failed_states == 0 and self.reader_restarts == 0

    def deterministic_dict(self) -> dict[str, Any]:
        """Everything except wall-clock fields."""
        return self.model_dump(exclude={"elapsed_s", "ms_per_state"})


class MinimizeResult(BaseModel):
    state: int
    seed: int
    crash_point: Optional[dict[str, Any]] = None
    failing: bool = False
    reproducible: bool = True
    original_ops: int
    minimized_ops: int
    ops: list[dict[str, Any]] = Field(default_factory=list)
    consistency: Optional[ConsistencyReport] = None


class BenchRow(BaseModel):
    index: str
    pattern: str
    phase: str
    key_type: str
    threads: int
    n: int
    ops_per_sec: float
    ops_per_sec_std: float = 0.0
    clwb_per_op: float
    mfence_per_op: float
    seed: int
    repeat: int = 1


class RunReport(BaseModel):
    rows: list[BenchRow] = Field(default_factory=list)
    verified_keys: int = 0
    missing_keys: list[str] = Field(default_factory=list)
    scope_counters: dict[str, dict[str, int]] = Field(default_factory=dict)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return not self.missing_keys
