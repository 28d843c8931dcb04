from __future__ import annotations

import io
from pathlib import Path
import threading
import time
from typing import Optional, Sequence

import numpy as np
import orjson
import pandas as pd

from pmindex.application.services.workload_service import WorkloadService
from pmindex.domain.indexes.interfaces import IndexKind
from pmindex.domain.models.keys import KeyType
from pmindex.domain.models.pm import OpCounters
from pmindex.domain.models.workload import OpKind, Workload, WorkloadOp, WorkloadSpec
from pmindex.infrastructure.indexes.base import PersistentIndex
from pmindex.infrastructure.indexes.registry import index_class, open_index
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import DomainError, SpecRejectedError
from pmindex.schemas.reports import BENCH_COLUMNS, BenchRow, RunReport, key_repr
from pmindex.utils import get_logger

logger = get_logger(__name__)


class _Phase:
    def __init__(self, name: str, streams: list[list[WorkloadOp]]) -> None:
        self.name = name
        self.streams = streams
        self.ops = sum(len(s) for s in streams)
        self.inserts = sum(1 for s in streams for op in s if op.kind is OpKind.INSERT)


def _execute(index: PersistentIndex, stream: Sequence[WorkloadOp], barrier: threading.Barrier) -> None:
    barrier.wait()
    for op in stream:
        if op.kind is OpKind.INSERT:
            index.insert(op.key, op.value)
        elif op.kind is OpKind.LOOKUP:
            index.lookup(op.key)
        elif op.kind is OpKind.SCAN:
            index.range_query(op.key, op.end_key if op.end_key is not None else op.key)
        else:
            index.delete(op.key)


def per_op(totals: dict[str, tuple[int, OpCounters]], ops: int) -> tuple[float, float, str]:
    """Average flushes and fences over the inserts of a phase, or over all its ops when it has none."""
    n, c = totals.get("insert", (0, OpCounters()))
    if n:
        return c.clwb / n, c.mfence / n, "insert"
    total = OpCounters()
    for _, counters in totals.values():
        total = total + counters
    return (total.clwb / ops, total.mfence / ops, "op") if ops else (0.0, 0.0, "op")


class BenchService:
    """Populate-then-run benchmark of one index under a YCSB-style workload."""

    def __init__(self, workloads: WorkloadService | None = None) -> None:
        self.workloads = workloads or WorkloadService()

    @staticmethod
    def check_supported(kind: IndexKind | str, spec: WorkloadSpec) -> None:
        cls = index_class(kind)
        if spec.needs_range and not cls.ordered:
            raise SpecRejectedError(f"{cls.kind.value} has no range queries: workload {spec.pattern.value} rejected")
        if cls.kind is IndexKind.CLHT and spec.key_type is not KeyType.RANDINT:
            raise SpecRejectedError("clht stores 8-byte integer keys only")

    def run(
        self,
        kind: IndexKind | str,
        spec: WorkloadSpec,
        *,
        repeat: int = 1,
        pool_size: Optional[int] = None,
        index_kwargs: Optional[dict] = None,
    ) -> RunReport:
        kind = IndexKind(kind)
        self.check_supported(kind, spec)
        workload = self.workloads.generate(spec)
        phases = [_Phase("load", workload.load), _Phase("run", workload.run)]
        phases = [p for p in phases if p.ops]
        rates: dict[str, list[float]] = {p.name: [] for p in phases}
        costs: dict[str, list[tuple[float, float]]] = {p.name: [] for p in phases}
        report = RunReport()
        for r in range(max(1, repeat)):
            pool = PmemPool(pool_size, keep_log=False)
            index = open_index(kind, pool, key_type=spec.key_type, **(index_kwargs or {}))
            for phase in phases:
                elapsed = self._run_phase(pool, index, phase)
                totals = pool.scope_totals()
                clwb, mfence, unit = per_op(totals, phase.ops)
                rates[phase.name].append(phase.ops / elapsed if elapsed > 0 else 0.0)
                costs[phase.name].append((clwb, mfence))
                logger.info(
                    "%s %s/%s run %d: %.0f ops/s, %.2f clwb and %.2f mfence per %s",
                    kind.value,
                    spec.pattern.value,
                    phase.name,
                    r,
                    rates[phase.name][-1],
                    clwb,
                    mfence,
                    unit,
                )
                if phase.name == "run" or len(phases) == 1:
                    report.scope_counters = {
                        name: {"ops": n, **c.as_dict()} for name, (n, c) in sorted(totals.items())
                    }
            if r == 0:
                self._verify(index, workload, report)

        for phase in phases:
            rate = np.asarray(rates[phase.name], dtype=float)
            cost = np.asarray(costs[phase.name], dtype=float)
            report.rows.append(
                BenchRow(
                    index=kind.value,
                    pattern=spec.pattern.value,
                    phase=phase.name,
                    key_type=spec.key_type.value,
                    threads=spec.threads,
                    n=phase.ops,
                    ops_per_sec=float(rate.mean()),
                    ops_per_sec_std=float(rate.std()),
                    clwb_per_op=float(cost[:, 0].mean()),
                    mfence_per_op=float(cost[:, 1].mean()),
                    seed=spec.seed,
                    repeat=max(1, repeat),
                )
            )
        return report

    @staticmethod
    def _run_phase(pool: PmemPool, index: PersistentIndex, phase: _Phase) -> float:
        pool.reset_scope_totals()
        barrier = threading.Barrier(len(phase.streams) + 1)
        errors: list[BaseException] = []

        def target(stream: list[WorkloadOp]) -> None:
            try:
                _execute(index, stream, barrier)
            except BaseException as e:  # re-raised on the caller's thread
                errors.append(e)

        workers = [threading.Thread(target=target, args=(s,), daemon=True) for s in phase.streams]
        for w in workers:
            w.start()
        barrier.wait()
        started = time.perf_counter()
        for w in workers:
            w.join()
        elapsed = time.perf_counter() - started
        if errors:
            raise errors[0]
        return elapsed

    @staticmethod
    def _verify(index: PersistentIndex, workload: Workload, report: RunReport) -> None:
        for key, value in workload.inserted_keys().items():
            if index.lookup(key) != value:
                report.missing_keys.append(key_repr(key))
            else:
                report.verified_keys += 1
        if report.missing_keys:
            logger.warning("%d inserted keys not retrievable after the run", len(report.missing_keys))

    # ------------------------------------------------------------------ output
    @staticmethod
    def render(report: RunReport, fmt: str = "json") -> bytes:
        if fmt == "json":
            return orjson.dumps(report.model_dump(), option=orjson.OPT_INDENT_2)
        if fmt == "csv":
            df = pd.DataFrame([row.model_dump() for row in report.rows], columns=BENCH_COLUMNS)
            buf = io.StringIO()
            df.to_csv(buf, index=False)
            return buf.getvalue().encode()
        raise ValueError(f"unknown report format {fmt!r}")

    def report(self, report: RunReport, fmt: str = "json", path: str | Path | None = None) -> bytes:
        data = self.render(report, fmt)
        if path is not None:
            p = Path(path)
            try:
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_bytes(data)
            except OSError as e:
                raise DomainError(f"cannot write report {p}: {e}", code="report_io") from e
        return data


__all__ = ["BenchService", "per_op"]
