from __future__ import annotations

import sys
import threading

import pytest

from pmindex.application.services.bench_service import BenchService
from pmindex.domain.indexes.interfaces import IndexKind
from pmindex.domain.models.workload import Pattern, WorkloadSpec

THREADS = 4
PER_THREAD = 150


def _run_threads(target, n: int) -> list[BaseException]:
    errors: list[BaseException] = []

    def wrapped(i: int) -> None:
        try:
            target(i)
        except BaseException as e:
            errors.append(e)

    workers = [threading.Thread(target=wrapped, args=(i,)) for i in range(n)]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    return errors


@pytest.mark.parametrize("kind", list(IndexKind))
def test_disjoint_writers_end_with_the_union(kind, make_index):
    index = make_index(kind)

    def writer(i: int) -> None:
        base = 1 + i * 10_000
        for k in range(base, base + PER_THREAD):
            index.insert(k, k * 3)
        for k in range(base, base + PER_THREAD, 5):
            index.delete(k)

    assert _run_threads(writer, THREADS) == []
    expected = {
        k: k * 3
        for i in range(THREADS)
        for k in range(1 + i * 10_000, 1 + i * 10_000 + PER_THREAD)
        if (k - 1 - i * 10_000) % 5
    }
    assert dict(index.items()) == expected
    assert index.verify() == []


@pytest.mark.parametrize("kind", list(IndexKind))
def test_readers_see_every_preloaded_key_while_writers_run(kind, make_index):
    index = make_index(kind)
    preloaded = list(range(2, 600, 2))
    for k in preloaded:
        index.insert(k, k)
    rehashes = index.stats.rehashes
    stop = threading.Event()
    misses: list[int] = []

    def reader() -> None:
        while not stop.is_set():
            for k in preloaded:
                if index.lookup(k) != k:
                    misses.append(k)

    def writer(i: int) -> None:
        for k in range(1 + 2 * i, 600, 2 * THREADS):
            index.insert(k, k)
        if kind is IndexKind.CLHT and i == 0:
            # lookups race the table swap too
            index.rehash()

    readers = [threading.Thread(target=reader) for _ in range(2)]
    for r in readers:
        r.start()
    try:
        errors = _run_threads(writer, THREADS)
    finally:
        stop.set()
        for r in readers:
            r.join()
    assert errors == []
    assert misses == []
    assert len(index.items()) == 599
    if kind is IndexKind.CLHT:
        assert index.stats.rehashes > rehashes


@pytest.mark.skipif(getattr(sys, "_is_gil_enabled", lambda: True)(), reason="needs a free-threaded interpreter")
def test_throughput_scales_with_threads():
    bench = BenchService()
    rates = {}
    for threads in (1, 4):
        spec = WorkloadSpec(pattern=Pattern.C, n=20_000, threads=threads, seed=1)
        report = bench.run(IndexKind.CLHT, spec, pool_size=1 << 28)
        assert report.passed
        rates[threads] = report.rows[-1].ops_per_sec
    assert rates[4] > 1.5 * rates[1]
