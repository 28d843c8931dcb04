from __future__ import annotations

import io

import orjson
import pandas as pd
from prometheus_client.parser import text_string_to_metric_families
import pytest

from pmindex.application.services.bench_service import BenchService, per_op
from pmindex.domain.indexes.interfaces import IndexKind
from pmindex.domain.models.keys import KeyType
from pmindex.domain.models.pm import OpCounters
from pmindex.domain.models.workload import Pattern, WorkloadSpec
from pmindex.infrastructure.indexes.clht import PClht
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import DomainError, SpecRejectedError
from pmindex.lib.metrics import bench_registry, campaign_registry, render
from pmindex.schemas.reports import BENCH_COLUMNS, CampaignReport, RunReport

POOL = 256 << 20


@pytest.fixture
def bench() -> BenchService:
    return BenchService()


@pytest.mark.parametrize("kind", list(IndexKind))
def test_load_then_run_verifies_every_inserted_key(kind, bench):
    report = bench.run(kind, WorkloadSpec(pattern=Pattern.A, n=400, threads=2, seed=4), pool_size=POOL)
    assert report.passed
    assert report.verified_keys == 600
    assert [row.phase for row in report.rows] == ["load", "run"]
    assert all(row.ops_per_sec > 0 for row in report.rows)


def test_loada_has_only_a_run_phase(bench):
    report = bench.run("art", WorkloadSpec(pattern=Pattern.LOADA, n=300), pool_size=POOL)
    assert [row.phase for row in report.rows] == ["run"]
    assert report.scope_counters["insert"]["ops"] == 300


def test_clht_insert_costs(bench):
    report = bench.run(
        IndexKind.CLHT,
        WorkloadSpec(pattern=Pattern.LOADA, n=500),
        pool_size=POOL,
        index_kwargs={"initial_bytes": 1 << 16, "chain_threshold": 64},
    )
    [row] = report.rows
    assert row.clwb_per_op == pytest.approx(1.0, abs=0.05)
    assert row.mfence_per_op == pytest.approx(2.0, abs=0.05)


def test_art_insert_flushes_a_few_lines(bench):
    report = bench.run(IndexKind.ART, WorkloadSpec(pattern=Pattern.LOADA, n=1000), pool_size=POOL)
    [row] = report.rows
    # every insert persists a new leaf and then the link that publishes it
    assert row.clwb_per_op >= 2.0
    assert row.mfence_per_op >= 2.0


def test_same_seed_same_counters(bench):
    spec = WorkloadSpec(pattern=Pattern.B, n=300, seed=9)
    a = bench.run(IndexKind.BWTREE, spec, pool_size=POOL)
    b = bench.run(IndexKind.BWTREE, spec, pool_size=POOL)
    assert [(r.clwb_per_op, r.mfence_per_op) for r in a.rows] == [(r.clwb_per_op, r.mfence_per_op) for r in b.rows]
    assert a.scope_counters == b.scope_counters


def test_scan_workload_on_ordered_indexes(bench):
    report = bench.run(IndexKind.BWTREE, WorkloadSpec(pattern=Pattern.E, n=200, scan_len_max=20), pool_size=POOL)
    assert report.passed
    assert report.scope_counters["range"]["ops"] == 190


def test_unsupported_combinations_are_rejected(bench):
    with pytest.raises(SpecRejectedError):
        bench.run(IndexKind.CLHT, WorkloadSpec(pattern=Pattern.E, n=10))
    with pytest.raises(SpecRejectedError):
        bench.run(IndexKind.CLHT, WorkloadSpec(pattern=Pattern.A, key_type=KeyType.STRING, n=10))


def test_scope_totals_add_up_to_global_counters():
    pool = PmemPool(POOL)
    index = PClht(pool, initial_bytes=1 << 16)
    pool.reset_scope_totals()
    before = pool.counters
    for k in range(1, 300):
        index.insert(k, k)
        index.lookup(k)
    total = OpCounters()
    for _, counters in pool.scope_totals().values():
        total = total + counters
    assert total == pool.counters - before


def test_per_op_prefers_inserts():
    totals = {"insert": (4, OpCounters(clwb=8, mfence=4)), "lookup": (6, OpCounters())}
    assert per_op(totals, 10) == (2.0, 1.0, "insert")
    assert per_op({"lookup": (5, OpCounters(clwb=5))}, 5) == (1.0, 0.0, "op")
    assert per_op({}, 0) == (0.0, 0.0, "op")


def test_csv_and_json_reports(bench, tmp_path):
    report = bench.run(IndexKind.CLHT, WorkloadSpec(pattern=Pattern.C, n=100), pool_size=POOL)
    frame = pd.read_csv(io.BytesIO(bench.render(report, "csv")))
    assert list(frame.columns) == BENCH_COLUMNS
    assert list(frame["phase"]) == ["load", "run"]
    data = orjson.loads(bench.report(report, "json", tmp_path / "out" / "r.json"))
    assert data["rows"][0]["index"] == "clht"
    assert (tmp_path / "out" / "r.json").exists()
    with pytest.raises(ValueError):
        bench.render(report, "xml")


def test_empty_report_csv_is_header_only(bench):
    assert bench.render(RunReport(), "csv").decode().strip() == ",".join(BENCH_COLUMNS)


def test_unwritable_report_path(bench, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DomainError):
        bench.report(RunReport(), "json", blocker / "r.json")


def _families(text: str) -> dict:
    return {f.name: f for f in text_string_to_metric_families(text)}


def test_prometheus_rendering(bench):
    report = bench.run(IndexKind.CLHT, WorkloadSpec(pattern=Pattern.LOADA, n=50), pool_size=POOL)
    families = _families(render(bench_registry(report)).decode())
    assert [s.labels["index"] for s in families["pmindex_clwb_per_op"].samples] == ["clht"]
    assert families["pmindex_scope_total"].samples
    campaign = CampaignReport(
        index="art", policy="strict", mode="random", key_type="randint", seed=0, states=1, load_n=1, test_ops=1,
        threads=1, site_coverage={"art.child": 1},
    )
    families = _families(render(campaign_registry(campaign)).decode())
    [failed] = families["pmindex_campaign_failed_states"].samples
    assert failed.labels == {"index": "art", "policy": "strict", "mode": "random"}
    assert failed.value == 0.0
    [site] = families["pmindex_campaign_site_crashes"].samples
    assert site.labels == {"index": "art", "site": "art.child"} and site.value == 1.0
