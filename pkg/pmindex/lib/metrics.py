from __future__ import annotations

from pathlib import Path

from prometheus_client import CollectorRegistry, Gauge, generate_latest, write_to_textfile

from pmindex.schemas.reports import CampaignReport, RunReport

_ROW_LABELS = ["index", "pattern", "phase", "key_type", "threads"]


def bench_registry(report: RunReport) -> CollectorRegistry:
    registry = CollectorRegistry()
    ops = Gauge("pmindex_ops_per_second", "Mean throughput of a benchmark phase", _ROW_LABELS, registry=registry)
    ops_std = Gauge(
        "pmindex_ops_per_second_stddev", "Run-to-run deviation of phase throughput", _ROW_LABELS, registry=registry
    )
    clwb = Gauge("pmindex_clwb_per_op", "Cache-line flushes per write operation", _ROW_LABELS, registry=registry)
    mfence = Gauge("pmindex_mfence_per_op", "Fences per write operation", _ROW_LABELS, registry=registry)
    for row in report.rows:
        labels = dict(
            index=row.index, pattern=row.pattern, phase=row.phase, key_type=row.key_type, threads=str(row.threads)
        )
        ops.labels(**labels).set(row.ops_per_sec)
        ops_std.labels(**labels).set(row.ops_per_sec_std)
        clwb.labels(**labels).set(row.clwb_per_op)
        mfence.labels(**labels).set(row.mfence_per_op)

    scope = Gauge(
        "pmindex_scope_total", "Per-scope totals of the measured phase", ["scope", "counter"], registry=registry
    )
    for name, counters in report.scope_counters.items():
        for counter, value in counters.items():
            scope.labels(scope=name, counter=counter).set(value)
    Gauge("pmindex_missing_keys", "Inserted keys not found after the run", registry=registry).set(
        len(report.missing_keys)
    )
    return registry


def campaign_registry(report: CampaignReport) -> CollectorRegistry:
    registry = CollectorRegistry()
    labels = ["index", "policy", "mode"]
    values = {
        "states": report.states,
        "crashed_states": report.crashed_states,
        "failed_states": report.failed_states,
        "reader_restarts": report.reader_restarts,
        "helps": report.helps,
        "fixes": report.fixes,
        "transient": report.transient,
        "interposed_ops": report.interposed_ops,
        "durability_violations": report.durability_violations,
        "leaked_objects": report.leaked_objects,
    }
    for name, value in values.items():
        g = Gauge(f"pmindex_campaign_{name}", f"Crash campaign {name.replace('_', ' ')}", labels, registry=registry)
        g.labels(index=report.index, policy=report.policy, mode=report.mode).set(value)
    sites = Gauge("pmindex_campaign_site_crashes", "Crash points per store site", ["index", "site"], registry=registry)
    for site, n in report.site_coverage.items():
        sites.labels(index=report.index, site=site).set(n)
    return registry


def render(registry: CollectorRegistry) -> bytes:
    return generate_latest(registry)


def write_metrics(registry: CollectorRegistry, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(p), registry)
    return p
