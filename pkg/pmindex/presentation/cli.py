"""Command line entrypoint.

Usage:
  pmindex bench --index clht --workload a --keys randint --n 100000 --threads 4 --report out.json
  pmindex crashtest --index bwtree --states 1000 --policy adversarial --seed 7
  pmindex durability --index art --n 100000

Exit code 0 means every check of the invocation passed.
"""
from __future__ import annotations

import argparse
import sys
from typing import Sequence

import orjson

from pmindex.domain.indexes.interfaces import IndexKind, Mutation
from pmindex.domain.models.harness import CampaignConfig, CampaignMode
from pmindex.domain.models.keys import KeyType
from pmindex.domain.models.pm import CrashMode
from pmindex.domain.models.workload import Pattern, WorkloadSpec
from pmindex.lib.errors import DomainError
from pmindex.lib.metrics import bench_registry, campaign_registry, write_metrics
from pmindex.presentation.di import di
from pmindex.settings import settings
from pmindex.utils import get_logger, hardware_threads, setup_logging

LOGGER = get_logger("pmindex.cli")


def _choices(enum) -> list[str]:
    return [m.value for m in enum]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmindex", description="Persistent index benchmarks and crash testing")
    parser.add_argument("-v", "--verbose", action="store_true", help="Verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="Run a YCSB-style workload against one index")
    bench.add_argument("--index", required=True, choices=_choices(IndexKind))
    bench.add_argument("--workload", default=Pattern.A.value, choices=_choices(Pattern))
    bench.add_argument("--keys", default=KeyType.RANDINT.value, choices=_choices(KeyType))
    bench.add_argument("--n", type=int, default=settings.bench_n, help="Keys loaded / ops run")
    bench.add_argument("--threads", type=int, default=None, help="Worker threads (default: capped at CPU count)")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--scan-len", type=int, default=settings.scan_len_max, help="Max scan length for workload e")
    bench.add_argument("--repeat", type=int, default=1, help="Runs to average over")
    bench.add_argument("--report", default=None, help="Write the report here instead of stdout")
    bench.add_argument("--format", default="json", choices=["json", "csv"])
    bench.add_argument("--metrics", default=None, help="Also write Prometheus text format to this path")

    crash = sub.add_parser("crashtest", help="Run a crash-state campaign")
    crash.add_argument("--index", required=True, choices=_choices(IndexKind))
    crash.add_argument("--states", type=int, default=settings.campaign_states)
    crash.add_argument("--load-n", type=int, default=settings.campaign_load_n)
    crash.add_argument("--test-ops", type=int, default=settings.campaign_test_ops)
    crash.add_argument("--threads", type=int, default=settings.campaign_threads)
    crash.add_argument("--policy", default=CrashMode.STRICT.value, choices=_choices(CrashMode))
    crash.add_argument("--mode", default=CampaignMode.RANDOM.value, choices=_choices(CampaignMode))
    crash.add_argument("--seed", type=int, default=0)
    crash.add_argument("--keys", default=KeyType.RANDINT.value, choices=_choices(KeyType))
    crash.add_argument("--key-bits", type=int, default=settings.campaign_key_bits)
    crash.add_argument(
        "--key-alphabet", type=int, default=0, help="Build randint keys from this many byte values (0: uniform)"
    )
    crash.add_argument("--crash-probability", type=float, default=settings.crash_probability)
    crash.add_argument(
        "--crash-site", action="append", default=[], help="Only crash at stores from this site (repeatable)"
    )
    crash.add_argument(
        "--crash-interposed-only", action="store_true", help="Only crash at stores of interposed operations"
    )
    crash.add_argument(
        "--interpose-site", action="append", default=[], help="Only interpose after publishes at this site (repeatable)"
    )
    crash.add_argument("--mutation", action="append", default=[], choices=_choices(Mutation))
    crash.add_argument("--artifacts", default=settings.artifacts_dir, help="Directory for failing-state bundles")
    crash.add_argument("--minimize", type=int, default=None, metavar="STATE", help="Shrink one failing state")
    crash.add_argument("--report", default=None)
    crash.add_argument("--metrics", default=None)

    dur = sub.add_parser("durability", help="Check that every insert persists what it dirtied")
    dur.add_argument("--index", required=True, choices=_choices(IndexKind))
    dur.add_argument("--n", type=int, default=100_000)
    dur.add_argument("--seed", type=int, default=0)
    dur.add_argument("--keys", default=KeyType.RANDINT.value, choices=_choices(KeyType))
    dur.add_argument("--mutation", action="append", default=[], choices=_choices(Mutation))
    dur.add_argument("--report", default=None)
    return parser


def _emit(data: bytes, path: str | None) -> None:
    if path:
        with open(path, "wb") as f:
            f.write(data)
        LOGGER.info("report written to %s", path)
    else:
        sys.stdout.write(data.decode())
        sys.stdout.write("\n")


def _bench(args: argparse.Namespace) -> bool:
    threads = args.threads if args.threads is not None else hardware_threads(settings.bench_threads)
    spec = WorkloadSpec(
        pattern=Pattern(args.workload),
        key_type=KeyType(args.keys),
        n=args.n,
        threads=threads,
        seed=args.seed,
        scan_len_max=args.scan_len,
    )
    service = di.bench_service()
    report = service.run(args.index, spec, repeat=args.repeat)
    data = service.report(report, args.format, args.report)
    if not args.report:
        _emit(data, None)
    if args.metrics:
        write_metrics(bench_registry(report), args.metrics)
    return report.passed


def _crashtest(args: argparse.Namespace) -> bool:
    cfg = CampaignConfig(
        index=IndexKind(args.index),
        states=args.states,
        load_n=args.load_n,
        test_ops=args.test_ops,
        threads=args.threads,
        policy=CrashMode(args.policy),
        seed=args.seed,
        mode=CampaignMode(args.mode),
        key_type=KeyType(args.keys),
        key_bits=args.key_bits,
        key_alphabet=args.key_alphabet,
        pool_size=settings.campaign_pool_size,
        delete_fraction=settings.campaign_delete_fraction,
        interpose_probability=settings.interpose_probability,
        publish_boost=settings.publish_boost,
        crash_probability=args.crash_probability,
        crash_sites=tuple(args.crash_site),
        crash_interposed_only=args.crash_interposed_only,
        interpose_sites=tuple(args.interpose_site),
        mutations=tuple(Mutation(m) for m in args.mutation),
        artifacts_dir=args.artifacts,
    )
    service = di.crash_service()
    if args.minimize is not None:
        result = service.minimize(cfg, args.minimize)
        _emit(orjson.dumps(result.model_dump(), option=orjson.OPT_INDENT_2), args.report)
        return not result.failing
    report = service.run_campaign(cfg)
    _emit(orjson.dumps(report.model_dump(), option=orjson.OPT_INDENT_2), args.report)
    if args.metrics:
        write_metrics(campaign_registry(report), args.metrics)
    return report.passed


def _durability(args: argparse.Namespace) -> bool:
    report = di.durability_service().trace_inserts(
        args.index,
        args.n,
        seed=args.seed,
        key_type=KeyType(args.keys),
        mutations=tuple(Mutation(m) for m in args.mutation),
    )
    _emit(orjson.dumps(report.model_dump(), option=orjson.OPT_INDENT_2), args.report)
    return report.passed


COMMANDS = {"bench": _bench, "crashtest": _crashtest, "durability": _durability}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose or settings.verbose)
    try:
        ok = COMMANDS[args.command](args)
    except DomainError as e:
        LOGGER.error("%s: %s", e.code, e.message)
        return e.exit_code
    except (ValueError, OSError) as e:
        LOGGER.error("%s", e)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
