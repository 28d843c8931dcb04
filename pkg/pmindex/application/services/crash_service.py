from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
import time
from typing import Optional, Sequence

import numpy as np
import orjson

from pmindex.application.services.durability_service import check_durability
from pmindex.application.services.workload_service import WorkloadService, split_streams
from pmindex.domain.indexes.interfaces import IndexKind, IndexStats
from pmindex.domain.models.harness import CampaignConfig, CampaignMode, CrashPoint, CrashState
from pmindex.domain.models.keys import Key
from pmindex.domain.models.pm import CrashPolicy, HookVerdict, PmEvent
from pmindex.domain.models.workload import OpKind, WorkloadOp
from pmindex.infrastructure.indexes.base import PersistentIndex
from pmindex.infrastructure.indexes.registry import index_class, open_index
from pmindex.infrastructure.pm.alloc import traced_allocations
from pmindex.infrastructure.pm.pool import PmemPool
from pmindex.lib.errors import SimulatedCrash
from pmindex.lib.hashing import combine, unit_interval
from pmindex.schemas.reports import (
    CampaignReport,
    ConsistencyReport,
    LeakEntry,
    MinimizeResult,
    StateFailure,
    ValueMismatch,
    key_repr,
)
from pmindex.utils import get_logger

logger = get_logger(__name__)

_INTERPOSE_SALT = 0x1A7E_5EED
_INSERT_SALT = 0x1A7E_0001


class _Acked:
    """Acknowledged key -> value, with O(1) random pick by position."""

    def __init__(self) -> None:
        self.values: dict[Key, int] = {}
        self.keys: list[Key] = []
        self._pos: dict[Key, int] = {}

    def put(self, key: Key, value: int) -> None:
        if key not in self._pos:
            self._pos[key] = len(self.keys)
            self.keys.append(key)
        self.values[key] = value

    def drop(self, key: Key) -> None:
        i = self._pos.pop(key, None)
        if i is None:
            return
        last = self.keys.pop()
        if i < len(self.keys):
            self.keys[i] = last
            self._pos[last] = i
        del self.values[key]


@dataclass
class _LoadState:
    acked: _Acked = field(default_factory=_Acked)
    deleted: set[Key] = field(default_factory=set)
    in_flight: set[Key] = field(default_factory=set)


class CampaignHook:
    """Crash-hook for one load phase.

    Crash and interposition decisions hash (state seed, op ordinal, store
    index within the op), so a trimmed op sequence that reaches the same
    store makes the same decision.
    """

    def __init__(
        self,
        *,
        seed: int,
        p: float = 0.0,
        publish_boost: float = 1.0,
        interpose_probability: float = 0.0,
        sweep_at: Optional[int] = None,
        replay: Optional[CrashPoint] = None,
        crash_sites: Sequence[str] = (),
        crash_interposed_only: bool = False,
        interpose_sites: Sequence[str] = (),
    ) -> None:
        self.seed = seed
        self.p = p
        self.publish_boost = publish_boost
        self.interpose_probability = interpose_probability
        self.sweep_at = sweep_at
        self.replay = replay
        self.crash_sites = frozenset(crash_sites)
        self.crash_interposed_only = crash_interposed_only
        self.interpose_sites = frozenset(interpose_sites)
        self.index: Optional[PersistentIndex] = None
        self.load: Optional[_LoadState] = None
        self.extra_keys: Sequence[Key] = ()
        self.ordinal = -1
        self.store_index = 0
        self.stores = 0
        self.publishes = 0
        # stores that may be chosen as the crash point, and the publishes among them
        self.candidates = 0
        self.candidate_publishes = 0
        self.sites: Counter[str] = Counter()
        self.crash_point: Optional[CrashPoint] = None
        self.interposed = 0
        self.read_failures: list[str] = []
        self._interposing = False

    def begin(self, ordinal: int) -> None:
        self.ordinal = ordinal
        self.store_index = 0

    def __call__(self, ev: PmEvent) -> HookVerdict:
        idx = self.store_index
        self.store_index += 1
        self.stores += 1
        if ev.publish:
            self.publishes += 1
        self.sites[ev.site] += 1
        candidate = self._is_candidate(ev)
        if candidate:
            self.candidates += 1
            if ev.publish:
                self.candidate_publishes += 1
        if self._should_crash(ev, idx, candidate):
            self.crash_point = CrashPoint(self.ordinal, idx, ev.site, ev.seq)
            logger.debug("crash at op %d store %d (%s)", self.ordinal, idx, ev.site)
            return HookVerdict.CRASH
        if (
            ev.publish
            and not self._interposing
            and self.index is not None
            and self.interpose_probability > 0
            and (not self.interpose_sites or ev.site in self.interpose_sites)
            and unit_interval(self.seed, self.ordinal, idx, _INTERPOSE_SALT) < self.interpose_probability
        ):
            self._interpose(idx)
        return HookVerdict.CONTINUE

    def _is_candidate(self, ev: PmEvent) -> bool:
        if self.crash_sites and ev.site not in self.crash_sites:
            return False
        return self._interposing or not self.crash_interposed_only

    def _should_crash(self, ev: PmEvent, idx: int, candidate: bool) -> bool:
        if self.replay is not None:
            return self.ordinal == self.replay.ordinal and idx == self.replay.store_index
        if not candidate:
            return False
        if self.sweep_at is not None:
            return self.candidates - 1 == self.sweep_at
        if self.p <= 0:
            return False
        p = self.p * (self.publish_boost if ev.publish else 1.0)
        return unit_interval(self.seed, self.ordinal, idx) < p

    def _interpose(self, idx: int) -> None:
        """Run another thread's operation right after a publish store."""
        index, load = self.index, self.load
        assert index is not None and load is not None
        self._interposing = True
        self.interposed += 1
        try:
            acked = load.acked
            if acked.keys:
                key = acked.keys[combine(self.seed, self.ordinal, idx, _INTERPOSE_SALT) % len(acked.keys)]
                if key not in load.in_flight:
                    expected = acked.values[key]
                    try:
                        found = index.lookup(key)
                    except Exception as e:
                        self.read_failures.append(f"lookup {key_repr(key)} during op {self.ordinal} raised {e!r}")
                    else:
                        if found != expected:
                            self.read_failures.append(
                                f"lookup {key_repr(key)} during op {self.ordinal}: expected {expected}, found {found}"
                            )
            if self.extra_keys:
                h = combine(self.seed, self.ordinal, idx, _INSERT_SALT)
                key = self.extra_keys[h % len(self.extra_keys)]
                value = (h >> 1) | 1
                load.in_flight.add(key)
                try:
                    index.insert(key, value)
                except Exception as e:
                    self.read_failures.append(f"insert {key_repr(key)} during op {self.ordinal} raised {e!r}")
                else:
                    acked.put(key, value)
                    load.deleted.discard(key)
                load.in_flight.discard(key)
        finally:
            self._interposing = False


@dataclass
class _LoadRun:
    state: CrashState
    hook: CampaignHook
    stats: IndexStats
    durability_violations: int


@dataclass
class _Verdict:
    consistency: ConsistencyReport
    durability_violations: int = 0
    corrupt_pointers: int = 0
    leaked: int = 0
    leaks: list[LeakEntry] = field(default_factory=list)
    # load phase plus single-threaded read-back; the threaded test phase only adds reader restarts
    stats: IndexStats = field(default_factory=IndexStats)
    reader_restarts: int = 0

    @property
    def failed(self) -> bool:
        return not self.consistency.passed or self.durability_violations > 0 or self.corrupt_pointers > 0


def _add_stats(total: IndexStats, more: IndexStats) -> None:
    for name, value in more.as_dict().items():
        setattr(total, name, getattr(total, name) + value)


class CrashService:
    """Crash-state campaigns: load with injected crashes, reopen, check, test, read back."""

    def __init__(self, workloads: WorkloadService | None = None) -> None:
        self.workloads = workloads or WorkloadService()

    # ------------------------------------------------------------------ state generation
    @staticmethod
    def state_seed(cfg: CampaignConfig, state_index: int) -> int:
        return combine(cfg.seed, state_index)

    def state_ops(self, cfg: CampaignConfig, state_seed: int) -> tuple[list[WorkloadOp], list[Key]]:
        """Load ops of a state and the key pool interposed inserts draw from."""
        ops = self.workloads.crash_load_ops(
            cfg.load_n,
            np.random.default_rng([state_seed, 0]),
            key_type=cfg.key_type,
            key_bits=cfg.key_bits,
            alphabet=cfg.key_alphabet,
            delete_fraction=cfg.delete_fraction,
        )
        extra: list[Key] = []
        if cfg.index is IndexKind.BWTREE and cfg.interpose_probability > 0:
            extra = self.workloads.unique_keys(
                cfg.key_type,
                max(1, cfg.load_n // 4),
                np.random.default_rng([state_seed, 1]),
                key_bits=cfg.key_bits,
                alphabet=cfg.key_alphabet,
                exclude={op.key for op in ops},
            )
        return ops, extra

    def _open(self, cfg: CampaignConfig, pool: PmemPool) -> PersistentIndex:
        return open_index(cfg.index, pool, key_type=cfg.key_type, mutations=cfg.mutations, **cfg.index_kwargs)

    def calibrate(self, cfg: CampaignConfig) -> tuple[float, int]:
        """Crash probability that puts two expected crashes in a load, and the store count of a clean load.

        Only crash candidates are weighed. With no candidate in the calibration
        state the probability is 1: the first candidate a state meets crashes it.
        """
        hook = self.run_load(cfg, 0).hook
        weighted = hook.candidates + (cfg.publish_boost - 1.0) * hook.candidate_publishes
        p = min(1.0, 2.0 / weighted) if weighted > 0 else 1.0
        logger.debug("calibrated crash probability %.3g over %d candidate stores", p, hook.candidates)
        return p, hook.stores

    @staticmethod
    def _apply(index: PersistentIndex, op: WorkloadOp) -> None:
        if op.kind is OpKind.INSERT:
            index.insert(op.key, op.value)
        elif op.kind is OpKind.DELETE:
            index.delete(op.key)
        elif op.kind is OpKind.LOOKUP:
            index.lookup(op.key)
        else:
            index.range_query(op.key, op.end_key if op.end_key is not None else op.key)

    def run_load(
        self,
        cfg: CampaignConfig,
        state_index: int,
        *,
        p: float = 0.0,
        sweep_at: Optional[int] = None,
        replay: Optional[CrashPoint] = None,
        ops: Optional[Sequence[WorkloadOp]] = None,
    ) -> _LoadRun:
        seed = self.state_seed(cfg, state_index)
        all_ops, extra = self.state_ops(cfg, seed)
        ops = list(all_ops if ops is None else ops)
        pool = PmemPool(cfg.pool_size, keep_log=True)
        index = self._open(cfg, pool)
        load = _LoadState()
        hook = CampaignHook(
            seed=seed,
            p=p,
            publish_boost=cfg.publish_boost,
            interpose_probability=cfg.interpose_probability,
            sweep_at=sweep_at,
            replay=replay,
            crash_sites=cfg.crash_sites,
            crash_interposed_only=cfg.crash_interposed_only,
            interpose_sites=cfg.interpose_sites,
        )
        hook.index, hook.load, hook.extra_keys = index, load, extra
        pool.set_crash_hook(hook)
        try:
            for op in ops:
                hook.begin(op.ordinal)
                load.in_flight.add(op.key)
                self._apply(index, op)
                if op.kind is OpKind.INSERT:
                    load.acked.put(op.key, op.value)
                    load.deleted.discard(op.key)
                elif op.kind is OpKind.DELETE:
                    load.acked.drop(op.key)
                    load.deleted.add(op.key)
                load.in_flight.discard(op.key)
        except SimulatedCrash:
            pass
        finally:
            pool.set_crash_hook(None)

        events = pool.events
        durability = check_durability(events, index.volatile_words)
        state = CrashState(
            state_index=state_index,
            seed=seed,
            snapshot=pool.persisted_view(CrashPolicy(cfg.policy, seed)),
            acked=dict(load.acked.values),
            deleted=set(load.deleted),
            in_flight=set(load.in_flight),
            crash_point=hook.crash_point,
            allocations=traced_allocations(events),
            ops=ops,
        )
        return _LoadRun(state, hook, index.stats, len(durability.unflushed_dirty_lines))

    # ------------------------------------------------------------------ checking
    def check_consistency(self, cfg: CampaignConfig, state: CrashState) -> ConsistencyReport:
        """Reopen a crash state, read back, run the post-crash test phase and read back again."""
        return self._verify(cfg, state).consistency

    def _verify(self, cfg: CampaignConfig, state: CrashState) -> _Verdict:
        report = ConsistencyReport()
        verdict = _Verdict(report)
        pool = PmemPool.from_snapshot(state.snapshot, keep_log=False)
        try:
            index = self._open(cfg, pool)
        except Exception as e:
            report.post_crash_op_failures.append(f"reopen raised {e!r}")
            return verdict

        if state.allocations:
            try:
                reach = index.allocator.reachability_report(index.roots(), index.children, state.allocations)
            except Exception as e:
                verdict.corrupt_pointers = 1
                report.post_crash_op_failures.append(f"reachability walk raised {e!r}")
            else:
                verdict.corrupt_pointers = len(reach.corrupt)
                verdict.leaked = len(reach.leaked)
                verdict.leaks = [LeakEntry.model_validate(e) for e in reach.leak_entries()]

        expected = {k: v for k, v in state.acked.items() if k not in state.in_flight}
        absent = [k for k in sorted(state.deleted, key=key_repr) if k not in state.in_flight and k not in expected]
        self._read_back(index, expected, absent, report)
        _add_stats(verdict.stats, index.stats)
        before = index.stats.reader_restarts

        if cfg.test_ops:
            fresh = self._test_phase(cfg, state, index, expected, report)
            expected.update(fresh)
            self._read_back(index, expected, absent, report)
        if index.ordered:
            self._check_range(index, expected, state.in_flight, report)
        verdict.reader_restarts = index.stats.reader_restarts - before + verdict.stats.reader_restarts
        return verdict

    @staticmethod
    def _read_back(
        index: PersistentIndex, expected: dict[Key, int], absent: Sequence[Key], report: ConsistencyReport
    ) -> None:
        for key, value in expected.items():
            try:
                found = index.lookup(key)
            except Exception as e:
                report.post_crash_op_failures.append(f"lookup {key_repr(key)} raised {e!r}")
                continue
            if found is None:
                report.lost_keys.append(key_repr(key))
            elif found != value:
                report.wrong_values.append(ValueMismatch(key=key_repr(key), expected=value, found=found))
        for key in absent:
            try:
                found = index.lookup(key)
            except Exception as e:
                report.post_crash_op_failures.append(f"lookup {key_repr(key)} raised {e!r}")
                continue
            if found is not None:
                report.wrong_values.append(ValueMismatch(key=key_repr(key), expected=None, found=found))

    def _test_phase(
        self,
        cfg: CampaignConfig,
        state: CrashState,
        index: PersistentIndex,
        expected: dict[Key, int],
        report: ConsistencyReport,
    ) -> dict[Key, int]:
        used = {op.key for op in state.ops} | set(state.acked) | state.deleted | state.in_flight
        ops = self.workloads.crash_test_ops(
            cfg.test_ops,
            np.random.default_rng([state.seed, 2]),
            list(expected),
            key_type=cfg.key_type,
            key_bits=cfg.key_bits,
            alphabet=cfg.key_alphabet,
            exclude=used,
        )

        def worker(stream: list[WorkloadOp]) -> tuple[dict[Key, int], list[str]]:
            acked: dict[Key, int] = {}
            failures: list[str] = []
            for op in stream:
                try:
                    if op.kind is OpKind.INSERT:
                        index.insert(op.key, op.value)
                        acked[op.key] = op.value
                    else:
                        found = index.lookup(op.key)
                        if found != expected[op.key]:
                            failures.append(f"lookup {key_repr(op.key)}: expected {expected[op.key]}, found {found}")
                except Exception as e:
                    failures.append(f"{op.kind.value} {key_repr(op.key)} raised {e!r}")
            return acked, failures

        fresh: dict[Key, int] = {}
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for acked, failures in pool.map(worker, split_streams(ops, cfg.threads)):
                fresh.update(acked)
                report.post_crash_op_failures.extend(sorted(failures))
        return fresh

    @staticmethod
    def _check_range(
        index: PersistentIndex, expected: dict[Key, int], in_flight: set[Key], report: ConsistencyReport
    ) -> None:
        try:
            got = index.range_query(index.codec.min_key, index.codec.max_key)
        except Exception as e:
            report.range_failures.append(f"full range query raised {e!r}")
            return
        got = [(k, v) for k, v in got if k not in in_flight]
        want = sorted(expected.items())  # type: ignore[arg-type]
        if got == want:
            return
        got_keys = [k for k, _ in got]
        seen = set(got_keys)
        missing = sum(1 for k in expected if k not in seen)
        unexpected = sum(1 for k in seen if k not in expected)
        report.range_failures.append(
            f"full range returned {len(got)} entries, expected {len(want)} "
            f"(missing {missing}, unexpected {unexpected}, duplicates {len(got_keys) - len(seen)})"
        )

    # ------------------------------------------------------------------ campaigns
    def run_state(
        self,
        cfg: CampaignConfig,
        state_index: int,
        *,
        p: float = 0.0,
        sweep_at: Optional[int] = None,
        replay: Optional[CrashPoint] = None,
        ops: Optional[Sequence[WorkloadOp]] = None,
    ) -> tuple[_LoadRun, _Verdict]:
        run = self.run_load(cfg, state_index, p=p, sweep_at=sweep_at, replay=replay, ops=ops)
        verdict = self._verify(cfg, run.state)
        verdict.consistency.concurrent_read_failures.extend(run.hook.read_failures)
        verdict.durability_violations = run.durability_violations
        _add_stats(verdict.stats, run.stats)
        verdict.reader_restarts += run.stats.reader_restarts
        return run, verdict

    def sweep_point(self, cfg: CampaignConfig, state_index: int) -> Optional[int]:
        """Candidate store to crash state ``state_index`` at, counted in a crash-free run of that same state."""
        candidates = self.run_load(cfg, state_index).hook.candidates
        if not candidates:
            return None
        return min(candidates - 1, int((state_index + 0.5) * candidates / cfg.states))

    def run_campaign(self, cfg: CampaignConfig) -> CampaignReport:
        started = time.perf_counter()
        cls = index_class(cfg.index)
        p = 0.0
        if cfg.states:
            p = cfg.crash_probability if cfg.crash_probability is not None else self.calibrate(cfg)[0]
        report = CampaignReport(
            index=cfg.index.value,
            policy=cfg.policy.value,
            mode=cfg.mode.value,
            key_type=cfg.key_type.value,
            seed=cfg.seed,
            states=cfg.states,
            load_n=cfg.load_n,
            test_ops=cfg.test_ops,
            threads=cfg.threads,
            mutations=[m.value for m in cfg.mutations],
            crash_probability=p,
        )
        logger.info(
            "campaign %s: %d states, policy=%s, mode=%s, p=%.3g",
            cfg.index.value,
            cfg.states,
            cfg.policy.value,
            cfg.mode.value,
            p,
        )
        coverage: Counter[str] = Counter()
        stored: set[str] = set()
        for s in range(cfg.states):
            sweep_at = self.sweep_point(cfg, s) if cfg.mode is CampaignMode.SWEEP else None
            run, verdict = self.run_state(cfg, s, p=0.0 if sweep_at is not None else p, sweep_at=sweep_at)
            stored.update(run.hook.sites)
            cp = run.state.crash_point
            if cp is not None:
                report.crashed_states += 1
                coverage[cp.site] += 1
            report.interposed_ops += run.hook.interposed
            report.concurrent_read_failures += len(verdict.consistency.concurrent_read_failures)
            report.durability_violations += verdict.durability_violations
            report.leaked_objects += verdict.leaked
            report.corrupt_pointers += verdict.corrupt_pointers
            report.reader_restarts += verdict.reader_restarts
            report.helps += verdict.stats.helps
            report.fixes += verdict.stats.fixes
            report.transient += verdict.stats.transient
            if verdict.failed:
                report.failed_states += 1
                artifact = self._write_artifact(cfg, run.state, verdict)
                report.failures.append(
                    StateFailure(
                        state=s,
                        seed=run.state.seed,
                        crash_point=cp.as_dict() if cp else None,
                        consistency=verdict.consistency,
                        durability_violations=verdict.durability_violations,
                        corrupt_pointers=verdict.corrupt_pointers,
                        artifact=artifact,
                    )
                )
                logger.warning(
                    "state %d failed (crash point %s): lost=%d wrong=%d op_failures=%d durability=%d",
                    s,
                    cp.as_dict() if cp else None,
                    len(verdict.consistency.lost_keys),
                    len(verdict.consistency.wrong_values),
                    len(verdict.consistency.post_crash_op_failures),
                    verdict.durability_violations,
                )
        report.site_coverage = dict(sorted(coverage.items()))
        report.sites_missing = [site for site in cls.CRASH_SITES if site not in stored] if cfg.states else []
        report.elapsed_s = time.perf_counter() - started
        report.ms_per_state = 1000.0 * report.elapsed_s / cfg.states if cfg.states else 0.0
        log = logger.info if report.passed else logger.warning
        log(
            "campaign %s %s: %d/%d states crashed, %d failed, %.1f ms/state",
            cfg.index.value,
            "passed" if report.passed else "FAILED",
            report.crashed_states,
            cfg.states,
            report.failed_states,
            report.ms_per_state,
        )
        return report

    def _write_artifact(self, cfg: CampaignConfig, state: CrashState, verdict: _Verdict) -> Optional[str]:
        if not cfg.artifacts_dir:
            return None
        out = Path(cfg.artifacts_dir) / f"{cfg.index.value}-{cfg.seed}-{state.state_index}"
        out.mkdir(parents=True, exist_ok=True)
        state.snapshot.to_file(out / "pool.pmpool")
        meta = {
            "index": cfg.index.value,
            "seed": cfg.seed,
            "state": state.state_index,
            "state_seed": state.seed,
            "policy": cfg.policy.value,
            "mode": cfg.mode.value,
            "key_type": cfg.key_type.value,
            "key_bits": cfg.key_bits,
            "key_alphabet": cfg.key_alphabet,
            "crash_sites": list(cfg.crash_sites),
            "crash_interposed_only": cfg.crash_interposed_only,
            "interpose_sites": list(cfg.interpose_sites),
            "load_n": cfg.load_n,
            "mutations": [m.value for m in cfg.mutations],
            "crash_point": state.crash_point.as_dict() if state.crash_point else None,
            "consistency": verdict.consistency.model_dump(),
            "durability_violations": verdict.durability_violations,
            "leaked": [e.model_dump() for e in verdict.leaks],
        }
        (out / "meta.json").write_bytes(orjson.dumps(meta, option=orjson.OPT_INDENT_2))
        return str(out)

    # ------------------------------------------------------------------ minimization
    def minimize(self, cfg: CampaignConfig, state_index: int, *, p: Optional[float] = None) -> MinimizeResult:
        """Shrink a failing state to a short op sequence that still fails at the same crash point."""
        if p is None:
            p = cfg.crash_probability if cfg.crash_probability is not None else self.calibrate(cfg)[0]
        run, verdict = self.run_state(cfg, state_index, p=p)
        ops = run.state.ops
        cp = run.state.crash_point
        result = MinimizeResult(
            state=state_index,
            seed=run.state.seed,
            crash_point=cp.as_dict() if cp else None,
            original_ops=len(ops),
            minimized_ops=len(ops),
        )
        if not verdict.failed:
            result.consistency = verdict.consistency
            return result
        result.failing = True

        def fails(candidate: list[WorkloadOp]) -> bool:
            return self.run_state(cfg, state_index, replay=cp, ops=candidate)[1].failed

        if cp is not None:
            prefix = [op for op in ops if op.ordinal < cp.ordinal]
            tail = [op for op in ops if op.ordinal == cp.ordinal]
        else:
            prefix, tail = list(ops), []
        if not fails(prefix + tail):
            result.reproducible = False
            logger.warning("state %d failure did not reproduce on replay", state_index)
            return result

        n = 2
        while prefix:
            chunk = -(-len(prefix) // n)
            for i in range(0, len(prefix), chunk):
                candidate = prefix[:i] + prefix[i + chunk :]
                if fails(candidate + tail):
                    prefix = candidate
                    n = max(n - 1, 2)
                    break
            else:
                if chunk == 1:
                    break
                n = min(len(prefix), 2 * n)

        final = prefix + tail
        _, last = self.run_state(cfg, state_index, replay=cp, ops=final)
        result.minimized_ops = len(final)
        result.ops = [
            {"ordinal": op.ordinal, "kind": op.kind.value, "key": key_repr(op.key), "value": op.value} for op in final
        ]
        result.consistency = last.consistency
        logger.info("state %d minimized from %d to %d ops", state_index, len(ops), len(final))
        return result


__all__ = ["CampaignHook", "CrashService"]
