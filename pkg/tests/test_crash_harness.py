from __future__ import annotations

from pathlib import Path

import orjson
import pytest

from pmindex.application.services.crash_service import CampaignHook, CrashService
from pmindex.domain.indexes.interfaces import IndexKind, Mutation
from pmindex.domain.models.harness import CampaignConfig, CampaignMode, CrashPoint, CrashState
from pmindex.domain.models.keys import KeyType, string_key
from pmindex.domain.models.pm import CrashMode
from pmindex.infrastructure.indexes.clht import PClht
from pmindex.infrastructure.pm.pool import PmemPool, PoolSnapshot
from pmindex.lib.errors import SimulatedCrash
from pmindex.schemas.reports import key_repr


@pytest.fixture
def crash_service() -> CrashService:
    return CrashService()


@pytest.mark.parametrize("policy", list(CrashMode))
@pytest.mark.parametrize("kind", list(IndexKind))
def test_small_campaign_passes(kind, policy, crash_service, campaign_config):
    report = crash_service.run_campaign(campaign_config(kind, states=6, policy=policy))
    assert report.failures == []
    assert report.passed
    assert report.crashed_states >= 1
    assert report.durability_violations == 0
    assert report.corrupt_pointers == 0
    assert 0 < report.crash_probability <= 1


@pytest.mark.parametrize("kind", list(IndexKind))
def test_sweep_mode_crashes_every_state(kind, crash_service, campaign_config):
    report = crash_service.run_campaign(campaign_config(kind, states=5, mode=CampaignMode.SWEEP))
    assert report.crashed_states == 5
    assert report.passed
    assert sum(report.site_coverage.values()) == 5


def test_string_key_campaign(crash_service, campaign_config):
    report = crash_service.run_campaign(campaign_config(IndexKind.ART, states=3, key_type=KeyType.STRING))
    assert report.passed


def test_key_repr_of_string_and_raw_keys():
    assert key_repr(string_key(5)) == "user00000000000000000005"
    assert key_repr(b"\x01\x02") == "0102"
    assert key_repr(42) == "42"


def test_string_key_campaign_with_deletes(crash_service, campaign_config):
    cfg = campaign_config(IndexKind.BWTREE, states=3, key_type=KeyType.STRING, delete_fraction=0.3)
    report = crash_service.run_campaign(cfg)
    assert report.passed


def test_no_crash_states_pass(crash_service, campaign_config):
    report = crash_service.run_campaign(campaign_config(IndexKind.CLHT, states=1, crash_probability=0.0))
    assert report.crashed_states == 0
    assert report.passed


def test_zero_states_is_an_empty_pass(crash_service, campaign_config):
    report = crash_service.run_campaign(campaign_config(IndexKind.ART, states=0))
    assert report.passed and report.crashed_states == 0 and report.sites_missing == []


def test_reports_are_deterministic(crash_service, campaign_config):
    cfg = campaign_config(IndexKind.BWTREE, states=4)
    first = crash_service.run_campaign(cfg).deterministic_dict()
    second = crash_service.run_campaign(cfg).deterministic_dict()
    assert first == second


def test_clht_skipped_persist_is_detected(crash_service, campaign_config, tmp_path):
    cfg = campaign_config(
        IndexKind.CLHT,
        states=3,
        crash_probability=0.0,
        mutations=(Mutation.CLHT_SKIP_INSERT_PERSIST,),
        artifacts_dir=str(tmp_path),
    )
    report = crash_service.run_campaign(cfg)
    assert not report.passed
    assert report.failed_states == 3
    assert report.durability_violations > 0
    bundle = Path(report.failures[0].artifact)
    meta = orjson.loads((bundle / "meta.json").read_bytes())
    assert meta["mutations"] == ["clht_skip_insert_persist"]
    assert isinstance(meta["leaked"], list)
    assert PoolSnapshot.from_file(bundle / "pool.pmpool").size == cfg.pool_size


def _bwtree_helper_window(campaign_config, policy, mutations):
    """Every split gets a concurrent writer; crashes land on that writer's own insert, after it has helped."""
    return campaign_config(
        IndexKind.BWTREE,
        states=16,
        policy=policy,
        crash_probability=1.0,
        interpose_probability=1.0,
        interpose_sites=("bwtree.split_delta",),
        crash_sites=("bwtree.insert_delta",),
        crash_interposed_only=True,
        mutations=mutations,
    )


@pytest.mark.parametrize("policy", list(CrashMode))
def test_bwtree_helper_window_passes(policy, crash_service, campaign_config):
    report = crash_service.run_campaign(_bwtree_helper_window(campaign_config, policy, ()))
    assert report.crashed_states == 16
    assert set(report.site_coverage) == {"bwtree.insert_delta"}
    assert report.helps >= 16
    assert report.passed


@pytest.mark.parametrize("policy", list(CrashMode))
def test_bwtree_helper_skipping_its_flush_is_detected(policy, crash_service, campaign_config):
    cfg = _bwtree_helper_window(campaign_config, policy, (Mutation.BWTREE_SKIP_HELPER_FLUSH,))
    report = crash_service.run_campaign(cfg)
    assert report.crashed_states == 16
    assert not report.passed
    assert report.failed_states >= 1
    if policy is CrashMode.STRICT:
        assert report.failed_states == 16


def _art_path_split_crashes(campaign_config, mutations):
    """Dense keys split compressed paths often; crashes land between the two steps of a split."""
    return campaign_config(
        IndexKind.ART,
        states=20,
        load_n=120,
        test_ops=300,
        key_alphabet=3,
        crash_sites=("art.prefix_update",),
        mutations=mutations,
    )


def test_art_crash_between_path_split_steps_passes(crash_service, campaign_config):
    report = crash_service.run_campaign(_art_path_split_crashes(campaign_config, ()))
    assert report.crashed_states >= 1
    assert set(report.site_coverage) == {"art.prefix_update"}
    assert report.passed


def test_art_writers_without_the_fix_path_are_detected(crash_service, campaign_config):
    report = crash_service.run_campaign(_art_path_split_crashes(campaign_config, (Mutation.ART_DISABLE_FIX,)))
    assert report.crashed_states >= 1
    assert not report.passed


def test_minimize_shrinks_a_failing_state(crash_service, campaign_config):
    cfg = campaign_config(IndexKind.CLHT, crash_probability=0.0, mutations=(Mutation.CLHT_SKIP_INSERT_PERSIST,))
    result = crash_service.minimize(cfg, 0)
    assert result.failing and result.reproducible
    assert result.original_ops == cfg.load_n
    assert 1 <= result.minimized_ops <= 10
    assert all(op["kind"] == "insert" for op in result.ops)


def test_minimize_leaves_a_passing_state_alone(crash_service, campaign_config):
    cfg = campaign_config(IndexKind.CLHT)
    result = crash_service.minimize(cfg, 0)
    assert not result.failing
    assert result.minimized_ops == result.original_ops == cfg.load_n


def test_calibrated_probability_targets_two_expected_crashes(crash_service, campaign_config):
    cfg = campaign_config(IndexKind.ART)
    p, stores = crash_service.calibrate(cfg)
    assert stores > cfg.load_n
    assert 0 < p < 2 / stores


def test_replayed_crash_point_hits_the_same_store():
    pool = PmemPool(16 << 20)
    index = PClht(pool)
    hook = CampaignHook(seed=1, replay=CrashPoint(ordinal=1, store_index=2))
    pool.set_crash_hook(hook)
    hook.begin(0)
    index.insert(10, 1)
    hook.begin(1)
    with pytest.raises(SimulatedCrash):
        index.insert(11, 1)
    assert hook.crash_point is not None
    assert (hook.crash_point.ordinal, hook.crash_point.store_index) == (1, 2)
    assert hook.crash_point.site == "clht.key"


def test_same_seed_same_crash_point(crash_service, campaign_config):
    cfg = campaign_config(IndexKind.BWTREE)
    p, _ = crash_service.calibrate(cfg)
    a = crash_service.run_load(cfg, 2, p=p).state
    b = crash_service.run_load(cfg, 2, p=p).state
    assert a.crash_point == b.crash_point
    assert a.snapshot == b.snapshot
    assert a.acked == b.acked


# ---------------------------------------------------------------------- consistency checks on hand-built states
def _clht_state(**fields) -> CrashState:
    pool = PmemPool(64 << 20)
    index = PClht(pool)
    index.insert(1, 10)
    index.insert(2, 20)
    return CrashState(state_index=0, seed=1, snapshot=pool.persisted_view(), **fields)


@pytest.fixture
def clht_cfg() -> CampaignConfig:
    return CampaignConfig(index=IndexKind.CLHT, states=1, load_n=0, test_ops=0, threads=2, pool_size=64 << 20)


def test_empty_acked_set_passes(crash_service, clht_cfg):
    clht_cfg.test_ops = 20
    assert crash_service.check_consistency(clht_cfg, _clht_state()).passed


def test_lost_key_is_reported(crash_service, clht_cfg):
    report = crash_service.check_consistency(clht_cfg, _clht_state(acked={1: 10, 2: 20, 3: 30}))
    assert report.lost_keys == ["3"]
    assert not report.passed


def test_wrong_value_is_reported(crash_service, clht_cfg):
    report = crash_service.check_consistency(clht_cfg, _clht_state(acked={1: 11}))
    assert [(m.key, m.expected, m.found) for m in report.wrong_values] == [("1", 11, 10)]


def test_resurrected_delete_is_reported(crash_service, clht_cfg):
    report = crash_service.check_consistency(clht_cfg, _clht_state(deleted={2}))
    assert [(m.key, m.expected, m.found) for m in report.wrong_values] == [("2", None, 20)]


def test_in_flight_keys_may_go_either_way(crash_service, clht_cfg):
    state = _clht_state(acked={1: 10, 3: 30}, deleted={2}, in_flight={2, 3})
    assert crash_service.check_consistency(clht_cfg, state).passed


def test_unopenable_state_fails(crash_service, clht_cfg):
    state = CrashState(state_index=0, seed=1, snapshot=PoolSnapshot(64 << 20, {0: 12345}))
    report = crash_service.check_consistency(clht_cfg, state)
    assert report.post_crash_op_failures and not report.passed
