from __future__ import annotations

# pydantic v2 moved BaseSettings to pydantic-settings; keep Field from pydantic
from pydantic import Field
from pydantic_settings import BaseSettings

from pmindex.utils import load_env

# Load repo-level env file if present
_ENV_FILE = load_env("config.env")

GiB = 1 << 30
KiB = 1 << 10


class Settings(BaseSettings):
    # PM pool
    pool_size: int = Field(4 * GiB, alias="PMINDEX_POOL_SIZE")
    arena_size: int = Field(64 * KiB, alias="PMINDEX_ARENA_SIZE")
    alloc_recycle: bool = Field(False, alias="PMINDEX_ALLOC_RECYCLE")

    # P-CLHT
    clht_initial_bytes: int = Field(48 * KiB, alias="PMINDEX_CLHT_INITIAL_BYTES")
    clht_chain_threshold: int = Field(3, alias="PMINDEX_CLHT_CHAIN_THRESHOLD")
    clht_hash_seed: int = Field(0x5EED_C1A7, alias="PMINDEX_CLHT_HASH_SEED")

    # P-BwTree
    bwtree_capacity: int = Field(1 << 20, alias="PMINDEX_BWTREE_CAPACITY")
    bwtree_consolidate_depth: int = Field(8, alias="PMINDEX_BWTREE_CONSOLIDATE_DEPTH")
    bwtree_max_pairs: int = Field(64, alias="PMINDEX_BWTREE_MAX_PAIRS")
    bwtree_min_pairs: int = Field(16, alias="PMINDEX_BWTREE_MIN_PAIRS")

    # Crash campaigns
    campaign_states: int = Field(10_000, alias="PMINDEX_CAMPAIGN_STATES")
    campaign_load_n: int = Field(10_000, alias="PMINDEX_CAMPAIGN_LOAD_N")
    campaign_test_ops: int = Field(10_000, alias="PMINDEX_CAMPAIGN_TEST_OPS")
    campaign_threads: int = Field(4, alias="PMINDEX_CAMPAIGN_THREADS")
    campaign_pool_size: int = Field(1 * GiB, alias="PMINDEX_CAMPAIGN_POOL_SIZE")
    campaign_delete_fraction: float = Field(0.1, alias="PMINDEX_CAMPAIGN_DELETE_FRACTION")
    campaign_key_bits: int = Field(64, alias="PMINDEX_CAMPAIGN_KEY_BITS")
    interpose_probability: float = Field(0.25, alias="PMINDEX_INTERPOSE_PROBABILITY")
    publish_boost: float = Field(25.0, alias="PMINDEX_PUBLISH_BOOST")
    crash_probability: float | None = Field(None, alias="PMINDEX_CRASH_PROBABILITY")
    artifacts_dir: str | None = Field(None, alias="PMINDEX_ARTIFACTS_DIR")

    # Benchmarks
    bench_n: int = Field(1_000_000, alias="PMINDEX_BENCH_N")
    bench_threads: int = Field(16, alias="PMINDEX_BENCH_THREADS")
    scan_len_max: int = Field(100, alias="PMINDEX_SCAN_LEN_MAX")

    verbose: bool = Field(False, alias="PMINDEX_VERBOSE")

    # pydantic v2: use model_config instead of Config
    model_config = {
        "env_file": str(_ENV_FILE),
        "case_sensitive": False,
        "extra": "ignore",
        "populate_by_name": True,
    }


settings = Settings()  # singleton-like access
