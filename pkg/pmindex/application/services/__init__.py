# Application services orchestrating campaigns, benchmarks and durability traces

from .bench_service import BenchService
from .crash_service import CampaignHook, CrashService
from .durability_service import DurabilityService, check_durability
from .workload_service import WorkloadService, split_streams

__all__ = [
    "BenchService",
    "CampaignHook",
    "CrashService",
    "DurabilityService",
    "check_durability",
    "WorkloadService",
    "split_streams",
]
