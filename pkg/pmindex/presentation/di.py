from __future__ import annotations

from typing import Optional

from pmindex.application.services.bench_service import BenchService
from pmindex.application.services.crash_service import CrashService
from pmindex.application.services.durability_service import DurabilityService
from pmindex.application.services.workload_service import WorkloadService


class DIContainer:
    """Very small DI container with lazy singletons.

    Services share one workload generator; everything else is created on demand.
    """

    def __init__(self) -> None:
        self._workload_service: Optional[WorkloadService] = None
        self._bench_service: Optional[BenchService] = None
        self._crash_service: Optional[CrashService] = None
        self._durability_service: Optional[DurabilityService] = None

    def workload_service(self) -> WorkloadService:
        if not self._workload_service:
            self._workload_service = WorkloadService()
        return self._workload_service

    def bench_service(self) -> BenchService:
        if not self._bench_service:
            self._bench_service = BenchService(self.workload_service())
        return self._bench_service

    def crash_service(self) -> CrashService:
        if not self._crash_service:
            self._crash_service = CrashService(self.workload_service())
        return self._crash_service

    def durability_service(self) -> DurabilityService:
        if not self._durability_service:
            self._durability_service = DurabilityService(self.workload_service())
        return self._durability_service


di = DIContainer()
