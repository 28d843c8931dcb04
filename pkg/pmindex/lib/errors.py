from __future__ import annotations


class DomainError(Exception):
    code = "domain_error"
    exit_code = 1

    def __init__(self, message: str = "", *, code: str | None = None, exit_code: int | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code
        if exit_code is not None:
            self.exit_code = exit_code
        self.message = message or self.code


class PmFault(DomainError):
    """Misuse of the simulated PM (a bug in the caller, never in an index)."""

    code = "pm_fault"
    exit_code = 3


class PoolFullError(DomainError):
    code = "pool_full"


class KeyExistsError(DomainError):
    code = "key_exists"


class InvalidKeyError(DomainError):
    code = "invalid_key"
    exit_code = 2


class OpenError(DomainError):
    code = "open_error"


class SnapshotError(OpenError):
    code = "snapshot_error"


class LockError(DomainError):
    code = "lock_error"
    exit_code = 3


class CorruptionError(DomainError):
    code = "corruption"


class SpecRejectedError(DomainError):
    code = "spec_rejected"
    exit_code = 2


class SimulatedCrash(BaseException):
    """Raised from a store when the crash hook decides to crash.

    Derives from BaseException so that no ``except Exception`` on the way
    up performs cleanup: the operation is abandoned mid-flight.
    """

    def __init__(self, event=None) -> None:
        super().__init__("simulated crash")
        self.event = event


__all__ = [
    "DomainError",
    "PmFault",
    "PoolFullError",
    "KeyExistsError",
    "InvalidKeyError",
    "OpenError",
    "SnapshotError",
    "LockError",
    "CorruptionError",
    "SpecRejectedError",
    "SimulatedCrash",
]
