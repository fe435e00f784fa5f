"""Exception hierarchy shared by every energykit module."""

from __future__ import annotations

from typing import Any


class EnergyKitError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(EnergyKitError, ValueError):
    pass


class EmptyTraceError(EnergyKitError):
    pass


class MalformedTraceError(EnergyKitError):
    pass


class DomainMismatchError(EnergyKitError):
    pass


class UnsupportedPlatformError(EnergyKitError):
    pass


class PrivilegeError(EnergyKitError, PermissionError):
    pass


class ParseError(EnergyKitError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PartialBaselineError(EnergyKitError):
    """Baseline collection stopped early; ``trace`` holds what was collected."""

    def __init__(self, message: str, trace: Any = None):
        super().__init__(message)
        self.trace = trace


class ExperimentFailedError(EnergyKitError):
    def __init__(self, message: str, trace: Any = None, returncode: int | None = None):
        super().__init__(message)
        self.trace = trace
        self.returncode = returncode


class TooFastWorkloadError(ExperimentFailedError):
    pass


class InvalidComparisonError(EnergyKitError):
    pass


class MissingCostError(EnergyKitError, KeyError):
    def __init__(self, operation: str):
        super().__init__(operation)
        self.operation = operation

    def __str__(self) -> str:
        return f"no cost for operation {self.operation!r}"


class InsufficientPointsError(EnergyKitError):
    pass


class SingularFitError(EnergyKitError):
    pass


class ReportIOError(EnergyKitError, OSError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
