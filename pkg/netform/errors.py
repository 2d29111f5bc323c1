"""
Exception hierarchy shared by the solver, the diagnostics and the CLI
"""

from typing import Optional


class NetformError(Exception):
    """Base class for every error raised by netform"""


class NonFiniteField(NetformError):
    """A field that must be finite contains NaN or inf"""


class SolverDiverged(NetformError):
    """A linear solve hit its iteration cap or failed to factorize"""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time

    def at(self, time: float) -> "SolverDiverged":
        """Return a copy stamped with the simulation time"""
        return SolverDiverged(f"{self.args[0]} (t={time:.6g})", time=time)


class BlowUp(NetformError):
    """A time step produced non-finite values"""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time


class DomainError(NetformError, ValueError):
    """Parameters outside the admissible range"""


class InsufficientSnapshots(NetformError):
    """The trajectory does not store enough time levels for a diagnostic"""


class EmptyBall(NetformError):
    """No grid node falls inside the requested ball"""


class TooShortTrace(NetformError):
    """A Picard trace has fewer records than the interpretation needs"""


class ConfigParseError(NetformError):
    def __init__(self, message: str, line: Optional[int] = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class ConfigValidationError(NetformError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


class FormatError(NetformError):
    """A snapshot file does not match the expected binary layout"""


class SnapshotIOError(NetformError, OSError):
    """Reading or writing an output file failed"""
