from typing import Optional, Dict, Any, Tuple


class SimulatorBaseException(Exception):
    """Base exception for the Priority Pass simulator"""
    def __init__(self, message: str, error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.details = details or {}


class InvalidDimensionError(SimulatorBaseException):
    """Raised when grid dimensions or lengths are not positive"""
    pass


class UnreachableExitError(SimulatorBaseException):
    """Raised when an exit cannot be reached from an entrance"""
    pass


class AllocationSizeMismatchError(SimulatorBaseException):
    """Raised when an allocation refers to unknown vehicles"""
    pass


class MalformedLogError(SimulatorBaseException):
    """Raised when a signal event log does not alternate"""
    pass


class RankDeficiencyError(SimulatorBaseException):
    """Raised when a polynomial fit has too few distinct abscissae"""
    pass


class EmptySupportError(SimulatorBaseException):
    """Raised when no wage mass lies at or above the minimum wage"""
    pass


class MissingResponseEntryError(SimulatorBaseException):
    """Raised when the delay response has no entry for a query"""
    pass


class InfeasibleSelectionError(SimulatorBaseException):
    """Raised when no grid point satisfies the trade-off constraints"""
    pass


class ProfileGapError(SimulatorBaseException):
    """Raised when an hourly table does not cover all 24 hours"""
    pass


class ConfigInvalidError(SimulatorBaseException):
    """Raised when a scenario configuration fails validation"""
    pass


class MissingDependencyError(SimulatorBaseException):
    """Raised when a stage needs an artifact from a prior stage"""
    pass


class OutputIOError(SimulatorBaseException):
    """Raised when reading or writing an artifact fails"""
    pass


def handle_simulator_exception(exc: SimulatorBaseException) -> Tuple[int, Dict[str, Any]]:
    """Convert simulator exceptions to a CLI exit code and error payload"""
    exit_code = 1
    error_code = exc.error_code or "SIMULATION_ERROR"

    if isinstance(exc, ConfigInvalidError):
        exit_code = 2
        error_code = "CONFIG_INVALID"
    elif isinstance(exc, MissingDependencyError):
        exit_code = 3
        error_code = "MISSING_DEPENDENCY"
    elif isinstance(exc, OutputIOError):
        exit_code = 4
        error_code = "IO_ERROR"
    elif isinstance(exc, InfeasibleSelectionError):
        error_code = "INFEASIBLE"
    elif isinstance(exc, MissingResponseEntryError):
        error_code = "MISSING_RESPONSE_ENTRY"

    return exit_code, {
        "error": exc.message,
        "error_code": error_code,
        "details": exc.details
    }
