"""Exception hierarchy.

Each error class carries the CLI exit code it maps to, so the runner can
translate failures without a lookup table.
"""


class LabError(Exception):
    exit_code = 1


class ConfigurationError(LabError, ValueError):
    """Invalid configuration, schema violation or shape mismatch."""

    exit_code = 2


class EstimatorError(LabError, ValueError):
    """Too few samples for the requested statistic."""

    exit_code = 2


class PartitionError(LabError, ValueError):
    exit_code = 2


class DomainError(LabError, ValueError):
    """Point outside the domain on which a potential is defined."""

    exit_code = 3


class SingularityError(LabError, FloatingPointError):
    """Coincident atoms under a singular pair interaction."""

    exit_code = 3


class BlowUpError(LabError, FloatingPointError):
    """Non-finite numbers appeared during time integration."""

    exit_code = 3

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DiagnosticError(LabError, ValueError):
    exit_code = 4


class GridError(LabError, ValueError):
    """Quantum grid cannot represent the state or the potential."""

    exit_code = 4

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class GuardError(LabError):
    """A numerical acceptance guard failed."""

    exit_code = 4
