"""Exception hierarchy shared by the whole package.

Every error maps to a process exit code for the command-line tools:
data problems exit 1, model problems exit 2, numerical failures exit 3.
"""


class MigfilterError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class DataError(MigfilterError):
    """Malformed, inconsistent or infeasible input data."""

    exit_code = 1


class ModelError(MigfilterError):
    """Invalid model parameters or a model/data mismatch."""

    exit_code = 2


class ImpossibleObservationError(ModelError):
    """An observed outcome has zero probability under every hidden state."""

    def __init__(self, message, time_index=None, transitions=None):
        super().__init__(message)
        self.time_index = time_index
        self.transitions = transitions


class NumericalError(MigfilterError):
    """A numerical routine failed to produce a usable result."""

    exit_code = 3
