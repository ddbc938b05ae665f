"""Exception hierarchy shared across the package.

The CLI maps each family to its own exit code, so new errors should
subclass one of the four roots below rather than ``Exception`` directly.
"""


class FairwinError(Exception):
    """Root of all package errors."""


class ConfigError(FairwinError, ValueError):
    pass


class DataError(FairwinError, ValueError):
    pass


class NumericalError(FairwinError, ArithmeticError):
    pass


class FileError(FairwinError, OSError):
    pass


class ShapeError(NumericalError, ValueError):
    """Operand dimensions do not line up."""


class RankError(NumericalError, ValueError):
    """Requested rank is outside ``[1, min(rows, cols)]``."""


class ConvergenceError(NumericalError):
    """An iterative kernel hit its iteration cap."""

    def __init__(self, message, iterations):
        super().__init__(f"{message} (after {iterations} sweeps)")
        self.iterations = iterations


class InvariantError(NumericalError, ValueError):
    pass


class TrainingError(NumericalError):
    """Loss became non-finite during training."""


class SchemaError(DataError):
    pass


class GroupEmptyError(DataError):
    pass


class StratificationError(DataError):
    pass


class DegenerateCellError(DataError):
    """A (group, label) cell needed by a rate is empty."""

    def __init__(self, group, label):
        super().__init__(f"no samples with s={group}, y={label:+d}")
        self.group = group
        self.label = label
