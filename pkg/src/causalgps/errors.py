"""Exception hierarchy shared by every stage of the pipeline.

``InputError`` subclasses signal bad inputs or configuration (the CLI maps them to exit
code 1); every other ``CausalGPSError`` is a runtime failure of a statistical stage
(exit code 2).
"""

from __future__ import annotations


class CausalGPSError(Exception):
    """Base class for all errors raised by causalgps."""


class InputError(CausalGPSError, ValueError):
    """Invalid input data or configuration."""


class ConfigError(InputError):
    pass


class MissingColumn(InputError):
    def __init__(self, column: str, path: str | None = None) -> None:
        where = f" in {path}" if path else ""
        super().__init__(f"missing column '{column}'{where}")
        self.column = column
        self.path = path


class ParseError(InputError):
    def __init__(self, row: int, column: str, value: str) -> None:
        super().__init__(f"cannot parse value {value!r} at row {row}, column '{column}'")
        self.row = row
        self.column = column
        self.value = value


class MalformedFile(InputError):
    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"cannot read {path}: {reason}")
        self.path = path
        self.reason = reason


class DuplicateId(InputError):
    def __init__(self, value: int) -> None:
        super().__init__(f"duplicate id {value}")
        self.value = value


class EmptyInput(InputError):
    pass


class NonNumericColumn(InputError):
    pass


class SchemaMismatch(InputError):
    pass


class InsufficientData(InputError):
    pass


class AllRowsTrimmed(CausalGPSError):
    pass


class DegenerateDesign(CausalGPSError):
    pass


class SingularDesign(DegenerateDesign):
    pass


class DegenerateExposure(CausalGPSError):
    pass


class DegenerateSample(CausalGPSError):
    pass


class DegenerateStandardizer(CausalGPSError):
    pass


class DegenerateVariance(CausalGPSError):
    pass


class EmptyGrid(CausalGPSError):
    pass


class NonConvergence(CausalGPSError):
    pass


class AllBandwidthsDegenerate(CausalGPSError):
    pass


class AllAttemptsFailedConstruction(CausalGPSError):
    pass


class IoError(CausalGPSError, OSError):
    """An output file or log file could not be written."""
