"""Exception hierarchy. Each family maps onto a CLI exit code."""

from __future__ import annotations


class NidsError(Exception):
    exit_code = 4


class ConfigError(NidsError):
    """Invalid configuration; ``path`` names the offending field when known."""

    exit_code = 2

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(NidsError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class MappingError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class BalancingError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class ArgumentError(NidsError, ValueError):
    exit_code = 2


class DegenerateLeafError(NidsError, ArithmeticError):
    pass


class DivergenceError(NidsError, FloatingPointError):
    pass


class UndefinedMetricError(NidsError, ValueError):
    pass


class StageError(NidsError):
    """A pipeline stage failed or ran out of order."""

    exit_code = 4

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
