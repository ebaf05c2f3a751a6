"""Exception hierarchy shared by every eidoslab module."""
from __future__ import annotations


class EidosError(Exception):
    """Base class for all eidoslab errors."""


class DimensionError(EidosError, ValueError):
    pass


class WindowError(EidosError, ValueError):
    pass


class ContractError(EidosError, ValueError):
    pass


class ConfigError(EidosError, ValueError):
    pass


class GraphError(EidosError, ValueError):
    pass


class InputError(EidosError, ValueError):
    pass


class ParseError(EidosError, ValueError):
    """Malformed dataset record. Carries the 1-based line number and the offending field."""

    def __init__(self, message: str, line_no: int | None = None, field: str | None = None):
        self.line_no = line_no
        self.field = field
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{message}")


class NonFiniteError(ParseError):
    """A dataset record holding NaN or infinite values."""


class UndefinedMetricError(EidosError, ValueError):
    pass


class EmptyReportError(EidosError, ValueError):
    pass


class DegenerateDirectionError(EidosError, ValueError):
    pass


class TrainingGuardError(EidosError, RuntimeError):
    """Non-finite loss component detected during training."""

    def __init__(self, component: str, step: int, value: float = float("nan")):
        self.component = component
        self.step = step
        self.value = value
        super().__init__(f"non-finite {component} at step {step} (value={value})")


class HashMismatchError(EidosError):
    def __init__(self, expected: str, actual: str, what: str = "config"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} hash mismatch: checkpoint={expected} config={actual}")


class RunLockedError(EidosError):
    pass
