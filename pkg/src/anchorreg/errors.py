"""Exception types shared across the package."""


class AnchorRegError(Exception):
    """Base class for all package errors."""


class DimensionError(AnchorRegError, ValueError):
    """Operand shapes do not conform."""


class StateError(AnchorRegError, RuntimeError):
    """An object was used in a state that does not allow the operation."""


class NumericError(AnchorRegError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class CapabilityError(AnchorRegError, ValueError):
    """The requested construction cannot be built with the given sizes."""


class ParseError(AnchorRegError, ValueError):
    """A file or config could not be parsed."""


class NonFiniteLossError(NumericError):
    """Training produced a non-finite loss.

    Carries the step index, the loss breakdown at that step and the log
    records accumulated so far so callers can persist a partial log.
    """

    def __init__(self, step, breakdown, records=None):
        self.step = step
        self.breakdown = dict(breakdown)
        self.records = list(records or [])
        parts = ", ".join(f"{k}={v!r}" for k, v in self.breakdown.items())
        super().__init__(f"non-finite loss at step {step}: {parts}")
