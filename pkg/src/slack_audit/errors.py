"""Exception hierarchy. Every library error derives from SlackAuditError so
the CLI can turn any of them into a one-line diagnostic."""


class SlackAuditError(Exception):
    pass


class SchemaError(SlackAuditError):
    """A CSV schema names a column the file does not have."""


class ValidationError(SlackAuditError, ValueError):
    """Input data violates a Dataset invariant."""


class AlignmentError(SlackAuditError, ValueError):
    """Predictions and dataset have different lengths."""


class UndefinedRateError(SlackAuditError, ZeroDivisionError):
    """A rate was requested over an empty set of records."""


class StateError(SlackAuditError):
    """An object was used before it was fitted or realized."""


class SizeError(SlackAuditError, ValueError):
    """A size precondition (group size, divisibility) failed."""


class InfeasibleError(SlackAuditError):
    """No threshold pair meets the slack. Carries the smallest reachable |bias|."""

    def __init__(self, slack: float, min_abs_bias: float):
        self.slack = slack
        self.min_abs_bias = min_abs_bias
        super().__init__(
            f"no deterministic threshold pair has |bias| <= {slack:.6g}; "
            f"smallest attainable |bias| is {min_abs_bias:.17g}"
        )


class DivergenceError(SlackAuditError, FloatingPointError):
    """Training produced a non-finite value."""


class SweepError(SlackAuditError):
    """A training inside a slack sweep failed."""

    def __init__(self, slack: float, cause: Exception):
        self.slack = slack
        self.cause = cause
        super().__init__(f"sweep aborted at slack={slack:.17g}: {cause}")
