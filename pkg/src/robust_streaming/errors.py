"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter is outside its admissible range."""


class UsageError(RuntimeError):
    """An object was used in a state that does not allow the call."""


class InjectionExhausted(LookupError):
    """An injected-noise queue ran out of values."""


class ModelViolation(ValueError):
    """A stream update does not fit the declared stream model."""


class StreamFormatError(ValueError):
    """A line of a stream file could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class BudgetExhausted(RuntimeError):
    """The robust estimator needed more recomputations than its budget allows.

    This signals that the configured outer-loop budget underestimates the
    flip number of the stream actually seen.
    """
