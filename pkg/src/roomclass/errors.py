"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a precondition (shapes, labels, rates, files)."""


class RateMismatchError(DataError):
    """Two signals that must share a sample rate do not."""


class InsufficientDecayError(DataError):
    """An energy decay curve never reaches the requested fit level."""


class AnechoicInputError(DataError):
    """An impulse response has no energy outside the direct-path window."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared during a forward pass, update or loss."""
