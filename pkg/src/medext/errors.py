"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class ParseError(ValueError):
    """A data file could not be parsed; message carries the location."""


class ValidationError(ValueError):
    """Data violates a structural invariant (e.g. inconsistent BIO tags)."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or inconsistent with its config."""
