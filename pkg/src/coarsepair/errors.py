"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions (shape, range, emptiness)."""


class DegenerateInputError(InvalidInputError):
    """Structurally valid input on which the operation is mathematically undefined,
    e.g. a mask with no background pixels."""


class ConfigError(ValueError):
    """A configuration value or key is invalid or unknown."""


class IntegrityError(RuntimeError):
    """A file on disk (checkpoint, manifest) is corrupt or has the wrong format."""


class NumericAbortError(RuntimeError):
    """Training produced a non-finite loss; carries the offending batch id."""

    def __init__(self, message: str, batch_id: str | None = None):
        super().__init__(message)
        self.batch_id = batch_id
