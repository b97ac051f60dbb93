"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class DataFormatError(ValueError):
    """Malformed input data (CLI exit code 3).

    ``code`` distinguishes failure classes: "magic", "truncated", "dims",
    "schema".
    """

    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class NumericalError(RuntimeError):
    """Numerical invariant violated at runtime (CLI exit code 4)."""
