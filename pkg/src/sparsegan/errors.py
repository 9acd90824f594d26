class ConfigError(ValueError):
    """Invalid configuration or call arguments (CLI exit code 2)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonFiniteError(FloatingPointError):
    """A loss, score or gradient became NaN/inf; the run is aborted."""


class InternalError(RuntimeError):
    """Broken bookkeeping: stale caches, cardinality mismatches."""
