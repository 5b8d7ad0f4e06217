"""Shared exception types."""


class StructuralError(ValueError):
    """Malformed data fed to a kernel: bad indices, shape mismatches, duplicates."""


class ConfigurationError(ValueError):
    """Inconsistent solver, schedule, or experiment configuration."""


class DivergenceError(RuntimeError):
    """A solver produced a non-finite iterate."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ParseError(ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CertificationError(RuntimeError):
    """A reference solution could not be certified to the requested accuracy."""
