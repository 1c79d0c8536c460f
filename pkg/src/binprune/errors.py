"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class BinpruneError(Exception):
    """Base class for all library errors."""


class ConfigError(BinpruneError, ValueError):
    """Invalid configuration or argument ranges."""


class DataError(BinpruneError, ValueError):
    """Malformed or inconsistent input data (files, manifests, shapes)."""


class TensorFormatError(DataError):
    """A PBT1 container could not be decoded.

    ``reason`` is one of ``bad-magic``, ``bad-version``, ``unknown-dtype``,
    ``bad-header`` or ``truncated-payload``.
    """

    def __init__(self, reason, message=None):
        self.reason = reason
        super().__init__(message or reason)


class NumericalError(BinpruneError, ArithmeticError):
    """A numerical routine failed (e.g. Cholesky on a non-PD matrix)."""
