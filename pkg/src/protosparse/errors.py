"""Exception hierarchy shared across the package."""


class ProtoSparseError(Exception):
    """Base class for every error raised by protosparse."""


class ContractViolation(ProtoSparseError, ValueError):
    """A caller broke a documented precondition (bad shape, bad range, ...)."""


class FormatError(ProtoSparseError):
    """Malformed tabular input. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInputError(ProtoSparseError):
    pass


class LoadError(ProtoSparseError):
    pass


class EmptySetError(ProtoSparseError):
    """A neighbour search had nothing to search."""


class InsufficientDataError(ProtoSparseError):
    pass


class ConfigError(ProtoSparseError):
    pass
