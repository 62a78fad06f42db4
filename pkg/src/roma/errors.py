"""Exception hierarchy shared by every roma module."""


class RomaError(Exception):
    """Base class for all roma errors."""


class ShapeError(RomaError, ValueError):
    pass


class NumericError(RomaError, FloatingPointError):
    pass


class ContractError(RomaError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(RomaError, ValueError):
    pass


class FormatError(RomaError, ValueError):
    """A file does not carry the expected magic, version or layout."""


class IntegrityError(FormatError):
    """A file is truncated or its checksum does not match."""
