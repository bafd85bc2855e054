"""Exception types raised across the package."""


class IntraRankError(Exception):
    """Base class for all package errors."""


class NormUnderflow(IntraRankError, ArithmeticError):
    """A vector's L2 norm is at or below the configured floor."""


class DimensionMismatch(IntraRankError, ValueError):
    pass


class NonFiniteInput(IntraRankError, ValueError):
    pass


class EmptyAnchors(IntraRankError, ValueError):
    """Families exist but no positive anchor was supplied for them."""


class MissingProxy(IntraRankError, KeyError):
    pass


class StaleCache(IntraRankError, ValueError):
    """A backward pass was given a cache that does not match its inputs."""


class EmptyGallery(IntraRankError, ValueError):
    pass


class InsufficientClasses(IntraRankError, ValueError):
    pass


class UnknownParam(IntraRankError, ValueError):
    pass


class ConfigError(IntraRankError, ValueError):
    pass


class ValidationError(IntraRankError, ValueError):
    pass


class ParseError(IntraRankError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
