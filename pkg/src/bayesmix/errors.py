"""Exception hierarchy shared by every module."""


class BayesMixError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(BayesMixError, ValueError):
    """A parameter or input lies outside the domain of an operation."""


class PreconditionError(DomainError):
    """A numerically checked precondition failed; ``values`` holds the measurements."""

    def __init__(self, message, values=None):
        super().__init__(message)
        self.values = values


class ConfigurationError(BayesMixError, ValueError):
    """Invalid run configuration (grid sizes, caps, config files)."""


class NumericError(BayesMixError, ArithmeticError):
    """A numerical routine failed (non-convergence, loss of definiteness)."""


class UnsupportedError(BayesMixError, NotImplementedError):
    """The requested fast path does not exist for this family/mixture pair."""


class DecodeError(BayesMixError):
    """A bitstream could not be decoded; ``index`` is the failing symbol index."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
