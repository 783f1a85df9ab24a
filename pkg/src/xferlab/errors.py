"""Exception hierarchy shared by every module."""
from __future__ import annotations


class XferlabError(Exception):
    """Base class."""


class ConfigError(XferlabError, ValueError):
    """Invalid configuration (CLI exit code 2)."""


class ValidationError(XferlabError, ValueError):
    """Input data failed validation (CLI exit code 1)."""


class ContractError(XferlabError, ValueError):
    """A function was called outside its preconditions."""


class DimensionError(ContractError):
    """Shape mismatch inside a primitive."""


class NumericError(XferlabError, ArithmeticError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class InputError(XferlabError, ValueError):
    """Model input out of range (e.g. a token id beyond the vocabulary)."""


class IntegrityError(XferlabError):
    """Corrupt or truncated checkpoint."""


class DivergenceError(XferlabError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, last_finite_state=None, trace=None):
        super().__init__(message)
        self.last_finite_state = last_finite_state
        self.trace = trace or []
