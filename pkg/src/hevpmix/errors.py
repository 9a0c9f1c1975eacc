"""Exception hierarchy shared across the package.

CLI exit codes map onto these: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class HevpmixError(Exception):
    """Base class for all package errors."""


class DomainError(HevpmixError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateWeightsError(DomainError):
    """A kernel weight row could not be normalized."""


class ConfigError(HevpmixError):
    """Invalid or inconsistent configuration."""


class DataError(HevpmixError):
    """Malformed input data."""


class NumericalError(HevpmixError, ArithmeticError):
    """A numerical routine failed (e.g. a factorization)."""


class InitializationError(NumericalError):
    """The sampler could not find a finite starting likelihood."""
