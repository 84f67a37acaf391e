"""Exception taxonomy shared across the package.

Every raised error is a ValueError subclass so callers that only care
about "bad input" can catch one base class; the CLI maps these to exit
code 1 and argparse usage problems to exit code 2.
"""


class T2TError(ValueError):
    """Base class for all package errors."""


class DimensionError(T2TError):
    """Tensor shapes do not line up for the requested operation."""


class ParameterError(T2TError):
    """An argument is outside its documented domain."""


class DataError(T2TError):
    """Input data violates a precondition (empty corpus, bad record, ...)."""


class CapacityError(DataError):
    """A fixed resource (e.g. sentinel ids) was exhausted."""


class ConfigurationError(T2TError):
    """A configuration value or required file is missing or inconsistent."""
