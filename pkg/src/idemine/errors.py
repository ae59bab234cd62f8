"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit with 2,
everything else that goes wrong at runtime exits with 1.
"""


class IdemineError(Exception):
    """Base class for all toolkit errors."""


class InputError(IdemineError):
    """A source file or stream could not be read or decoded."""


class ConfigurationError(IdemineError):
    """An option, format tag or parameter value is invalid."""


class SchemaError(IdemineError):
    """Structured data does not match the expected schema."""
