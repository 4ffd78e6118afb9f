"""Exception hierarchy shared across the package.

``UserInputError`` and its subclasses mark problems caused by user-supplied
data or configuration; the CLI maps them to exit code 2. Everything else
under ``TrelabError`` is an internal contract violation (exit code 1).
"""


class TrelabError(Exception):
    pass


class UserInputError(TrelabError):
    """Bad input data, file, or flag combination supplied by the caller."""


class ConfigError(UserInputError):
    """Invalid or inconsistent configuration values."""


class ParseError(UserInputError):
    """Malformed file content; message carries location where known."""


class ValidationError(UserInputError):
    """Structurally parsed but semantically invalid data."""


class DimensionError(TrelabError):
    """Tensor shape mismatch in a numeric operation."""


class NonFiniteGradError(TrelabError):
    """A parameter gradient became NaN or infinite during optimization."""
