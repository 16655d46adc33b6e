"""Exception types shared across the package."""


class HsiRestoreError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(HsiRestoreError):
    """An argument or configuration value is out of its allowed range."""


class ShapeError(HsiRestoreError):
    """An array has the wrong number of dimensions or incompatible sizes."""


class FormatError(HsiRestoreError):
    """A file does not follow the expected binary layout."""


class CorruptionError(HsiRestoreError):
    """A file header parses but the payload is truncated or inconsistent."""


class NonFiniteError(HsiRestoreError):
    """A NaN or infinity appeared where finite values are required."""


class ConfigError(HsiRestoreError):
    """A run configuration could not be parsed or contains unknown keys."""
