"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad experiment or data configuration (CLI exit code 2)."""


class DataFormatError(ValueError):
    """Malformed input record; message names the offending line."""


class IntegrityError(ValueError):
    """Cross-record referential failure (e.g. interaction with unknown item)."""


class UsageError(RuntimeError):
    """API misuse, e.g. stepping a finished episode."""
