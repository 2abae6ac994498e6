"""Exception hierarchy shared across the package.

DataError maps to CLI exit code 1, ConfigError to exit code 2.
"""


class DemoselectError(Exception):
    """Base class for all package errors."""


class DataError(DemoselectError):
    """Malformed or inconsistent input data (files, records, bundles)."""


class ConfigError(DemoselectError):
    """Invalid configuration or unsupported parameter combination."""
