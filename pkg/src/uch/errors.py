"""Exception hierarchy shared by the library and the command line tool.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies instead of bare ValueError.
"""


class UchError(Exception):
    """Base class for every error raised by this package."""


class UsageError(UchError):
    """Bad invocation: unknown flags, unknown config keys, missing arguments."""


class DataError(UchError):
    """Malformed or inconsistent input data or model files."""


class NumericalError(UchError):
    """Numerical failure: singular linear systems, non-finite intermediates."""
