"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters: UsageError -> 1, DataError -> 2, NumericError -> 3.
"""


class CnlError(Exception):
    """Base class for all package-specific failures."""


class UsageError(CnlError):
    """Bad command line arguments or config keys/values."""


class DataError(CnlError):
    """Malformed or inconsistent input data (bundles, raw files, masks)."""


class NumericError(CnlError):
    """Non-finite values encountered where the math requires finite ones."""
