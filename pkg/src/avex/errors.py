"""Shared exception types.

The CLI maps these onto exit codes: usage problems exit 1, DataError
exits 2, NumericError exits 3.
"""


class AvexError(Exception):
    pass


class DataError(AvexError):
    """Malformed or inconsistent input data (files, vocabularies, configs)."""


class NumericError(AvexError):
    """Numerical failure during training or scoring (NaN/inf loss, etc.)."""
