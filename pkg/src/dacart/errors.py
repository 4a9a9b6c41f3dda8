"""Exception hierarchy.

The CLI maps :class:`UserError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class DacartError(Exception):
    pass


class UserError(DacartError, ValueError):
    """Bad input: malformed files, invalid parameters, schema mismatches."""


class NumericalError(DacartError, ArithmeticError):
    """Degenerate weighting, optimizer failure and similar numerical dead ends."""
