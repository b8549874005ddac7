"""Exception types shared by the geometry, integration and CLI layers.

Input problems derive from ValueError and map to CLI exit code 2; numeric
regime problems derive from RuntimeError and map to exit code 3.
"""


class DimensionMismatchError(ValueError):
    pass


class ArityError(ValueError):
    pass


class BasisError(ValueError):
    """A basis or matrix that should be orthonormal is not."""


class EmptyInputError(ValueError):
    pass


class EmptyIntersectionError(ValueError):
    pass


class SpecError(ValueError):
    """Index tuple (k, r, s, j, m) outside the defined family."""


class UnsupportedError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class RegimeError(RuntimeError):
    """Lattice step t is too coarse for the truncation argument to apply."""


class WindowTooSmallError(RuntimeError):
    pass


class HullError(RuntimeError):
    pass


NUMERIC_ERRORS = (RegimeError, WindowTooSmallError, HullError)


def exit_code_for(error: Exception) -> int:
    """
    Map an exception to the CLI exit code.

    Returns:
        3 for numeric-regime failures, 2 for configuration/input errors,
        1 for anything unexpected.
    """
    if isinstance(error, NUMERIC_ERRORS):
        return 3
    if isinstance(error, (ValueError, FileNotFoundError)):
        return 2
    return 1
