"""Exception types raised across the package."""


class CmpError(Exception):
    """Base class for all package errors."""


class DivergentSeries(CmpError, ValueError):
    """The normalizing series does not converge (nu = 0 with rate >= 1)."""


class TruncationLimit(CmpError, RuntimeError):
    """The summation window would exceed the configured hard cap."""


class NoConvergence(CmpError, RuntimeError):
    """An iterative solver stopped at its iteration cap.

    ``residual`` holds the final residual, ``result`` the last iterate when
    one is available.
    """

    def __init__(self, message, residual=None, result=None):
        super().__init__(message)
        self.residual = residual
        self.result = result


class DegenerateData(CmpError, ValueError):
    """All counts are identical so the dispersion is not identified."""

    def __init__(self, message, mu_hat=None):
        super().__init__(message)
        self.mu_hat = mu_hat
        self.nu_hat = float("inf")


class RankDeficientDesign(CmpError, ValueError):
    pass


class MeanOverflow(CmpError, FloatingPointError):
    pass


class SingularInformation(CmpError, ArithmeticError):
    pass


class SingularConstraintCov(CmpError, ArithmeticError):
    pass


class NotNested(CmpError, ValueError):
    pass


class LengthMismatch(CmpError, ValueError):
    pass


class GeneratorMisspecified(CmpError, ValueError):
    pass


class ParseError(CmpError, ValueError):
    """Malformed input file; carries 1-based ``row`` and ``column`` when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class EmptyData(CmpError, ValueError):
    pass


class UnknownVariable(CmpError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown variable"
