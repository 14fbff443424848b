"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input problems exit 2, degenerate or
unsolvable problems exit 3, convergence failures exit 4.
"""


class NearScaleError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(NearScaleError, ValueError):
    exit_code = 2


class ParseError(InputError):
    """Malformed input file; carries the offending 1-based line number."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f"{':' if where else ''}line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DegenerateError(NearScaleError):
    exit_code = 3


class DegenerateBaseline(DegenerateError):
    """All camera-light offsets are zero, so scale cannot be observed."""


class DegenerateMotion(DegenerateError):
    """Both views are identical; every scale satisfies the constraint."""


class NoSolution(DegenerateError):
    """Intensities are inconsistent with any positive scale."""


class SingularGeometry(DegenerateError):
    """A scene point coincides with a light source."""


class InsufficientData(DegenerateError):
    pass


class NormalEstimationError(DegenerateError):
    pass


class ConvergenceError(NearScaleError):
    exit_code = 4
