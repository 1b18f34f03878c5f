"""Exception hierarchy.

Errors are grouped by how the command line reports them: ``DataError``
subclasses map to exit code 2 and ``NumericError`` subclasses to exit code 3.
"""


class SDSEError(Exception):
    """Base class for every error raised by this package."""


class DataError(SDSEError):
    """Malformed or inconsistent input data."""


class NumericError(SDSEError):
    """A computation produced a non-finite value."""


class ShapeMismatch(SDSEError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {rendered}")


class IndexOutOfRange(SDSEError, IndexError):
    pass


class NonFinite(NumericError):
    pass


class NonFiniteGradient(NonFinite):
    pass


class NotScalarLoss(SDSEError, ValueError):
    pass


class AllMasked(SDSEError, ValueError):
    pass
