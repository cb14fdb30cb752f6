"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed or inconsistent file on disk."""


class DegenerateWeightsError(RuntimeError):
    """The VWMI weight map sums to zero, so the weighted histogram is undefined."""


class NumericalError(RuntimeError):
    """A loss evaluated to NaN or inf during optimization."""
