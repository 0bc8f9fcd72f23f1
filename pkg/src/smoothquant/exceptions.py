"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
distinct process exit statuses without a lookup table.
"""


class SmoothQuantError(Exception):
    exit_code = 1


class DimensionError(SmoothQuantError, ValueError):
    """Shapes of the operands do not conform."""

    exit_code = 10


class ParameterError(SmoothQuantError, ValueError):
    """A scalar parameter is out of its valid range."""

    exit_code = 11


class DataError(SmoothQuantError, ValueError):
    """Tensor contents violate an invariant (non-finite values, bad scales...)."""

    exit_code = 12


class ConfigurationError(SmoothQuantError):
    """The requested combination of options cannot be executed."""

    exit_code = 13


class UnsupportedGranularityError(SmoothQuantError):
    """Scales along the inner (reduction) dimension of an integer GEMM."""

    exit_code = 14


class NotFusableError(SmoothQuantError):
    """The predecessor operator has no parameters to absorb smoothing factors."""

    exit_code = 15


class FormatError(SmoothQuantError):
    """Malformed tensor container."""

    exit_code = 20

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FormatVersionError(FormatError):
    exit_code = 21

    def __init__(self, found, supported, offset=4):
        super().__init__(
            f"unsupported container version {found}, this reader supports {supported}",
            offset,
        )
        self.found = found
        self.supported = supported


class PipelineError(SmoothQuantError):
    """A pipeline stage was invoked before its prerequisite artifact exists."""

    exit_code = 30

    def __init__(self, missing_step, path):
        super().__init__(
            f"missing artifact {path!s}: run `smoothquant {missing_step}` first"
        )
        self.missing_step = missing_step
        self.path = path
