"""Exception types shared across the package."""


class SilfitError(Exception):
    """Base class for all silfit errors."""


class ShapeMismatchError(SilfitError):
    """Array dimensions disagree with what an operation requires."""


class PerspectiveDepthError(SilfitError):
    """A point sits at or behind the camera plane under perspective projection."""


class EmptyCloudError(SilfitError):
    """An operation that needs at least one point received an empty cloud."""


class UnknownShapeError(SilfitError):
    """Shape kind not recognized by the synthetic generator."""


class EmptyProjectionError(SilfitError):
    """No point of the cloud lands inside the image."""


class KTooLargeError(SilfitError):
    """Requested sample count exceeds the number of available points."""


class DegenerateInputError(SilfitError):
    """Every point projects outside every view; the fit has no gradient."""


class ParseError(SilfitError):
    """A data file failed validation; the message carries the location."""
