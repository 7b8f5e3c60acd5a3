"""Exception hierarchy shared by every ADS module."""


class ADSError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(ADSError, ValueError):
    pass


class DegenerateMaskError(ADSError):
    """The mask has no foreground pixels, so the Subtract step cannot run."""


class SingularTransformError(ADSError):
    pass


class DegenerateControlPointsError(ADSError):
    pass


class DegenerateCorrespondencesError(ADSError):
    """Too few or collinear correspondences to fit an affine transform."""


class NoConsensusError(ADSError):
    pass


class IllPosedError(ADSError):
    """The TPS fit is rank deficient; raise the regulariser."""


class InvalidDescriptorError(ADSError, ValueError):
    pass


class UndefinedCorrelationError(ADSError):
    pass


class DegenerateRangeError(ADSError):
    pass


class ManifestError(ADSError):
    """A manifest line could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
