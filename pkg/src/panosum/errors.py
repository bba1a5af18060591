"""Exception hierarchy shared by all pipeline stages."""


class PanosumError(Exception):
    """Base class for every error raised by this package."""


# media_io
class UnsupportedFormat(PanosumError):
    pass


class MalformedImage(PanosumError):
    pass


class EmptySequence(PanosumError):
    pass


class DimensionMismatch(PanosumError):
    pass


class MissingField(PanosumError):
    pass


class InvalidValue(PanosumError):
    pass


# features
class ImageTooSmall(PanosumError):
    pass


class OutOfBounds(PanosumError):
    pass


# geometry / odometry
class InsufficientCorrespondences(PanosumError):
    pass


class DegenerateConfiguration(PanosumError):
    pass


class CheiralityFailure(PanosumError):
    pass


class ZeroBaseline(PanosumError):
    pass


class PointAtInfinity(PanosumError):
    pass


class NoConsensus(PanosumError):
    pass


class BehindCamera(PanosumError):
    pass


class InitializationFailure(PanosumError):
    """No frame pair passed the parallax gate; poses are unavailable."""


class MissingPose(PanosumError):
    pass


# stitching
class InsufficientMatches(PanosumError):
    pass
