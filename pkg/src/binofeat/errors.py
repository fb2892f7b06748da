"""Exception hierarchy shared across the package."""


class BinofeatError(Exception):
    """Base class for all package errors."""


class ShapeError(BinofeatError, ValueError):
    pass


class NumericError(BinofeatError, ArithmeticError):
    """A NaN/Inf showed up where finite values are required."""


class BoundsError(BinofeatError, IndexError):
    pass


# geometry
class GeometryError(BinofeatError, ValueError):
    pass


class InvalidDepthError(GeometryError):
    pass


class BehindCameraError(GeometryError):
    pass


class OutOfCorrespondenceError(GeometryError):
    """A warp could not produce a valid pixel in the second view."""


class DegenerateConfigurationError(GeometryError):
    pass


# data
class IngestionError(BinofeatError, OSError):
    pass


class UnsupervisedPairError(BinofeatError, ValueError):
    """A frame pair lacks the ground-truth poses needed for supervision."""


# training / tracking / evaluation
class EmptyBatchError(BinofeatError, ValueError):
    pass


class TrackingFailure(BinofeatError, RuntimeError):
    pass


class InsufficientOverlapError(BinofeatError, ValueError):
    pass


class CheckpointError(BinofeatError, OSError):
    pass
