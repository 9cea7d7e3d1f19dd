"""Exception types shared across depthfuse."""


class DepthFuseError(Exception):
    """Base class for all depthfuse errors."""


class ShapeMismatch(DepthFuseError, ValueError):
    pass


class WrongScale(DepthFuseError, ValueError):
    pass


class NonPositiveDepth(DepthFuseError, ValueError):
    pass


class EmptyMask(DepthFuseError, ValueError):
    """Raised when an operation needs at least one valid pixel and has none."""


class SetTooSmall(DepthFuseError, ValueError):
    pass


class TooSmall(DepthFuseError, ValueError):
    pass


class TooLarge(DepthFuseError, ValueError):
    pass


class BadSpec(DepthFuseError, ValueError):
    pass


class EmptyAccumulator(DepthFuseError, ValueError):
    pass


class SolverDiverged(DepthFuseError, RuntimeError):
    """The IRLS objective rose on several consecutive outer iterations."""


class RasterError(DepthFuseError, IOError):
    pass


class BadMagic(RasterError):
    pass


class ChecksumMismatch(RasterError):
    pass


class Truncated(RasterError):
    pass


class Malformed(RasterError):
    pass


class UnfillableWarning(UserWarning):
    """Some invalid pixels could not be reached by the hole filler."""
