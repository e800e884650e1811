"""Exception types raised across the package."""


class CatError(Exception):
    """Base class for every error raised by crossaxis."""


class ShapeMismatch(CatError, ValueError):
    pass


class AxisOutOfRange(CatError, IndexError):
    pass


class NotScalar(CatError, ValueError):
    pass


class DetachedTensor(CatError, ValueError):
    """Raised when backward is asked about a tensor that was never recorded."""


class LabelOutOfRange(CatError, ValueError):
    pass


class BadHeadDim(CatError, ValueError):
    pass


class NotSquareGrid(CatError, ValueError):
    pass


class BadImageSize(CatError, ValueError):
    pass


class TooFewSizes(CatError, ValueError):
    pass


class MissingFile(CatError, FileNotFoundError):
    pass


class TruncatedRecord(CatError, ValueError):
    pass


class NonFiniteLoss(CatError, FloatingPointError):
    pass


class BadMagic(CatError, ValueError):
    pass


class VersionMismatch(CatError, ValueError):
    pass


class TruncatedFile(CatError, ValueError):
    pass


class ConfigError(CatError, ValueError):
    """Invalid or unknown configuration key/value."""
