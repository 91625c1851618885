"""Exception hierarchy shared by every module."""


class BoostError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(BoostError, ValueError):
    pass


class NonFinite(BoostError, FloatingPointError):
    pass


class SizeTooLarge(BoostError):
    """Exact enumeration was requested above the configured state cap."""


class DegenerateComponent(BoostError):
    pass


class IncompatibleSpaces(BoostError, ValueError):
    pass


class Unsupported(BoostError):
    pass


class DegenerateWeights(BoostError):
    """Importance weights collapsed onto too few samples."""


class ZeroAcceptance(BoostError):
    pass


class EmptyLabeledSet(BoostError, ValueError):
    pass


class BadParams(BoostError, ValueError):
    pass


class FormatError(BoostError, ValueError):
    pass


class ShapeError(BoostError, ValueError):
    pass


class ConfigError(BoostError, ValueError):
    pass
