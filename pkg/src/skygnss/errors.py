"""Exception hierarchy shared by all modules."""


class SkyGnssError(Exception):
    """Base class for every error raised by this package."""


class NearSingular(SkyGnssError):
    pass


class ZeroVector(SkyGnssError):
    pass


class BehindCamera(SkyGnssError):
    pass


class OutsideValidCircle(SkyGnssError):
    pass


class NoConvergence(SkyGnssError):
    pass


class DimensionMismatch(SkyGnssError):
    pass


class EvenKernel(SkyGnssError):
    pass


class EmptyHistogram(SkyGnssError):
    pass


class NonPositiveElevation(SkyGnssError):
    pass


class MixedEpochs(SkyGnssError):
    pass


class TimestampMismatch(SkyGnssError):
    pass


class Underdetermined(SkyGnssError):
    pass


class Diverged(SkyGnssError):
    pass


class SingularGeometry(SkyGnssError):
    pass


class Unobservable(SkyGnssError):
    pass
