"""Exception types raised across the package."""


class IonKinkError(Exception):
    """Base class for all package errors."""


class ConfigError(IonKinkError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(IonKinkError):
    """Base class for numerical failures."""


class CoincidentIons(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class ConstraintSingular(NumericalError):
    pass


class NoKinkFormed(NumericalError):
    pass


class TooFewExtrema(NumericalError):
    pass


class NotAKinkInterface(NumericalError):
    pass


class NoDistortion(NumericalError):
    pass


class Instability(NumericalError):
    pass


class IonLoss(NumericalError):
    pass


class OutOfRange(NumericalError):
    pass


class NoRoot(NumericalError):
    pass


class EmptyGroup(IonKinkError, ValueError):
    pass
