"""Exception and warning types raised across the package."""


class QlaError(Exception):
    """Base class for domain errors (mapped to exit code 1 by the CLI)."""


class DomainError(QlaError, ValueError):
    pass


class NonSPDError(QlaError, ArithmeticError):
    def __init__(self, msg, index=None):
        super().__init__(msg if index is None else f"{msg} (at k={index})")
        self.index = index


class UnsupportedScheme(QlaError):
    pass


class NumericBlowup(QlaError, ArithmeticError):
    pass


class NoConvergence(QlaError):
    pass


class UnsupportedDimension(QlaError):
    pass


class DegeneratePosterior(QlaError, ArithmeticError):
    pass


class SingularInformation(QlaError, ArithmeticError):
    pass


class InvalidAlphas(QlaError, ValueError):
    pass


class EmptyRegion(QlaError):
    pass


class ConfigError(QlaError, ValueError):
    pass


class FormatError(QlaError, ValueError):
    pass


class GridError(QlaError, ValueError):
    pass


class NonSPDWarning(RuntimeWarning):
    pass


class GridTooCoarse(RuntimeWarning):
    pass
