"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` (the class name) so the
CLI can emit it in its error JSON. ``ValidationError`` subclasses map to exit
status 2, ``NumericalError`` subclasses to exit status 3.
"""

from __future__ import annotations


class MVBSDEError(Exception):
    @property
    def code(self) -> str:
        return type(self).__name__


class ValidationError(MVBSDEError, ValueError):
    pass


class NumericalError(MVBSDEError, ArithmeticError):
    pass


class UnsupportedOperator(ValidationError):
    pass


class DegenerateDomain(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass


class NonUniformWeights(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class MissingLawFlow(ValidationError):
    pass


class DepthTooLarge(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NonFinite(NumericalError):
    def __init__(self, message: str, particle: int | None = None, step: int | None = None):
        super().__init__(message)
        self.particle = particle
        self.step = step


class RegressionRankDeficient(NumericalError):
    pass


class PicardDiverged(NumericalError):
    pass


class GridTooCoarse(NumericalError):
    pass
