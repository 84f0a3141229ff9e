from typing import Optional


class RectifierError(Exception):
    """
    Base class for every error raised by the conformal rectifier services.
    """


class ConfigurationError(RectifierError, ValueError):
    """
    The request itself is wrong: unknown curve, invalid parameters, bad schedule or config file.
    """


class DomainError(ConfigurationError):
    """
    An argument lies outside the domain of the operation (arc length, window, cross ratio).
    """


class OutOfRegionError(DomainError):
    """
    Cross ratios violate one of the bounds u + v >= 1, |u - v| <= 1.
    """

    def __init__(self, message: str, bound: str):
        super().__init__(message)
        self.bound = bound


class NumericalError(RectifierError, ArithmeticError):
    """
    The geometry is degenerate or the requested quantity cannot be computed.
    """


class DegenerateInputError(NumericalError):
    """
    Coincident points where distinct points are required.
    """


class DegeneratePlaneError(DegenerateInputError):
    """
    A point triple is collinear, so it does not fix a plane.
    """


class DegenerateSphereError(DegenerateInputError):
    """
    A point quadruple is coplanar, so its circumsphere is a plane.
    """


class DegenerateCurveError(NumericalError):
    """
    The curve speed |x'| drops below the regularity floor.
    """


class InflectionPointError(NumericalError):
    """
    Curvature below the floor; the Frenet frame is undefined.
    """


class ConformalDegeneracyError(NumericalError):
    """
    nu vanishes (circle arcs, planar critical points); Q, T and P are undefined.
    """

    def __init__(self, message: str, s: Optional[float] = None):
        super().__init__(message)
        self.s = s


class PoleError(NumericalError):
    """
    A point sits at the centre of an inversion and would be mapped to infinity.
    """


class CapabilityError(NumericalError):
    """
    The curve cannot supply the derivative order an operation needs.
    """
