"""Exception types raised across the package."""


class ObjScaleError(Exception):
    """Base class for every error raised by objscale."""


class ParseError(ObjScaleError, ValueError):
    pass


class ValidationError(ObjScaleError, ValueError):
    pass


# geometry
class NonEllipsoid(ObjScaleError, ValueError):
    pass


class UnboundedConic(ObjScaleError, ValueError):
    pass


class BehindCamera(ObjScaleError, ValueError):
    pass


class EmptyInput(ObjScaleError, ValueError):
    pass


# scale estimation
class InvalidDims(ObjScaleError, ValueError):
    pass


class NoDetections(ObjScaleError, ValueError):
    pass


class NoSamples(ObjScaleError, ValueError):
    pass


class DegenerateProblem(ObjScaleError, ValueError):
    pass


class NoUsableObjects(ObjScaleError, ValueError):
    pass


class NonPositiveScale(ObjScaleError, ValueError):
    pass


# joint optimization
class TooFewPoints(ObjScaleError, ValueError):
    pass


class SingularNormalEquations(ObjScaleError, RuntimeError):
    pass


class GaugeError(ObjScaleError, ValueError):
    """No pose is held fixed, so the problem has a free rigid gauge."""


# simulation / evaluation
class UnknownClass(ObjScaleError, KeyError):
    pass


class DegenerateGeometry(ObjScaleError, ValueError):
    pass


class NoAssociations(ObjScaleError, ValueError):
    pass
