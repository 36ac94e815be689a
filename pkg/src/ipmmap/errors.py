"""Exception hierarchy shared across the package."""


class IpmMapError(Exception):
    """Base class for all errors raised by this package."""


class NonPositiveDepth(IpmMapError):
    """Point lies at or behind the camera plane."""


class RayParallelToGround(IpmMapError):
    """Pixel ray does not intersect the ground plane in front of the camera."""


class AngleNearPi(IpmMapError):
    """Rotation log requested at the cut locus."""


class TooFewControlPoints(IpmMapError):
    """Lane spline needs at least four control points."""


class SpanTooShort(IpmMapError):
    """Input points do not cover enough arc length to fit a spline."""


class DegenerateGeometry(IpmMapError):
    """Chord parameterization collapsed (duplicate points)."""


class PointsNotBeyondExtent(IpmMapError):
    """Lane extension points do not reach beyond the current lane end."""


class AmbiguousCorrespondence(IpmMapError):
    """Two corner orderings explain the observation equally well."""


class DegenerateDirection(IpmMapError):
    """Projected lane direction too short to define a residual."""


class InsufficientObservations(IpmMapError):
    """Optimization requested on a graph without enough measurements."""


class SingularNormalEquations(IpmMapError):
    """Damped normal equations unsolvable even at maximum damping."""


class NoMatches(IpmMapError):
    """Metric requested but no map element matched the ground truth."""


class NoLanes(IpmMapError):
    """Lane metric requested but one of the maps has no lanes."""


class LengthMismatch(IpmMapError):
    """Pose sequences to compare have different frames."""


class SchemaError(IpmMapError):
    """Document does not conform to its declared schema."""
