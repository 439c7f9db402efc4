"""Exception hierarchy shared by all modules."""


class BHError(Exception):
    """Base class for errors raised by the toolkit."""


class InvalidParameter(BHError, ValueError):
    """A parameter object violates one of its invariants."""


class DomainError(BHError, ValueError):
    """An argument lies outside the domain of the operation."""


class CapacityError(InvalidParameter):
    """The truncated local Hilbert space cannot hold all particles."""


class ConvergenceError(BHError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class TruncationOverflow(BHError, RuntimeError):
    """Discarded weight on a bond exceeded the hard-fail threshold."""


class NoStationaryPoint(BHError, ValueError):
    """The requested ray lies outside the cone of the dispersion."""


class SingularCurvature(BHError, ValueError):
    """The dispersion curvature vanishes at the stationary point."""


class EmptySignal(BHError, ValueError):
    """No row of a correlation map carries a usable signal."""


class InsufficientPoints(BHError, ValueError):
    """Too few points to fit a velocity with an error estimate."""


class MapFormatError(BHError, ValueError):
    """A correlation-map file could not be parsed."""
