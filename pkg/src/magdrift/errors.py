"""Exception types raised by magdrift."""


class MagdriftError(Exception):
    """Base class for computational failures (CLI exit status 1)."""


class ConfigError(MagdriftError):
    """Invalid configuration or model parameters (CLI exit status 2)."""


class FieldHazard(MagdriftError):
    """Magnetic intensity or metric is degenerate at the requested point."""


class ConditionViolation(MagdriftError):
    """A pointwise hypothesis on the model fails where it was declared."""


class IntegrationError(MagdriftError):
    """The ODE integrator failed or could not meet the energy tolerance."""


class GrazingIncidence(MagdriftError):
    """A billiard trajectory touched the boundary almost tangentially."""


class NoOscillation(MagdriftError):
    """No gyration could be detected in a trajectory."""


class MultipleMinima(MagdriftError):
    """V/F has more than one local minimum along a magnetic line."""


class NonVerticalLine(MagdriftError):
    """The magnetic line through the point is not parallel to the x3 axis."""


class NonConfinement(MagdriftError):
    """The fiber potential does not confine below the requested level."""


class QuadratureError(MagdriftError):
    """Quadrature failed to converge within the node budget."""


class InsufficientPoints(MagdriftError):
    """Too few nonzero data points for a log-log fit."""
