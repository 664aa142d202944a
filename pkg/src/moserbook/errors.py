"""Exception hierarchy shared by all modules."""


class MoserBookError(Exception):
    """Base class for every error raised by the package."""


class CollisionLocus(MoserBookError):
    """Regularized state sits on the collision fibre and has no physical image."""


class DegenerateInput(MoserBookError):
    pass


class CollisionInput(MoserBookError):
    """Unregularized position coincides with a primary."""


class OtherPrimaryCollision(MoserBookError):
    """Regularized state collides with the primary that is not regularized."""


class OutOfRange(MoserBookError):
    pass


class SamplingFailure(MoserBookError):
    pass


class RegionMismatch(MoserBookError):
    pass


class StepFailure(MoserBookError):
    pass


class TimeBudgetExceeded(MoserBookError):
    pass


class OnBinding(MoserBookError):
    """Return map requested for a point on (or numerically at) the binding."""


class NoReturn(MoserBookError):
    """The flow did not come back to the page before the time budget ran out."""


class NoConvergence(MoserBookError):
    pass


class OffBinding(MoserBookError):
    pass


class NonNegativeEnergy(MoserBookError):
    pass


class EnergyDomain(MoserBookError):
    pass


class SupercriticalEnergy(MoserBookError):
    pass


class OutsidePage(MoserBookError):
    pass


class ConfigError(MoserBookError):
    pass
