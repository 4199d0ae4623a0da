"""Exception hierarchy shared by the simulation, models and controllers."""


class SimulationAbort(RuntimeError):
    """Base class for failures that must stop a closed-loop run."""


class SingularDenominator(SimulationAbort):
    """The plant state reached the singular manifold ``a3 + x1**2 + x2**2 == 0``."""


class NonFiniteOutput(SimulationAbort):
    """A controller produced a NaN or infinite control value."""


class NonFinitePrediction(SimulationAbort):
    """A model rollout produced NaN or infinite outputs."""


class NonFiniteSensitivity(SimulationAbort):
    """The trajectory sensitivity matrix contains NaN or infinite entries."""


class NonFiniteGradient(ArithmeticError):
    """A learning step produced a NaN/inf gradient; callers skip the update."""


class DimensionMismatch(ValueError):
    """Array shapes do not agree with a layer or model definition."""


class OutOfWindow(ValueError):
    """Time lies outside every reference segment."""


class EmptyWindow(ValueError):
    """An integration window holds fewer than two samples."""


class RangeOutsideTrace(ValueError):
    """A plotting range is not covered by the recorded trace."""


class ConfigError(ValueError):
    """A scenario configuration is malformed."""
