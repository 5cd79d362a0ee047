"""Exception types raised across the package.

Contract violations (bad shapes, out-of-range arguments) raise plain
``ValueError``; the classes below mark the domain-specific failures callers
may want to catch separately.
"""


class InfeasibleError(ValueError):
    """A beam or constraint set cannot be realized by the array."""


class DetectionError(RuntimeError):
    """No signal rose above the detection floor."""


class UnsupportedModeError(ValueError):
    """The requested sensing mode cannot provide this quantity."""


class NumericalError(ArithmeticError):
    """An iterative solver produced a non-finite or singular quantity."""


class InstanceTooLargeError(ValueError):
    """An exhaustive solver was asked to handle too many entities."""
