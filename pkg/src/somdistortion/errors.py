"""Exception hierarchy shared by every module of the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the operation is defined."""


class NumericalFailure(RuntimeError):
    """A numerical procedure could not produce a valid answer."""


class DeadUnitError(NumericalFailure):
    """A unit received zero total neighbourhood mass during a batch update."""


class CollapseError(NumericalFailure):
    """Centroids collapsed onto each other or crossed during an iteration."""


class ConvergenceError(NumericalFailure):
    """An iterative solver exhausted its budget without meeting tolerance."""


class NonDifferentiableError(NumericalFailure):
    """The requested derivative does not exist at the given configuration."""
