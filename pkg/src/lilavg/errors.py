"""Exception types shared across the package."""


class ToleranceError(RuntimeError):
    """Quadrature failed to converge; carries the best partial estimate."""

    def __init__(self, message: str, partial: float):
        super().__init__(f"{message} (partial estimate {partial!r})")
        self.partial = partial


class BracketError(ValueError):
    """Weight inversion could not bracket the target value on (0, 1]."""


class ConstructionError(ValueError):
    """A construction condition cannot be satisfied; the message names it."""


class PrecisionError(RuntimeError):
    """A sampler cannot reach the requested precision."""
