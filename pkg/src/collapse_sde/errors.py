class DimensionError(ValueError):
    pass


class ZeroStateError(ValueError):
    pass


class ChartError(ValueError):
    """Pivot amplitude too small for the requested chart."""


class ConvergenceError(RuntimeError):
    pass


class NumericalBlowup(FloatingPointError):
    """A trajectory produced a non-finite coordinate.

    Carries the last finite state and the step index for diagnosis.
    """

    def __init__(self, message, *, step=None, last_state=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.last_state = last_state
        self.trajectory = trajectory


class ConfigError(ValueError):
    pass
