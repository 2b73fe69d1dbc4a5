"""Exception types shared across the package."""


class CapflowError(Exception):
    """Base class for all package errors."""


class DomainError(CapflowError):
    """A mathematical parameter is outside its admissible range."""


class ConfigurationError(CapflowError):
    """A configuration value is structurally invalid (grid too small, bad mode, ...)."""


class ConvexityLossError(CapflowError):
    """The second fundamental form lost positive definiteness.

    Carries the worst offending node index and its smallest eigenvalue so
    steppers can shrink the step instead of crashing.
    """

    def __init__(self, node: int, eigenvalue: float):
        self.node = int(node)
        self.eigenvalue = float(eigenvalue)
        super().__init__(
            f"convexity lost at node {self.node} (min eigenvalue {self.eigenvalue:.3e})"
        )


class StepFailureError(CapflowError):
    """The time stepper could not produce an acceptable step at dt_min."""


class NewtonFailureError(CapflowError):
    """The stationary solver failed to converge; carries the iteration trace."""

    def __init__(self, message: str, trace=None):
        self.trace = list(trace) if trace is not None else []
        super().__init__(message)
