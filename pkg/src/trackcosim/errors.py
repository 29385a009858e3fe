"""Exception types shared across the package."""


class TrackCosimError(Exception):
    """Base class for all errors raised by trackcosim."""


class FormatError(TrackCosimError, ValueError):
    """Malformed input file (bad header, bad row, index out of range)."""


class ModelError(TrackCosimError, ValueError):
    """The model is well-formed on disk but physically or structurally invalid."""


class SingularCondensationError(ModelError):
    """The massless-dof block of the stiffness matrix is singular.

    ``dofs`` lists the original dof indices taking part in the mechanism.
    """

    def __init__(self, dofs, message=None):
        self.dofs = sorted(int(d) for d in dofs)
        super().__init__(message or f"singular stiffness block among massless dofs {self.dofs}")


class DivergenceError(TrackCosimError, RuntimeError):
    """Non-finite or runaway state detected during time integration."""

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"solution diverged at step {self.step}")


class ConvergenceError(TrackCosimError, RuntimeError):
    """Support-status iteration hit its cap without settling."""

    def __init__(self, step, iterations):
        self.step = int(step)
        self.iterations = int(iterations)
        super().__init__(
            f"support status did not converge within {self.iterations} iterations at step {self.step}"
        )


class TransportError(TrackCosimError, RuntimeError):
    """Co-simulation data exchange failed."""


class ConfigError(TrackCosimError, ValueError):
    """Invalid scenario configuration."""
