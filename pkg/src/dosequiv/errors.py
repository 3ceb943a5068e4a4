"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes (see ``dosequiv.cli``).
"""


class DosequivError(Exception):
    """Base class for all package errors."""


class ConfigError(DosequivError):
    """Invalid run configuration or schema violation."""


class DataValidationError(DosequivError):
    """Input data does not validate against the study design."""


class FitConvergenceError(DosequivError):
    """No multistart candidate converged.

    Carries the best candidate found so the caller can inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConstraintError(DosequivError):
    """Equality-constrained fit failed to reach the required residual.

    Carries the last iterate and the achieved constraint residual.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class BootstrapError(DosequivError):
    """Too many bootstrap replicates failed to refit."""


class SimulationError(DosequivError):
    """Simulation harness failure (aggregated replicate errors or sanity check)."""
