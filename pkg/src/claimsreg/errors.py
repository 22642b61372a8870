"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented precondition."""


class ModelError(RuntimeError):
    """The log-posterior or its gradient could not be evaluated."""


class LayoutMismatchError(ValidationError):
    """A draws file does not match the parameter layout of a model."""


class DegenerateChainWarning(RuntimeWarning):
    """A convergence statistic is undefined because a chain has no variance."""


class DivergenceWarning(RuntimeWarning):
    """Too many divergent transitions; the fit should not be trusted."""


class ParetoKWarning(RuntimeWarning):
    """Pareto shape estimates above the reliability threshold."""
