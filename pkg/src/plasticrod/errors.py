"""Exception types shared across the package."""


class PlasticRodError(Exception):
    """Base class for all package errors."""


class InvalidInput(PlasticRodError, ValueError):
    pass


class DegenerateDeformation(PlasticRodError):
    """A deformation gradient with non-positive determinant was encountered."""


class LogBranchCut(PlasticRodError):
    """Rotation angle too close to pi for a well-defined logarithm."""


class SolverFailure(PlasticRodError):
    pass


class StagnationError(SolverFailure):
    """Line search failed repeatedly; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None, partial=None):
        super().__init__(message)
        self.best = best
        self.partial = partial


class ConfigError(PlasticRodError):
    """Configuration rejected; ``problems`` lists every violated constraint."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
