"""Exception hierarchy shared by all sgpnav modules."""

from __future__ import annotations


class SgpNavError(Exception):
    """Base class for every error raised by sgpnav."""


class InvalidArgumentError(SgpNavError, ValueError):
    """An argument is non-finite, mis-shaped or outside its domain."""


class NumericalConditioningError(SgpNavError, ArithmeticError):
    """Cholesky factorization failed even after jitter escalation."""


class OptimizationDivergedError(SgpNavError, ArithmeticError):
    """A gradient became non-finite during optimization.

    ``last_valid`` holds the last iterate whose objective was finite.
    """

    def __init__(self, message: str, last_valid=None):
        super().__init__(message)
        self.last_valid = last_valid


class DegenerateSurfaceError(SgpNavError, ValueError):
    """The variance surface is constant and carries no information."""


class NoFeasibleSubgoalError(SgpNavError):
    """No candidate subgoal survived the feasibility gates."""


class BoundsError(SgpNavError, ValueError):
    """A query falls outside the terrain heightmap."""


class DegenerateOriginError(SgpNavError, ValueError):
    """A ray origin lies at or below the terrain surface."""


class InsufficientDataError(SgpNavError, ValueError):
    """A trajectory log is too short for the requested metric."""


class UndefinedCurvatureError(SgpNavError, ValueError):
    """Every log sample is below the velocity cutoff for curvature."""


class ScenarioValidationError(SgpNavError, ValueError):
    """A scenario configuration is inconsistent or incomplete."""
