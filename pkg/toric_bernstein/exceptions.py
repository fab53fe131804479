"""
Error hierarchy for the toric Bernstein package.

Every error carries an ``exit_code`` read by the command-line interface:
1 for validation and identity failures, 2 for configuration problems and
3 for numerical non-convergence.
"""

from typing import Optional, Sequence


class ToricBernsteinError(Exception):
    """Base class for all package errors."""

    exit_code = 1


# Polytope geometry

class PolytopeError(ToricBernsteinError, ValueError):
    """Invalid polytope data or a point outside the polytope."""


class UnboundedPolytope(PolytopeError):
    """The facet inequalities admit a recession direction."""


class EmptyInterior(PolytopeError):
    """The facet inequalities cut out a set with no interior."""


class NonPrimitiveNormal(PolytopeError):
    """A facet normal is zero or not a primitive lattice vector."""


class NotDelzant(PolytopeError):
    """
    A vertex violates the Delzant condition.

    Attributes:
        vertex: The offending vertex (tuple of Fractions), if known
        determinant: Determinant of the incident normals, if square
        n_incident: Number of facets through the vertex
    """

    def __init__(
        self,
        message: str,
        vertex: Optional[Sequence] = None,
        determinant: Optional[int] = None,
        n_incident: Optional[int] = None,
    ):
        super().__init__(message)
        self.vertex = tuple(vertex) if vertex is not None else None
        self.determinant = determinant
        self.n_incident = n_incident


class DimensionMismatch(PolytopeError):
    """A vector has the wrong number of coordinates."""


class DegenerateFacet(PolytopeError):
    """A facet is not (m-1)-dimensional."""


class OutsidePolytope(PolytopeError):
    """A point lies outside the closed polytope."""


class BoundaryPoint(PolytopeError):
    """A point lies on the boundary where the requested quantity diverges."""


class NotSimplex(PolytopeError):
    """The closed-form norming path needs the canonical standard simplex."""


# Expressions

class ExprError(ToricBernsteinError, ValueError):
    """Problems parsing or evaluating a test-function expression."""


class ExprSyntaxError(ExprError):
    """
    Malformed expression text.

    Attributes:
        offset: Byte offset into the source text where parsing failed
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifier(ExprError):
    """An identifier that is neither a variable, constant nor function."""


class VariableOutOfRange(ExprError):
    """A variable x<k> with k outside 1..m."""


class DomainError(ExprError):
    """Evaluation left the real domain (log of nonpositive, division by zero)."""


# Metrics and operators

class InvalidPerturbation(ToricBernsteinError, ValueError):
    """The perturbation g is not finite on the closed polytope."""


class NotPositiveDefinite(ToricBernsteinError, ValueError):
    """The Hessian of the symplectic potential is not positive definite."""


class UnsupportedMetric(ToricBernsteinError, ValueError):
    """The operation is only defined for a specific metric."""


class CrossCheckFailure(ToricBernsteinError):
    """Closed-form and quadrature norming constants disagree."""


class NonPositiveResidual(ToricBernsteinError, ValueError):
    """Order estimation needs strictly positive residuals."""


# Numerical non-convergence

class ConvergenceFailure(ToricBernsteinError):
    """Newton iteration for the moment-map inverse did not converge."""

    exit_code = 3


class NoConvergence(ToricBernsteinError):
    """
    Quadrature refinement ladder exhausted.

    Attributes:
        estimates: The last two estimates (coarser, finer)
    """

    exit_code = 3

    def __init__(self, message: str, estimates: Sequence[float] = ()):
        super().__init__(message)
        self.estimates = tuple(estimates)


# Configuration

class ConfigError(ToricBernsteinError, ValueError):
    """Invalid run configuration."""

    exit_code = 2
