"""
Toric Bernstein - Bergman-Bernstein approximation on Delzant polytopes

This package builds the Bernstein operators attached to toric Kähler
metrics: lattice points of dilated Delzant polytopes are weighted by the
normalized squared norms of monomial sections, and a function on the
polytope is approximated by its expectation under those weights. It also
checks the asymptotic expansion of these operators and the related
lattice-sum and curvature identities numerically.
"""

__version__ = "0.1.0"

from .exceptions import ToricBernsteinError
from .polytope import (
    DelzantPolytope,
    Facet,
    LatticeSet,
    ell,
    facet_chart,
    interval,
    lattice_points,
    load_polytope,
    standard_simplex,
    unit_cube,
    validate_delzant,
)
from .expr import Expr, parse
from .metric import ToricMetric
from .quad import QuadratureSpec, integrate_facet_leray, integrate_log, integrate_polytope
from .bernstein import (
    BernsteinEvaluator,
    EmpiricalMeasure,
    NormingTable,
    build_norming_table,
    classical_bernstein,
    norming_closed_form_simplex,
    norming_constant,
    weight_exponent,
)
from .asymptotics import (
    ExpansionReport,
    L1_apply,
    L2_classical_apply,
    bergman_a1,
    donaldson_residual,
    em_two_term,
    estimate_order,
    measure_moments,
    riemann_sum,
)

__all__ = [
    "ToricBernsteinError",
    "DelzantPolytope",
    "Facet",
    "LatticeSet",
    "ell",
    "facet_chart",
    "interval",
    "lattice_points",
    "load_polytope",
    "standard_simplex",
    "unit_cube",
    "validate_delzant",
    "Expr",
    "parse",
    "ToricMetric",
    "QuadratureSpec",
    "integrate_facet_leray",
    "integrate_log",
    "integrate_polytope",
    "BernsteinEvaluator",
    "EmpiricalMeasure",
    "NormingTable",
    "build_norming_table",
    "classical_bernstein",
    "norming_closed_form_simplex",
    "norming_constant",
    "weight_exponent",
    "ExpansionReport",
    "L1_apply",
    "L2_classical_apply",
    "bergman_a1",
    "donaldson_residual",
    "em_two_term",
    "estimate_order",
    "measure_moments",
    "riemann_sum",
]
