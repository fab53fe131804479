"""
Adaptive simplicial quadrature over polytopes and their facets.

The polytope is cut into m-simplices (centroid fan), each carrying a
collapsed Gauss-Jacobi product rule that integrates polynomials of
degree 2*order - 1 exactly. Simplices are refined dyadically (2, 4 or 8
children in dimension 1, 2, 3) until two consecutive levels agree to the
requested relative tolerance.

Log-space integration works the same way with logsumexp, so integrals of
exp(E) stay representable when E is of order -N.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, roots_jacobi

from .exceptions import ConfigError, NoConvergence
from .polytope import DelzantPolytope, facet_chart, triangulate

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 16
DEFAULT_LEVELS = 8
MIN_ORDER = 4
DEFAULT_TOL = {1: 1e-10, 2: 1e-8, 3: 1e-6}

# Children of a k-simplex as averages of parent vertices.
_CHILDREN = {
    1: [[(0,), (0, 1)], [(0, 1), (1,)]],
    2: [
        [(0,), (0, 1), (0, 2)],
        [(0, 1), (1,), (1, 2)],
        [(0, 2), (1, 2), (2,)],
        [(0, 1), (1, 2), (0, 2)],
    ],
    3: [
        [(0,), (0, 1), (0, 2), (0, 3)],
        [(0, 1), (1,), (1, 2), (1, 3)],
        [(0, 2), (1, 2), (2,), (2, 3)],
        [(0, 3), (1, 3), (2, 3), (3,)],
        [(0, 1), (0, 2), (0, 3), (1, 3)],
        [(0, 1), (0, 2), (1, 2), (1, 3)],
        [(0, 2), (0, 3), (1, 3), (2, 3)],
        [(0, 2), (1, 2), (1, 3), (2, 3)],
    ],
}


@dataclass(frozen=True)
class QuadratureSpec:
    """
    Quadrature settings.

    Attributes:
        order: Gauss points per direction on each simplex, at least 4
        levels: Maximum number of dyadic refinements
        tol: Relative agreement required between consecutive levels
    """
    order: int = DEFAULT_ORDER
    levels: int = DEFAULT_LEVELS
    tol: float = DEFAULT_TOL[1]

    def __post_init__(self):
        if isinstance(self.order, bool) or int(self.order) != self.order or self.order < MIN_ORDER:
            raise ConfigError(f"quadrature order must be an integer >= {MIN_ORDER}, got {self.order!r}")
        if isinstance(self.levels, bool) or int(self.levels) != self.levels or self.levels < 1:
            raise ConfigError(f"quadrature levels must be a positive integer, got {self.levels!r}")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigError(f"quadrature tolerance must be positive, got {self.tol!r}")

    @classmethod
    def default(cls, dim: int) -> "QuadratureSpec":
        return cls(tol=DEFAULT_TOL.get(dim, DEFAULT_TOL[3]))

    def with_overrides(self, order=None, levels=None, tol=None) -> "QuadratureSpec":
        changes = {k: v for k, v in (("order", order), ("levels", levels), ("tol", tol)) if v is not None}
        return replace(self, **changes)


@dataclass
class QuadratureResult:
    """A converged estimate with its refinement history."""
    value: float
    error_estimate: float
    level: int
    n_simplices: int
    history: list = field(default_factory=list)


@lru_cache(maxsize=32)
def simplex_rule(k: int, order: int):
    """
    Collapsed product rule on the reference k-simplex {t >= 0, sum t <= 1}.

    Direction j carries Gauss-Jacobi weight (1 - s)^(k-1-j), which absorbs
    the Jacobian of the collapsing map.

    Returns:
        (nodes (q, k), weights (q,)) with weights summing to 1/k!
    """
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    axes, weights = [], []
    for j in range(k):
        a = k - 1 - j
        s, w = roots_jacobi(order, a, 0)
        axes.append((s + 1.0) / 2.0)
        weights.append(w / 2.0 ** (a + 1))
    t = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    w = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1).reshape(-1, k), axis=1)
    nodes = np.empty_like(t)
    remaining = np.ones(len(t))
    for j in range(k):
        nodes[:, j] = t[:, j] * remaining
        remaining = remaining * (1.0 - t[:, j])
    nodes.setflags(write=False)
    w.setflags(write=False)
    return nodes, w


def subdivide(simplices: np.ndarray) -> np.ndarray:
    """
    One dyadic refinement of a stack of k-simplices.

    Args:
        simplices: (s, k+1, m) array

    Returns:
        (s * 2^k, k+1, m) array, children of each parent kept together
    """
    k = simplices.shape[1] - 1
    if k == 0:
        return simplices
    children = []
    for template in _CHILDREN[k]:
        children.append(np.stack([simplices[:, list(idx), :].mean(axis=1) for idx in template], axis=1))
    return np.stack(children, axis=1).reshape(-1, k + 1, simplices.shape[2])


def _simplex_measure(simplices: np.ndarray) -> np.ndarray:
    """k! times the k-volume of each simplex, i.e. the affine-map Jacobian."""
    k = simplices.shape[1] - 1
    if k == 0:
        return np.ones(len(simplices))
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    gram = edges @ np.swapaxes(edges, 1, 2)
    return np.sqrt(np.maximum(np.linalg.det(gram), 0.0))


def nodes_and_weights(simplices: np.ndarray, order: int):
    """
    Map the reference rule onto a stack of simplices.

    Returns:
        points (s, q, m) and weights (s, q)
    """
    k = simplices.shape[1] - 1
    ref_nodes, ref_weights = simplex_rule(k, order)
    base = simplices[:, 0, :]
    if k == 0:
        points = base[:, None, :]
    else:
        edges = simplices[:, 1:, :] - base[:, None, :]
        points = base[:, None, :] + np.einsum("qk,skm->sqm", ref_nodes, edges)
    weights = ref_weights[None, :] * _simplex_measure(simplices)[:, None]
    return points, weights


def _ladder(base: np.ndarray, spec: QuadratureSpec, estimate: Callable, agree: Callable, what: str):
    """Refine until agree(previous, current); returns (estimate, level, n_simplices, history)."""
    simplices = base
    history = []
    previous = None
    for level in range(spec.levels + 1):
        points, weights = nodes_and_weights(simplices, spec.order)
        current = estimate(points, weights)
        history.append(current)
        if previous is not None and agree(previous, current):
            logger.debug("%s converged at level %d on %d simplices", what, level, len(simplices))
            return current, level, len(simplices), history
        previous = current
        if level < spec.levels:
            simplices = subdivide(simplices)
    raise NoConvergence(
        f"{what} did not converge to tol {spec.tol:g} within {spec.levels} refinements "
        f"(last estimates {history[-2]!r}, {history[-1]!r})",
        estimates=(history[-2], history[-1]),
    )


def _linear_estimate(f: Callable):
    def estimate(points, weights):
        s, q, m = points.shape
        values = np.asarray(f(points.reshape(-1, m)), dtype=float).reshape(s, q)
        total = math.fsum(np.sum(values * weights, axis=1))
        magnitude = math.fsum(np.sum(np.abs(values) * weights, axis=1))
        return total, magnitude
    return estimate


def _run_linear(base: np.ndarray, f: Callable, spec: QuadratureSpec, what: str) -> QuadratureResult:
    def agree(previous, current):
        return abs(current[0] - previous[0]) <= spec.tol * current[1]

    (value, _), level, n_simplices, history = _ladder(base, spec, _linear_estimate(f), agree, what)
    values = [h[0] for h in history]
    return QuadratureResult(
        value=value,
        error_estimate=abs(values[-1] - values[-2]),
        level=level,
        n_simplices=n_simplices,
        history=values,
    )


def _base_simplices(polytope: DelzantPolytope) -> np.ndarray:
    return np.stack(triangulate(polytope))


def integrate_polytope_detailed(
    polytope: DelzantPolytope,
    f: Callable,
    spec: Optional[QuadratureSpec] = None,
) -> QuadratureResult:
    """
    Integrate f over the polytope, keeping the refinement history.

    Args:
        polytope: Integration domain
        f: Vectorized integrand mapping (n, m) points to (n,) values
        spec: Quadrature settings; QuadratureSpec.default(m) when omitted
    """
    spec = spec or QuadratureSpec.default(polytope.dim)
    return _run_linear(_base_simplices(polytope), f, spec, "polytope integral")


def integrate_polytope(polytope: DelzantPolytope, f: Callable, spec: Optional[QuadratureSpec] = None) -> float:
    """∫_P f dx."""
    return integrate_polytope_detailed(polytope, f, spec).value


def integrate_log_batch(
    polytope: DelzantPolytope,
    exponents: Callable,
    spec: Optional[QuadratureSpec] = None,
) -> np.ndarray:
    """
    log ∫_P exp(E_i) dx for a batch of exponents sharing nodes.

    Args:
        exponents: Maps (n, m) points to a (k, n) array; entries may be -inf

    Returns:
        (k,) array of logs; -inf where the integrand vanishes identically
    """
    spec = spec or QuadratureSpec.default(polytope.dim)

    def estimate(points, weights):
        s, q, m = points.shape
        E = np.asarray(exponents(points.reshape(-1, m)), dtype=float)
        E = E.reshape(E.shape[0], s, q)
        with np.errstate(divide="ignore"):
            log_weights = np.log(weights)
            per_simplex = logsumexp(E + log_weights[None, :, :], axis=2)
            return logsumexp(per_simplex, axis=1)

    def agree(previous, current):
        both_empty = np.isneginf(previous) & np.isneginf(current)
        with np.errstate(invalid="ignore"):
            gap = np.abs(np.expm1(current - previous))
        return bool(np.all(both_empty | (gap <= spec.tol)))

    value, _, _, _ = _ladder(_base_simplices(polytope), spec, estimate, agree, "log integral")
    return value


def integrate_log(polytope: DelzantPolytope, E: Callable, spec: Optional[QuadratureSpec] = None) -> float:
    """
    log ∫_P exp(E(x)) dx computed in log space.

    Args:
        E: Vectorized exponent mapping (n, m) points to (n,) values
    """
    value = integrate_log_batch(polytope, lambda pts: np.asarray(E(pts), dtype=float)[None, :], spec)
    return float(value[0])


def integrate_facet_leray(
    polytope: DelzantPolytope,
    r: int,
    f: Callable,
    spec: Optional[QuadratureSpec] = None,
) -> float:
    """∫ over facet r of f against the Leray measure |v_r|^-1 dS."""
    spec = spec or QuadratureSpec.default(polytope.dim)
    chart = facet_chart(polytope, r)
    base = np.stack(chart.pieces)
    result = _run_linear(base, f, spec, f"facet {r} integral")
    return chart.leray_density * result.value


def integrate_boundary_leray(polytope: DelzantPolytope, f: Callable, spec: Optional[QuadratureSpec] = None) -> float:
    """Sum of the Leray facet integrals over every facet."""
    return math.fsum(integrate_facet_leray(polytope, r, f, spec) for r in range(polytope.n_facets))
