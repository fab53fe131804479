"""
Asymptotic checks for Bernstein operators and lattice sums.

Correction operators L1, L2 of the 1/N expansion, Bergman coefficient
a1 = S/2, Dedekind-Riemann sums against their two-term Euler-Maclaurin
approximation, the integration-by-parts residual tying H, S and the
Leray boundary measure together, moments of the empirical measure, and
log-log order fits over a sweep of N.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from .bernstein import BernsteinEvaluator
from .exceptions import NonPositiveResidual, UnsupportedMetric
from .expr import Expr
from .metric import ToricMetric, as_points
from .polytope import DelzantPolytope, lattice_points
from .quad import QuadratureSpec, integrate_boundary_leray, integrate_polytope

logger = logging.getLogger(__name__)

EXACT_RESIDUAL = 1e-13
ORDER_SLACK = 0.3
FIT_POINTS = 3
MAX_MOMENT_ORDER = 4


def estimate_order(samples: Sequence) -> float:
    """
    Least-squares slope of log residual against log N.

    Args:
        samples: At least three (N, residual) pairs

    Raises:
        NonPositiveResidual: some residual is zero, negative or not finite
    """
    samples = list(samples)
    if len(samples) < 3:
        raise ValueError(f"need at least 3 samples to fit an order, got {len(samples)}")
    Ns = np.array([s[0] for s in samples], dtype=float)
    residuals = np.array([s[1] for s in samples], dtype=float)
    if not np.all(np.isfinite(residuals)) or np.any(residuals <= 0):
        raise NonPositiveResidual(f"residuals must be positive and finite, got {residuals.tolist()}")
    slope, _ = np.polyfit(np.log(Ns), np.log(residuals), 1)
    return float(slope)


@dataclass
class ExpansionReport:
    """
    Residuals over a sweep of N with a fitted convergence order.

    The order is fitted on the largest three N only. A sweep whose
    residuals are all at rounding level is flagged exact and passes.
    """
    name: str
    Ns: list
    values: list
    references: list
    residuals: list
    expected_order: float
    slack: float = ORDER_SLACK
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.Ns) == 0:
            raise ValueError("an expansion report needs at least one N")
        if any(b <= a for a, b in zip(self.Ns, self.Ns[1:])):
            raise ValueError(f"Ns must be strictly increasing, got {self.Ns}")
        if not np.all(np.isfinite(self.residuals)):
            raise ValueError(f"{self.name}: residuals must be finite")

    @property
    def is_exact(self) -> bool:
        return max(self.residuals) <= EXACT_RESIDUAL

    @property
    def fitted_order(self) -> Optional[float]:
        if self.is_exact or len(self.Ns) < FIT_POINTS:
            return None
        tail = list(zip(self.Ns, self.residuals))[-FIT_POINTS:]
        try:
            return estimate_order(tail)
        except NonPositiveResidual:
            return None

    @property
    def passed(self) -> bool:
        if self.is_exact:
            return True
        fitted = self.fitted_order
        return fitted is not None and fitted <= self.expected_order + self.slack

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "N": self.Ns,
            "value": self.values,
            "reference": self.references,
            "residual": self.residuals,
        })
        for position, (key, value) in enumerate(self.meta.items()):
            frame.insert(position, key, value)
        return frame

    def summary(self) -> dict:
        return {
            "name": self.name,
            "fitted": self.fitted_order,
            "expected": self.expected_order,
            "pass": self.passed,
            "exact": self.is_exact,
        }


# Correction operators

def L1_apply(metric: ToricMetric, f: Expr, x):
    """(1/2) sum_{j,k} H_jk(x) d_j d_k f(x)."""
    pts, single = as_points(x, metric.dim)
    H = metric.inverse_hessian(pts)
    m = metric.dim
    hess_f = np.stack(
        [np.stack([f.partial(j, k).evaluate(pts) for k in range(m)], axis=-1) for j in range(m)],
        axis=-2,
    )
    values = 0.5 * np.einsum("nij,nij->n", H, hess_f)
    return float(values[0]) if single else values


def _require_classical_interval(metric: ToricMetric) -> None:
    if not (metric.polytope.is_interval() and metric.is_canonical):
        raise UnsupportedMetric("the second-order operator is only available for the canonical interval")


def L2_classical_apply(metric: ToricMetric, f: Expr, x):
    """(1/6) q (1 - 2x) f''' + (1/8) q^2 f'''' with q = x - x^2, on the canonical interval."""
    _require_classical_interval(metric)
    pts, single = as_points(x, 1)
    t = pts[:, 0]
    q = t - t * t
    values = (q * (1.0 - 2.0 * t) * f.partial(0, 0, 0).evaluate(pts) / 6.0
              + q * q * f.partial(0, 0, 0, 0).evaluate(pts) / 8.0)
    return float(values[0]) if single else values


def bergman_a1(metric: ToricMetric, x, method: str = "fd"):
    """a1 = S/2."""
    curvature = metric.scalar_curvature(x, method=method)
    return 0.5 * curvature


def numerator_first_order(metric: ToricMetric, f: Expr, x, method: str = "exact"):
    """First-order coefficient of the unnormalized sum: L1 f + a1 f."""
    pts, single = as_points(x, metric.dim)
    values = L1_apply(metric, f, pts) + bergman_a1(metric, pts, method=method) * f.evaluate(pts)
    return float(values[0]) if single else values


# Lattice sums

def riemann_sum(polytope: DelzantPolytope, f: Expr, N: int) -> float:
    """sum over NP cap Z^m of f(alpha/N)."""
    return math.fsum(f.evaluate(lattice_points(polytope, N).scaled()))


def em_two_term(polytope: DelzantPolytope, f: Expr, spec: Optional[QuadratureSpec], N: int) -> float:
    """N^m ∫_P f dx + (N^(m-1) / 2) ∫_{∂P} f dsigma."""
    m = polytope.dim
    volume_term = integrate_polytope(polytope, f.evaluate, spec)
    boundary_term = integrate_boundary_leray(polytope, f.evaluate, spec)
    return N ** m * volume_term + 0.5 * N ** (m - 1) * boundary_term


def donaldson_terms(metric: ToricMetric, f: Expr, spec: Optional[QuadratureSpec] = None,
                    curvature: str = "exact") -> dict:
    """
    The three integrals of the integration-by-parts identity
    ∫ H : Hess f = -∫ S f + ∫_{∂P} f dsigma, with S written as -(H_jk),jk.
    """
    polytope = metric.polytope
    m = metric.dim

    def hessian_pairing(pts):
        H = metric.inverse_hessian(pts)
        total = np.zeros(len(pts))
        for j in range(m):
            for k in range(m):
                total += H[:, j, k] * f.partial(j, k).evaluate(pts)
        return total

    def curvature_term(pts):
        return metric.scalar_curvature(pts, method=curvature) * f.evaluate(pts)

    return {
        "hessian": integrate_polytope(polytope, hessian_pairing, spec),
        "curvature": integrate_polytope(polytope, curvature_term, spec),
        "boundary": integrate_boundary_leray(polytope, f.evaluate, spec),
    }


def donaldson_residual(metric: ToricMetric, f: Expr, spec: Optional[QuadratureSpec] = None,
                       curvature: str = "exact") -> float:
    """|∫ H : Hess f - ∫ (H_jk),jk f - ∫_{∂P} f dsigma|, which vanishes for every metric."""
    terms = donaldson_terms(metric, f, spec, curvature)
    # (H_jk),jk = -S
    return abs(terms["hessian"] + terms["curvature"] - terms["boundary"])


# Measures

def measure_moments(evaluator: BernsteinEvaluator, x, beta) -> float:
    """Normalized moment sum_alpha (alpha/N - x)^beta p_alpha."""
    beta = np.asarray(beta, dtype=int).reshape(-1)
    if np.any(beta < 0) or beta.sum() > MAX_MOMENT_ORDER:
        raise ValueError(f"moment multi-index {beta.tolist()} must be nonnegative with order <= {MAX_MOMENT_ORDER}")
    return evaluator.measure(x).moment(beta)


def integrated_denominator(evaluator: BernsteinEvaluator, spec: Optional[QuadratureSpec] = None) -> float:
    """∫_P D dx, which equals the lattice count |NP cap Z^m|."""
    return integrate_polytope(evaluator.metric.polytope, evaluator.denominator, spec)


def integrated_numerator(evaluator: BernsteinEvaluator, f: Expr, spec: Optional[QuadratureSpec] = None) -> float:
    """∫_P N_{h^N} f dx, which equals the Riemann sum of f over NP."""
    return integrate_polytope(evaluator.metric.polytope, lambda pts: evaluator.numerator(f, pts), spec)


# Sweeps

EvaluatorFactory = Callable[[int], BernsteinEvaluator]


def _default_factory(metric: ToricMetric, spec: Optional[QuadratureSpec]) -> EvaluatorFactory:
    return lambda N: BernsteinEvaluator.build(metric, N, spec)


def bernstein_convergence(
    metric: ToricMetric,
    f: Expr,
    x,
    Ns: Sequence[int],
    corrections: int = 1,
    spec: Optional[QuadratureSpec] = None,
    factory: Optional[EvaluatorFactory] = None,
) -> ExpansionReport:
    """
    |B_N f - f - L1 f / N - L2 f / N^2| at x, keeping the requested number of corrections.

    Two corrections need the canonical interval.
    """
    if corrections not in (0, 1, 2):
        raise ValueError(f"corrections must be 0, 1 or 2, got {corrections!r}")
    if corrections == 2:
        _require_classical_interval(metric)
    point = np.asarray(x, dtype=float).reshape(-1)
    factory = factory or _default_factory(metric, spec)
    base = f(point)
    first = L1_apply(metric, f, point) if corrections >= 1 else 0.0
    second = L2_classical_apply(metric, f, point) if corrections >= 2 else 0.0
    values, references = [], []
    for N in Ns:
        values.append(factory(N).evaluate(f, point))
        references.append(base + first / N + second / N ** 2)
    residuals = [abs(v - r) for v, r in zip(values, references)]
    return ExpansionReport(
        name=f"bernstein[{corrections}]",
        Ns=list(Ns), values=values, references=references, residuals=residuals,
        expected_order=-(corrections + 1.0),
    )


def first_order_recovery(
    metric: ToricMetric,
    f: Expr,
    x,
    Ns: Sequence[int],
    spec: Optional[QuadratureSpec] = None,
    factory: Optional[EvaluatorFactory] = None,
) -> ExpansionReport:
    """N (B_N f - f)(x) against L1 f(x); the gap closes like 1/N."""
    point = np.asarray(x, dtype=float).reshape(-1)
    factory = factory or _default_factory(metric, spec)
    target = L1_apply(metric, f, point)
    base = f(point)
    values = [N * (factory(N).evaluate(f, point) - base) for N in Ns]
    return ExpansionReport(
        name="first_order",
        Ns=list(Ns), values=values, references=[target] * len(values),
        residuals=[abs(v - target) for v in values],
        expected_order=-1.0,
    )


def riemann_convergence(
    polytope: DelzantPolytope,
    f: Expr,
    Ns: Sequence[int],
    spec: Optional[QuadratureSpec] = None,
) -> ExpansionReport:
    """Riemann sums against the two-term Euler-Maclaurin formula; remainder O(N^(m-2))."""
    values = [riemann_sum(polytope, f, N) for N in Ns]
    references = [em_two_term(polytope, f, spec, N) for N in Ns]
    return ExpansionReport(
        name="riemann",
        Ns=list(Ns), values=values, references=references,
        residuals=[abs(v - r) for v, r in zip(values, references)],
        expected_order=float(polytope.dim - 2),
    )


def moment_decay(
    metric: ToricMetric,
    x,
    beta,
    Ns: Sequence[int],
    spec: Optional[QuadratureSpec] = None,
    factory: Optional[EvaluatorFactory] = None,
) -> ExpansionReport:
    """|normalized I^beta| over N; decays at least like N^(-|beta|/2)."""
    factory = factory or _default_factory(metric, spec)
    beta = np.asarray(beta, dtype=int).reshape(-1)
    values = [measure_moments(factory(N), x, beta) for N in Ns]
    return ExpansionReport(
        name=f"moment{tuple(beta.tolist())}",
        Ns=list(Ns), values=values, references=[0.0] * len(values),
        residuals=[abs(v) for v in values],
        expected_order=-0.5 * float(beta.sum()),
    )
