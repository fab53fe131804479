"""
Bergman-Bernstein approximation on a toric metric.

For a lattice point alpha of NP and x in the closed polytope the weight
exponent is

    E(alpha, x) = sum_r N l_r(alpha/N) log l_r(x) + <alpha - N x, v-bar>
                  + N (g(x) + <alpha/N - x, grad g(x)>),

which equals N (u(x) + <alpha/N - x, grad u(x)>) in the interior and stays
continuous up to the boundary (0 log 0 = 0). The norming constants are
Q(alpha) = ∫_P exp(E(alpha, x)) dx and the Bernstein operator is the
expectation of f(alpha/N) under p_alpha ∝ exp(E - log Q).

Everything is combined in log space with logsumexp.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp, xlogy

from .exceptions import (
    ConfigError,
    CrossCheckFailure,
    DimensionMismatch,
    NotSimplex,
    OutsidePolytope,
    PolytopeError,
)
from .expr import Expr
from .metric import ToricMetric, as_points
from .polytope import ABS_TOL, LatticeSet, lattice_points, standard_simplex
from .quad import QuadratureSpec, integrate_log_batch

logger = logging.getLogger(__name__)

DEFAULT_TRUNCATION = 10.0
CROSS_CHECK_ENTRIES = 5
CROSS_CHECK_TOL = 1e-7
NORMING_CHUNK = 64

METHOD_CLOSED_FORM = "cf"
METHOD_QUADRATURE = "quad"


# Weights

def _exponent_coefficients(metric: ToricMetric, N: int, alphas: np.ndarray) -> np.ndarray:
    """N l_r(alpha/N) = <alpha, v_r> - N lambda_r, computed exactly before the float division."""
    facets = metric.polytope.facets
    normals = np.array([f.normal for f in facets], dtype=np.int64)
    numer = np.array([f.offset.numerator for f in facets], dtype=np.int64)
    denom = np.array([f.offset.denominator for f in facets], dtype=np.int64)
    scaled = (alphas @ normals.T) * denom - N * numer
    return scaled / denom


def weight_exponents(metric: ToricMetric, N: int, alphas, points) -> np.ndarray:
    """
    E(alpha, x) for every pair.

    Args:
        metric: Toric metric
        N: Dilation
        alphas: (k, m) integer lattice points of NP
        points: (n, m) points of the closed polytope

    Returns:
        (k, n) array; -inf where some l_r(x) = 0 while l_r(alpha/N) > 0
    """
    alphas = np.asarray(alphas, dtype=np.int64).reshape(-1, metric.dim)
    pts, _ = as_points(points, metric.dim)
    slacks = metric.polytope.facet_values(pts)
    if np.any(slacks < -ABS_TOL):
        bad = pts[np.any(slacks < -ABS_TOL, axis=1)][0]
        raise OutsidePolytope(f"point {bad.tolist()} is outside the polytope")
    at_facet = slacks <= 0.0

    coeff = _exponent_coefficients(metric, N, alphas)
    log_slacks = np.log(np.where(at_facet, 1.0, slacks))
    E = coeff @ log_slacks.T
    if np.any(at_facet):
        vanishing = (coeff > 0).astype(float) @ at_facet.T.astype(float) > 0
        E[vanishing] = -np.inf

    vbar = metric.polytope.normal_sum
    E += (alphas @ vbar)[:, None] - N * (pts @ vbar)[None, :]
    if not metric.is_canonical:
        g = metric.perturbation_derivatives(0, pts)
        grad_g = metric.perturbation_derivatives(1, pts)
        E += alphas @ grad_g.T + N * (g - np.sum(pts * grad_g, axis=1))[None, :]
    return E


def weight_exponent(metric: ToricMetric, N: int, alpha, x) -> float:
    """E(alpha, x) for a single lattice point and point."""
    alpha = np.asarray(alpha, dtype=np.int64).reshape(1, -1)
    if alpha.shape[1] != metric.dim:
        raise DimensionMismatch(f"alpha has {alpha.shape[1]} entries, polytope dimension is {metric.dim}")
    point = np.asarray(x, dtype=float).reshape(1, -1)
    return float(weight_exponents(metric, N, alpha, point)[0, 0])


# Norming constants

def norming_closed_form_batch(N: int, alphas, m: int) -> np.ndarray:
    """log((N - |alpha|)! alpha_1! ... alpha_m! / (N + m)!) for each row."""
    alphas = np.asarray(alphas, dtype=np.int64).reshape(-1, m)
    total = alphas.sum(axis=1)
    if np.any(alphas < 0) or np.any(total > N):
        raise PolytopeError(f"lattice points must lie in {N} times the standard simplex")
    return gammaln(N - total + 1.0) + gammaln(alphas + 1.0).sum(axis=1) - gammaln(N + m + 1.0)


def norming_closed_form_simplex(N: int, alpha, m: int, polytope=None) -> float:
    """
    Closed-form log Q(alpha) for the canonical metric on the standard simplex.

    Raises:
        NotSimplex: polytope was given and is not the standard simplex
    """
    if polytope is not None and not polytope.is_standard_simplex():
        raise NotSimplex("closed-form norming constants need the standard simplex")
    alpha = np.asarray(alpha, dtype=np.int64).reshape(-1)
    if alpha.shape[0] != m:
        raise DimensionMismatch(f"alpha has {alpha.shape[0]} entries, expected {m}")
    return float(norming_closed_form_batch(N, alpha[None, :], m)[0])


def norming_constants(
    metric: ToricMetric,
    N: int,
    alphas,
    spec: Optional[QuadratureSpec] = None,
) -> np.ndarray:
    """Quadrature log Q for a batch of lattice points, in chunks sharing nodes."""
    alphas = np.asarray(alphas, dtype=np.int64).reshape(-1, metric.dim)
    spec = spec or QuadratureSpec.default(metric.dim)
    out = np.empty(len(alphas))
    for start in range(0, len(alphas), NORMING_CHUNK):
        chunk = alphas[start:start + NORMING_CHUNK]
        out[start:start + len(chunk)] = integrate_log_batch(
            metric.polytope, lambda pts, chunk=chunk: weight_exponents(metric, N, chunk, pts), spec
        )
    return out


def norming_constant(metric: ToricMetric, N: int, alpha, spec: Optional[QuadratureSpec] = None) -> float:
    """log Q(alpha) = log ∫_P exp(E(alpha, x)) dx."""
    return float(norming_constants(metric, N, [alpha], spec)[0])


@dataclass(frozen=True, eq=False)
class NormingTable:
    """
    log Q(alpha) for every lattice point of NP.

    Attributes:
        N: Dilation
        lattice: The lattice points, in the order of log_q
        log_q: (k,) array of log norming constants
        methods: Per-entry method tag, "cf" or "quad"
        metric: ToricMetric.to_dict() of the metric the table was built for
    """
    N: int
    lattice: LatticeSet
    log_q: np.ndarray
    methods: tuple
    metric: Optional[dict] = None

    def __post_init__(self):
        if len(self.log_q) != len(self.lattice) or len(self.methods) != len(self.lattice):
            raise ValueError("norming table entries do not match the lattice")
        if not np.all(np.isfinite(self.log_q)):
            raise ValueError("norming table contains non-finite entries")

    def __len__(self) -> int:
        return len(self.lattice)

    @cached_property
    def _index(self) -> dict:
        return {alpha: i for i, alpha in enumerate(self.lattice)}

    def entry(self, alpha) -> float:
        key = tuple(int(a) for a in np.asarray(alpha).reshape(-1))
        try:
            return float(self.log_q[self._index[key]])
        except KeyError:
            raise PolytopeError(f"{key} is not a lattice point of {self.N}P") from None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.lattice.points, columns=[f"alpha{j + 1}" for j in range(self.lattice.dim)])
        frame["logQ"] = self.log_q
        frame["method"] = list(self.methods)
        return frame

    def to_json(self, path: Union[str, Path]) -> None:
        payload = {
            "N": self.N,
            "entries": [
                {"alpha": list(alpha), "logQ": float(value), "method": method}
                for alpha, value, method in zip(self.lattice, self.log_q, self.methods)
            ],
        }
        if self.metric is not None:
            payload["metric"] = self.metric
        Path(path).write_text(json.dumps(payload, indent=1) + "\n")
        logger.info("wrote norming table N=%d (%d entries) to %s", self.N, len(self), path)

    @classmethod
    def from_json(cls, path: Union[str, Path], metric: ToricMetric, N: Optional[int] = None) -> "NormingTable":
        """
        Load a cached table; every lattice point of NP must appear exactly once.

        Raises:
            ConfigError: The cache was built for another dilation or metric
        """
        payload = json.loads(Path(path).read_text())
        stored_N = int(payload["N"])
        if N is not None and stored_N != N:
            raise ConfigError(f"norming cache {path} holds N={stored_N}, this run needs N={N}")
        expected = metric.to_dict()
        stored = payload.get("metric")
        if stored is None:
            raise ConfigError(f"norming cache {path} does not record the metric it was built for")
        if stored.get("polytope") != expected["polytope"]:
            raise ConfigError(f"norming cache {path} was built for another polytope")
        if stored.get("perturbation") != expected["perturbation"]:
            raise ConfigError(
                f"norming cache {path} was built for perturbation {stored.get('perturbation') or '0'!r}, "
                f"this run uses {expected['perturbation'] or '0'!r}"
            )

        lattice = lattice_points(metric.polytope, stored_N)
        index = {alpha: i for i, alpha in enumerate(lattice)}
        log_q = np.full(len(lattice), np.nan)
        methods = [None] * len(lattice)
        for entry in payload["entries"]:
            key = tuple(int(a) for a in entry["alpha"])
            if key not in index:
                raise PolytopeError(f"cached entry {key} is not a lattice point of {stored_N}P")
            i = index[key]
            if methods[i] is not None:
                raise ValueError(f"cached table lists {key} twice")
            log_q[i] = float(entry["logQ"])
            methods[i] = entry["method"]
        if any(m is None for m in methods):
            raise ValueError(f"cached table at {path} is missing lattice points")
        return cls(N=stored_N, lattice=lattice, log_q=log_q, methods=tuple(methods), metric=expected)


def build_norming_table(
    metric: ToricMetric,
    N: int,
    spec: Optional[QuadratureSpec] = None,
    method: str = "auto",
    cross_check: int = CROSS_CHECK_ENTRIES,
    seed: int = 0,
) -> NormingTable:
    """
    Norming constants for every lattice point of NP.

    Args:
        metric: Toric metric
        N: Dilation
        spec: Quadrature settings
        method: "auto" (closed form when available), "closed_form" or "quadrature"
        cross_check: Closed-form entries re-derived by quadrature
        seed: Seed choosing the cross-checked entries

    Raises:
        NotSimplex: closed_form requested off the canonical simplex
        CrossCheckFailure: closed form and quadrature disagree beyond 1e-7
    """
    lattice = lattice_points(metric.polytope, N)
    use_closed_form = {
        "auto": metric.is_fubini_study,
        "closed_form": True,
        "quadrature": False,
    }.get(method)
    if use_closed_form is None:
        raise ValueError(f"unknown norming method {method!r}")
    if use_closed_form and not metric.is_fubini_study:
        raise NotSimplex("closed-form norming constants need the canonical metric on the standard simplex")

    if not use_closed_form:
        log_q = norming_constants(metric, N, lattice.points, spec)
        logger.info("norming table N=%d: %d entries by quadrature", N, len(lattice))
        return NormingTable(N=N, lattice=lattice, log_q=log_q, methods=(METHOD_QUADRATURE,) * len(lattice),
                            metric=metric.to_dict())

    log_q = norming_closed_form_batch(N, lattice.points, metric.dim)
    if cross_check > 0:
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(len(lattice), size=min(cross_check, len(lattice)), replace=False))
        by_quadrature = norming_constants(metric, N, lattice.points[picks], spec)
        for i, value in zip(picks, by_quadrature):
            gap = abs(value - log_q[i])
            if gap > CROSS_CHECK_TOL * max(1.0, abs(log_q[i])):
                raise CrossCheckFailure(
                    f"log Q{tuple(lattice.points[i])}: closed form {log_q[i]:.12g}, quadrature {value:.12g}"
                )
        logger.debug("cross-checked %d closed-form entries at N=%d", len(picks), N)
    return NormingTable(N=N, lattice=lattice, log_q=log_q, methods=(METHOD_CLOSED_FORM,) * len(lattice),
                        metric=metric.to_dict())


# Evaluation

@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """
    The probability measure mu_N^x on lattice points.

    Attributes:
        x: The point
        N: Dilation
        support: (k, m) lattice points
        probabilities: (k,) weights p_alpha
    """
    x: np.ndarray
    N: int
    support: np.ndarray
    probabilities: np.ndarray

    def expectation(self, values) -> float:
        return math.fsum(np.asarray(values, dtype=float) * self.probabilities)

    def moment(self, beta) -> float:
        """sum_alpha (alpha/N - x)^beta p_alpha for a multi-index beta."""
        beta = np.asarray(beta, dtype=int).reshape(-1)
        if beta.shape[0] != len(self.x):
            raise DimensionMismatch(f"multi-index {beta.tolist()} does not have {len(self.x)} entries")
        offsets = self.support / self.N - self.x
        return self.expectation(np.prod(offsets ** beta, axis=1))

    def mean(self) -> np.ndarray:
        return np.array([self.expectation(col) for col in (self.support / self.N).T])


@dataclass(frozen=True, eq=False)
class BernsteinEvaluator:
    """
    Bernstein operator B_{h^N} for one metric and dilation.

    Attributes:
        metric: Toric metric
        table: Norming constants for NP
        truncation: Default window multiplier for evaluate_truncated
    """
    metric: ToricMetric
    table: NormingTable
    truncation: float = DEFAULT_TRUNCATION

    @classmethod
    def build(cls, metric: ToricMetric, N: int, spec: Optional[QuadratureSpec] = None,
              truncation: float = DEFAULT_TRUNCATION, **table_options) -> "BernsteinEvaluator":
        table = build_norming_table(metric, N, spec, **table_options)
        return cls(metric=metric, table=table, truncation=truncation)

    @property
    def N(self) -> int:
        return self.table.N

    @property
    def lattice(self) -> LatticeSet:
        return self.table.lattice

    @cached_property
    def nodes(self) -> np.ndarray:
        """alpha / N for every lattice point."""
        return self.lattice.scaled()

    def log_terms(self, x) -> np.ndarray:
        """E(alpha, x) - log Q(alpha), shape (k, n)."""
        pts, _ = as_points(x, self.metric.dim)
        return weight_exponents(self.metric, self.N, self.lattice.points, pts) - self.table.log_q[:, None]

    def _weights(self, pts: np.ndarray):
        log_terms = self.log_terms(pts)
        log_d = logsumexp(log_terms, axis=0)
        return np.exp(log_terms - log_d[None, :]), log_d

    def log_denominator(self, x):
        """log D(x), the log of the Bergman diagonal in action coordinates."""
        pts, single = as_points(x, self.metric.dim)
        values = logsumexp(self.log_terms(pts), axis=0)
        return float(values[0]) if single else values

    def denominator(self, x):
        return np.exp(self.log_denominator(x))

    def _f_values(self, f: Expr) -> np.ndarray:
        if f.dim != self.metric.dim:
            raise DimensionMismatch(f"{f} has {f.dim} variables, polytope dimension is {self.metric.dim}")
        return f.evaluate(self.nodes)

    def evaluate(self, f: Expr, x):
        """B_{h^N} f(x) = sum_alpha f(alpha/N) p_alpha."""
        pts, single = as_points(x, self.metric.dim)
        values = self._f_values(f)
        weights, _ = self._weights(pts)
        out = np.array([math.fsum(values * weights[:, i]) for i in range(len(pts))])
        return float(out[0]) if single else out

    def numerator(self, f: Expr, x):
        """The unnormalized sum N_{h^N} f(x) = D(x) B_{h^N} f(x)."""
        pts, single = as_points(x, self.metric.dim)
        out = np.exp(self.log_denominator(pts)) * self.evaluate(f, pts)
        return float(out[0]) if single else out

    def log_numerator(self, f: Expr, x):
        """(log |N f(x)|, sign) computed without leaving log space."""
        pts, single = as_points(x, self.metric.dim)
        values = self._f_values(f)
        log_abs, sign = logsumexp(self.log_terms(pts), axis=0, b=values[:, None], return_sign=True)
        if single:
            return float(log_abs[0]), float(sign[0])
        return log_abs, sign

    def evaluate_dimension_normalized(self, f: Expr, x):
        """N_{h^N} f(x) divided by the lattice count |NP cap Z^m|."""
        return self.numerator(f, x) / len(self.lattice)

    def measure(self, x) -> EmpiricalMeasure:
        point = np.asarray(x, dtype=float).reshape(-1)
        weights, _ = self._weights(point[None, :])
        return EmpiricalMeasure(x=point, N=self.N, support=self.lattice.points, probabilities=weights[:, 0])

    def _axis_variance(self, point: np.ndarray) -> np.ndarray:
        """Per-axis variance of mu_N^x, H_jj(x)/N to leading order."""
        if self.metric.polytope.facet_distance(point) > 0:
            return np.maximum(np.diag(self.metric.inverse_hessian(point)), 0.0) / self.N
        # H degenerates on the boundary; read the spread off the measure itself
        weights, _ = self._weights(point[None, :])
        return weights[:, 0] @ (self.nodes - point) ** 2

    def truncation_mask(self, x, c: Optional[float] = None, mode: str = "variance") -> np.ndarray:
        """
        Lattice points kept by the localized sum at x.

        The "variance" window has per-axis radius c sqrt(H_jj(x) / (2N)),
        scaled to the local spread of the measure, and also covers points on
        the boundary of P. "uniform" is the plain c sqrt(log N / N) window,
        which covers all of P unless N is very large. Points within 2/N of x
        are always kept.
        """
        c = self.truncation if c is None else c
        if not c > 0:
            raise ValueError(f"truncation multiplier must be positive, got {c!r}")
        point = np.asarray(x, dtype=float).reshape(-1)
        if mode == "variance":
            radius = c * np.sqrt(self._axis_variance(point) / 2.0)
        elif mode == "uniform":
            radius = np.full(self.metric.dim, c * math.sqrt(math.log(self.N) / self.N) if self.N > 1 else math.inf)
        else:
            raise ValueError(f"unknown truncation mode {mode!r}")
        offsets = np.abs(self.nodes - point)
        inside = np.all(offsets <= radius + ABS_TOL, axis=1)
        near = np.all(offsets <= 2.0 / self.N + ABS_TOL, axis=1)
        return inside | near

    def evaluate_truncated(self, f: Expr, x, c: Optional[float] = None, mode: str = "variance") -> float:
        """
        B_{h^N} f(x) summed over the localization window only.

        mode="variance" (default) sizes the window from the local spread of
        the measure; mode="uniform" uses the c sqrt(log N / N) radius. See
        truncation_mask.
        """
        point = np.asarray(x, dtype=float).reshape(-1)
        mask = self.truncation_mask(point, c, mode)
        if mask.all():
            return self.evaluate(f, point)
        alphas = self.lattice.points[mask]
        values = f.evaluate(self.nodes[mask])
        log_terms = (weight_exponents(self.metric, self.N, alphas, point[None, :])[:, 0]
                     - self.table.log_q[mask])
        weights = np.exp(log_terms - logsumexp(log_terms))
        logger.debug("truncated sum at %s keeps %d of %d lattice points",
                     point.tolist(), int(mask.sum()), len(mask))
        return math.fsum(values * weights)


def classical_bernstein(f: Expr, x, N: int) -> float:
    """
    The multinomial Bernstein polynomial on the standard simplex,
    sum_alpha f(alpha/N) N!/(alpha! (N-|alpha|)!) x^alpha (1-|x|)^(N-|alpha|).
    """
    point = np.asarray(x, dtype=float).reshape(-1)
    m = point.shape[0]
    lattice = lattice_points(standard_simplex(m), N)
    alphas = lattice.points
    rest = N - alphas.sum(axis=1)
    log_binom = gammaln(N + 1.0) - gammaln(alphas + 1.0).sum(axis=1) - gammaln(rest + 1.0)
    log_power = xlogy(alphas, point).sum(axis=1) + xlogy(rest, max(1.0 - point.sum(), 0.0))
    weights = np.exp(log_binom + log_power)
    return math.fsum(f.evaluate(lattice.scaled()) * weights)
