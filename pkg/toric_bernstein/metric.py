"""
Toric Kähler metrics in symplectic coordinates.

A metric on a Delzant polytope P is given by its symplectic potential

    u(x) = sum_r l_r(x) log l_r(x) + g(x),

the canonical (Guillemin) potential plus a perturbation g smooth on the
closed polytope. Everything else follows from u: the metric G = Hess u,
its inverse H, the moment-map inverse rho -> x solving grad u(x) = rho,
the Kähler potential (a Legendre transform) and the scalar curvature

    S(x) = -sum_{j,k} d^2 H_jk / dx_j dx_k.

All pointwise quantities are vectorized: pass an (m,) point for a single
value or an (n, m) array for a batch.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import xlogy

from .exceptions import (
    BoundaryPoint,
    ConvergenceFailure,
    DimensionMismatch,
    DomainError,
    InvalidPerturbation,
    NotPositiveDefinite,
    OutsidePolytope,
)
from .expr import Expr, zero
from .polytope import ABS_TOL, DelzantPolytope, grid_points, polytope_to_dict

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 200
FD_STEP_CAP = 1e-4
VALIDATION_GRID = 8


@dataclass(frozen=True, eq=False)
class MomentChart:
    """A point in both coordinate systems: x in P and rho = grad u(x)."""
    x: np.ndarray
    rho: np.ndarray


@dataclass(frozen=True)
class ConvexityReport:
    """Result of scanning the metric Hessian for positive definiteness."""
    passed: bool
    min_eigenvalue: float
    argmin: tuple
    n_points: int

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "min_eigenvalue": self.min_eigenvalue,
            "argmin": list(self.argmin),
            "n_points": self.n_points,
        }


def as_points(x, dim: int):
    """Coerce to an (n, m) array; the flag says whether a single point was given."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise DimensionMismatch(f"expected points with {dim} coordinates, got shape {np.shape(x)}")
    return pts, single


@dataclass(frozen=True, eq=False)
class ToricMetric:
    """
    Symplectic potential u = u_0 + g on a Delzant polytope.

    Attributes:
        polytope: The moment polytope
        perturbation: g, smooth on the closed polytope (zero for the canonical metric)
    """
    polytope: DelzantPolytope
    perturbation: Optional[Expr] = field(default=None)

    def __post_init__(self):
        if self.perturbation is None:
            object.__setattr__(self, "perturbation", zero(self.polytope.dim))
        if self.perturbation.dim != self.polytope.dim:
            raise DimensionMismatch(
                f"perturbation has {self.perturbation.dim} variables, polytope dimension is {self.polytope.dim}"
            )
        if not self.perturbation.is_zero:
            self._validate_perturbation()

    def _validate_perturbation(self) -> None:
        grid = grid_points(self.polytope, VALIDATION_GRID)
        points = np.vstack([self.polytope.vertex_array, grid])
        try:
            for order in (0, 1, 2):
                self.perturbation_derivatives(order, points)
        except DomainError as exc:
            raise InvalidPerturbation(
                f"perturbation {self.perturbation} is not finite on the closed polytope: {exc}"
            ) from exc

    @property
    def dim(self) -> int:
        return self.polytope.dim

    @property
    def is_canonical(self) -> bool:
        return self.perturbation.is_zero

    @property
    def is_fubini_study(self) -> bool:
        """Canonical metric on the standard simplex."""
        return self.is_canonical and self.polytope.is_standard_simplex()

    def to_dict(self) -> dict:
        """Facet data and perturbation text; identifies the metric in cache files."""
        return {
            "polytope": polytope_to_dict(self.polytope),
            "perturbation": "" if self.is_canonical else str(self.perturbation),
        }

    @cached_property
    def _normals(self) -> np.ndarray:
        return self.polytope.normals

    def _slacks(self, points: np.ndarray, strict: bool) -> np.ndarray:
        values = self.polytope.facet_values(points)
        if np.any(values < -ABS_TOL):
            bad = points[np.any(values < -ABS_TOL, axis=1)][0]
            raise OutsidePolytope(f"point {bad.tolist()} is outside the polytope")
        values = np.maximum(values, 0.0)
        if strict and np.any(values <= 0.0):
            bad = points[np.any(values <= 0.0, axis=1)][0]
            raise BoundaryPoint(f"point {bad.tolist()} is on the boundary")
        return values

    def perturbation_derivatives(self, order: int, points: np.ndarray) -> np.ndarray:
        """Symmetric tensor of order-th partials of g, shape (n,) + (m,) * order."""
        n, m = points.shape
        out = np.zeros((n,) + (m,) * order)
        if self.perturbation.is_zero:
            return out
        for indices in itertools.combinations_with_replacement(range(m), order):
            values = self.perturbation.partial(*indices).evaluate(points)
            for perm in set(itertools.permutations(indices)):
                out[(slice(None),) + perm] = values
        return out

    # Potential and derivatives

    def u(self, x):
        """Symplectic potential; finite on the closed polytope (0 log 0 = 0)."""
        pts, single = as_points(x, self.dim)
        slacks = self._slacks(pts, strict=False)
        values = xlogy(slacks, slacks).sum(axis=1) + self.perturbation_derivatives(0, pts)
        return float(values[0]) if single else values

    def grad_u(self, x):
        pts, single = as_points(x, self.dim)
        slacks = self._slacks(pts, strict=True)
        values = (1.0 + np.log(slacks)) @ self._normals + self.perturbation_derivatives(1, pts)
        return values[0] if single else values

    def hessian_u(self, x):
        """The metric G = V^T diag(1/l) V + Hess g, shape (m, m) or (n, m, m)."""
        pts, single = as_points(x, self.dim)
        slacks = self._slacks(pts, strict=True)
        V = self._normals
        values = np.einsum("nr,ri,rj->nij", 1.0 / slacks, V, V) + self.perturbation_derivatives(2, pts)
        return values[0] if single else values

    def inverse_hessian(self, x):
        """
        H = G^{-1}.

        Raises:
            NotPositiveDefinite: G fails a Cholesky factorization at some point
            BoundaryPoint: x is on the boundary, where G blows up
        """
        pts, single = as_points(x, self.dim)
        G = self.hessian_u(pts)
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError as exc:
            smallest = np.linalg.eigvalsh(G)[:, 0]
            worst = int(np.argmin(smallest))
            raise NotPositiveDefinite(
                f"metric is not positive definite at x = {pts[worst].tolist()} "
                f"(smallest eigenvalue {smallest[worst]:.6g})"
            ) from exc
        H = np.linalg.inv(G)
        H = 0.5 * (H + np.swapaxes(H, -1, -2))
        return H[0] if single else H

    def third_derivatives(self, x) -> np.ndarray:
        """d^3 u, shape (n, m, m, m)."""
        pts, _ = as_points(x, self.dim)
        slacks = self._slacks(pts, strict=True)
        V = self._normals
        return (-np.einsum("nr,ra,rb,rc->nabc", slacks ** -2.0, V, V, V)
                + self.perturbation_derivatives(3, pts))

    def fourth_derivatives(self, x) -> np.ndarray:
        """d^4 u, shape (n, m, m, m, m)."""
        pts, _ = as_points(x, self.dim)
        slacks = self._slacks(pts, strict=True)
        V = self._normals
        return (2.0 * np.einsum("nr,ra,rb,rc,rd->nabcd", slacks ** -3.0, V, V, V, V)
                + self.perturbation_derivatives(4, pts))

    # Moment map

    def moment_inverse(self, rho, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> np.ndarray:
        """
        Solve grad u(x) = rho by damped Newton from the centroid.

        Steps are halved until the iterate stays interior and the residual
        norm decreases.

        Raises:
            ConvergenceFailure: max_iter reached or the line search stalled
        """
        target = np.asarray(rho, dtype=float).reshape(-1)
        if target.shape[0] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} coordinates, got {target.shape[0]}")
        if not np.all(np.isfinite(target)):
            raise ConvergenceFailure(f"rho = {target.tolist()} is not finite")

        x = self.polytope.centroid.copy()
        residual = self.grad_u(x) - target
        for iteration in range(max_iter):
            if np.max(np.abs(residual)) <= tol:
                logger.debug("moment_inverse converged in %d iterations", iteration)
                return x
            step = np.linalg.solve(self.hessian_u(x), residual)
            norm = np.linalg.norm(residual)
            t = 1.0
            while True:
                candidate = x - t * step
                if np.all(self.polytope.facet_values(candidate) > 0.0):
                    candidate_residual = self.grad_u(candidate) - target
                    if np.linalg.norm(candidate_residual) < norm:
                        break
                t *= 0.5
                if t < 1e-16:
                    raise ConvergenceFailure(
                        f"line search stalled at x = {x.tolist()} with residual {norm:.3g}"
                    )
            x, residual = candidate, candidate_residual
        raise ConvergenceFailure(
            f"no convergence after {max_iter} Newton steps (residual {np.max(np.abs(residual)):.3g})"
        )

    def kahler_potential(self, rho) -> float:
        """phi(rho) = <x, rho> - u(x) with x = moment_inverse(rho)."""
        target = np.asarray(rho, dtype=float).reshape(-1)
        x = self.moment_inverse(target)
        return float(np.dot(x, target) - self.u(x))

    def chart_at(self, x) -> MomentChart:
        point = np.asarray(x, dtype=float).reshape(-1)
        return MomentChart(x=point, rho=self.grad_u(point))

    def chart_from_rho(self, rho) -> MomentChart:
        target = np.asarray(rho, dtype=float).reshape(-1)
        return MomentChart(x=self.moment_inverse(target), rho=target)

    # Curvature

    def scalar_curvature(self, x, method: str = "fd"):
        """
        S(x) = -sum_{j,k} d_j d_k H_jk.

        Args:
            x: Interior point(s)
            method: "fd" for finite differences of H, "exact" for the
                closed-form third/fourth derivative expression
        """
        pts, single = as_points(x, self.dim)
        if method == "fd":
            values = self._curvature_fd(pts)
        elif method == "exact":
            values = self._curvature_exact(pts)
        else:
            raise ValueError(f"unknown curvature method {method!r}")
        return float(values[0]) if single else values

    def scalar_curvature_exact(self, x):
        return self.scalar_curvature(x, method="exact")

    def _curvature_fd(self, pts: np.ndarray) -> np.ndarray:
        self._slacks(pts, strict=True)
        distance = self.polytope.facet_distance(pts)
        h = np.minimum(FD_STEP_CAP, distance / 10.0)[:, None]
        m = self.dim
        eye = np.eye(m)
        H0 = self.inverse_hessian(pts)
        total = np.zeros(len(pts))
        for j in range(m):
            Hp = self.inverse_hessian(pts + h * eye[j])
            Hm = self.inverse_hessian(pts - h * eye[j])
            total += (Hp[:, j, j] - 2.0 * H0[:, j, j] + Hm[:, j, j]) / h[:, 0] ** 2
            for k in range(j + 1, m):
                diag, anti = eye[j] + eye[k], eye[j] - eye[k]
                Hpp = self.inverse_hessian(pts + h * diag)[:, j, k]
                Hmm = self.inverse_hessian(pts - h * diag)[:, j, k]
                Hpm = self.inverse_hessian(pts + h * anti)[:, j, k]
                Hmp = self.inverse_hessian(pts - h * anti)[:, j, k]
                # off-diagonal pair counted twice
                total += 2.0 * (Hpp - Hpm - Hmp + Hmm) / (4.0 * h[:, 0] ** 2)
        return -total

    def _curvature_exact(self, pts: np.ndarray) -> np.ndarray:
        # d_b d_a H = P_b P_a H + P_a P_b H - H Q_ab H, with P_a = H T_a
        H = self.inverse_hessian(pts)
        T = self.third_derivatives(pts)
        Q = self.fourth_derivatives(pts)
        P = np.einsum("nij,najk->naik", H, T)
        total = np.zeros(len(pts))
        m = self.dim
        for a in range(m):
            for b in range(m):
                second = (P[:, b] @ P[:, a] @ H + P[:, a] @ P[:, b] @ H
                          - H @ Q[:, a, b] @ H)
                total += second[:, a, b]
        return -total

    # Convexity

    def check_convexity(self, grid_resolution: int = 16) -> ConvexityReport:
        """
        Smallest eigenvalue of G over an interior grid plus the centroid.

        Args:
            grid_resolution: Points per axis, at least 4
        """
        if int(grid_resolution) != grid_resolution or grid_resolution < 4:
            raise ValueError(f"grid resolution must be an integer >= 4, got {grid_resolution!r}")
        grid = grid_points(self.polytope, int(grid_resolution), include_ends=False)
        points = np.vstack([self.polytope.centroid[None, :], grid])
        eigenvalues = np.linalg.eigvalsh(self.hessian_u(points))[:, 0]
        worst = int(np.argmin(eigenvalues))
        report = ConvexityReport(
            passed=bool(eigenvalues[worst] > 0.0),
            min_eigenvalue=float(eigenvalues[worst]),
            argmin=tuple(float(c) for c in points[worst]),
            n_points=len(points),
        )
        if not report.passed:
            logger.warning("metric fails convexity at %s (eigenvalue %.6g)",
                           report.argmin, report.min_eigenvalue)
        return report
