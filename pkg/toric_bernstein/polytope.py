"""
Delzant polytopes given by facet inequalities.

A polytope is P = {x : <x, v_r> >= lambda_r for all r} with primitive
integer inward normals v_r and rational offsets lambda_r. This module
validates the Delzant condition, enumerates lattice points of dilates
NP and exposes facet charts carrying the Leray measure.

Offsets are kept as exact Fractions and every lattice-membership test
is done in integer arithmetic. Vertices are found by solving every
m-subset of facet equalities exactly, which costs C(d, m) small solves
and is fine for m <= 3 and a dozen facets.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import sympy
import yaml
from scipy.optimize import linprog

from .exceptions import (
    ConfigError,
    DegenerateFacet,
    DimensionMismatch,
    EmptyInterior,
    NonPrimitiveNormal,
    NotDelzant,
    PolytopeError,
    UnboundedPolytope,
)

logger = logging.getLogger(__name__)

MAX_DIM = 3
ABS_TOL = 1e-12

Rational = Union[int, float, str, Fraction]


def parse_rational(value: Rational) -> Fraction:
    """
    Parse an offset exactly.

    Integers and Fractions pass through, decimals are read from their
    shortest repr ("0.1" is 1/10, not the binary double) and strings may
    be "p/q" or decimal text.
    """
    if isinstance(value, bool):
        raise PolytopeError(f"not a rational number: {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise PolytopeError(f"offset must be finite, got {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise PolytopeError(f"cannot parse rational {value!r}") from exc
    raise PolytopeError(f"not a rational number: {value!r}")


@dataclass(frozen=True)
class Facet:
    """
    One facet inequality <x, normal> >= offset.

    Attributes:
        normal: Primitive inward normal v_r (integers)
        offset: lambda_r as an exact Fraction
    """
    normal: tuple
    offset: Fraction

    def __post_init__(self):
        normal = []
        for entry in self.normal:
            if isinstance(entry, bool) or int(entry) != entry:
                raise NonPrimitiveNormal(f"normal {tuple(self.normal)} has non-integer entries")
            normal.append(int(entry))
        normal = tuple(normal)
        if not normal or not any(normal):
            raise NonPrimitiveNormal("facet normal is zero")
        if math.gcd(*normal) != 1:
            raise NonPrimitiveNormal(f"facet normal {normal} is not primitive")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", parse_rational(self.offset))

    def pairing(self, point: Sequence[Fraction]) -> Fraction:
        """Exact <point, v_r>."""
        return sum((Fraction(c) * v for c, v in zip(point, self.normal)), Fraction(0))


@dataclass(frozen=True)
class DelzantPolytope:
    """
    A validated Delzant polytope. Build instances with validate_delzant().

    Attributes:
        dim: Ambient dimension m
        facets: Ordered facets (d of them)
        vertices: Vertices as tuples of Fractions, sorted lexicographically
    """
    dim: int
    facets: tuple
    vertices: tuple

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @cached_property
    def normals(self) -> np.ndarray:
        """(d, m) float array of normals."""
        return np.array([f.normal for f in self.facets], dtype=float)

    @cached_property
    def offsets(self) -> np.ndarray:
        """(d,) float array of offsets."""
        return np.array([float(f.offset) for f in self.facets])

    @cached_property
    def normal_sum(self) -> np.ndarray:
        """v-bar, the sum of all facet normals."""
        return self.normals.sum(axis=0)

    @cached_property
    def vertex_array(self) -> np.ndarray:
        return np.array([[float(c) for c in v] for v in self.vertices])

    @cached_property
    def centroid(self) -> np.ndarray:
        """Vertex average; always interior."""
        return self.vertex_array.mean(axis=0)

    @cached_property
    def diameter(self) -> float:
        diffs = self.vertex_array[:, None, :] - self.vertex_array[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(axis=-1)).max())

    @cached_property
    def volume(self) -> float:
        return float(sum(simplex_volume(s) for s in triangulate(self)))

    def facet_values(self, points) -> np.ndarray:
        """
        All facet functions at once.

        Args:
            points: (m,) point or (n, m) array

        Returns:
            (d,) or (n, d) array of l_r(x) = <x, v_r> - lambda_r
        """
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} coordinates, got shape {pts.shape}")
        return pts @ self.normals.T - self.offsets

    def facet_distance(self, points) -> np.ndarray:
        """Euclidean distance to the boundary (negative outside)."""
        norms = np.linalg.norm(self.normals, axis=1)
        return (self.facet_values(points) / norms).min(axis=-1)

    def contains(self, points, tol: float = ABS_TOL) -> np.ndarray:
        return np.all(self.facet_values(points) >= -tol, axis=-1)

    def is_standard_simplex(self) -> bool:
        return set(self.facets) == set(standard_simplex_facets(self.dim))

    def is_interval(self) -> bool:
        return self.dim == 1 and self.is_standard_simplex()


def _chebyshev_radius(normals: np.ndarray, offsets: np.ndarray):
    """Largest inscribed ball; returns (status, radius)."""
    n_facets, dim = normals.shape
    norms = np.linalg.norm(normals, axis=1)
    a_ub = np.hstack([-normals, norms[:, None]])
    cost = np.zeros(dim + 1)
    cost[-1] = -1.0
    bounds = [(None, None)] * dim + [(0, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=-offsets, bounds=bounds, method="highs")
    radius = float(res.x[-1]) if res.status == 0 else 0.0
    return res.status, radius


def _check_bounded(normals: np.ndarray, offsets: np.ndarray) -> None:
    dim = normals.shape[1]
    for axis in range(dim):
        for sign in (1.0, -1.0):
            cost = np.zeros(dim)
            cost[axis] = sign
            res = linprog(cost, A_ub=-normals, b_ub=-offsets,
                          bounds=[(None, None)] * dim, method="highs")
            if res.status == 3:
                raise UnboundedPolytope(
                    f"inequalities are unbounded along {'-' if sign > 0 else '+'}x{axis + 1}"
                )


def _solve_vertices(facets: Sequence[Facet], dim: int) -> list:
    found = set()
    for subset in itertools.combinations(facets, dim):
        matrix = sympy.Matrix([f.normal for f in subset])
        if matrix.det() == 0:
            continue
        rhs = sympy.Matrix([sympy.Rational(f.offset.numerator, f.offset.denominator) for f in subset])
        solution = matrix.LUsolve(rhs)
        point = tuple(Fraction(int(s.p), int(s.q)) for s in solution)
        if all(f.pairing(point) >= f.offset for f in facets):
            found.add(point)
    return sorted(found)


def validate_delzant(facets: Sequence[Facet], dim: int) -> DelzantPolytope:
    """
    Validate facet data and build a Delzant polytope.

    Args:
        facets: Facet inequalities in the order they should be indexed
        dim: Ambient dimension m (1 <= m <= 3)

    Returns:
        Validated DelzantPolytope with its vertex list

    Raises:
        DimensionMismatch: A normal does not have m entries
        UnboundedPolytope: The inequality system has a recession direction
        EmptyInterior: No interior point exists
        NotDelzant: A vertex has != m incident facets or det != +-1
        DegenerateFacet: An inequality touches P in less than a facet
    """
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise PolytopeError(f"dimension must be a positive integer, got {dim!r}")
    dim = int(dim)
    if dim > MAX_DIM:
        raise PolytopeError(f"dimension {dim} exceeds the supported maximum {MAX_DIM}")
    facets = tuple(f if isinstance(f, Facet) else Facet(*f) for f in facets)
    for facet in facets:
        if len(facet.normal) != dim:
            raise DimensionMismatch(f"normal {facet.normal} does not have {dim} entries")
    if len(facets) < dim + 1:
        raise UnboundedPolytope(f"{len(facets)} facets cannot bound a {dim}-dimensional polytope")

    normals = np.array([f.normal for f in facets], dtype=float)
    offsets = np.array([float(f.offset) for f in facets])
    status, radius = _chebyshev_radius(normals, offsets)
    if status == 2:
        raise EmptyInterior("facet inequalities are infeasible")
    if status == 3:
        raise UnboundedPolytope("inscribed balls of any radius exist")
    if radius <= ABS_TOL:
        raise EmptyInterior("polytope has no interior (Chebyshev radius 0)")
    _check_bounded(normals, offsets)

    vertices = _solve_vertices(facets, dim)
    for vertex in vertices:
        incident = [f for f in facets if f.pairing(vertex) == f.offset]
        if len(incident) != dim:
            raise NotDelzant(
                f"vertex {_format_point(vertex)} lies on {len(incident)} facets, expected {dim}",
                vertex=vertex, n_incident=len(incident),
            )
        det = int(sympy.Matrix([f.normal for f in incident]).det())
        if abs(det) != 1:
            raise NotDelzant(
                f"vertex {_format_point(vertex)}: incident normals have determinant {det}",
                vertex=vertex, determinant=det, n_incident=dim,
            )
    for index, facet in enumerate(facets):
        on_facet = [v for v in vertices if facet.pairing(v) == facet.offset]
        if len(on_facet) < dim:
            raise DegenerateFacet(f"inequality {index} touches P in {len(on_facet)} vertices")

    logger.debug("validated %d-dimensional polytope with %d facets, %d vertices",
                 dim, len(facets), len(vertices))
    return DelzantPolytope(dim=dim, facets=facets, vertices=tuple(vertices))


def delzant_determinants(polytope: DelzantPolytope) -> list:
    """(vertex, determinant of incident normals) for every vertex."""
    rows = []
    for vertex in polytope.vertices:
        incident = [f.normal for f in polytope.facets if f.pairing(vertex) == f.offset]
        rows.append((vertex, int(sympy.Matrix(incident).det())))
    return rows


def ell(polytope: DelzantPolytope, r: int, x) -> float:
    """
    Facet function l_r(x) = <x, v_r> - lambda_r.

    Nonnegative exactly when x is on the inner side of facet r.
    """
    point = np.asarray(x, dtype=float).reshape(-1)
    if point.shape[0] != polytope.dim:
        raise DimensionMismatch(f"expected {polytope.dim} coordinates, got {point.shape[0]}")
    if not 0 <= r < polytope.n_facets:
        raise PolytopeError(f"facet index {r} out of range 0..{polytope.n_facets - 1}")
    facet = polytope.facets[r]
    return float(np.dot(point, facet.normal) - float(facet.offset))


@dataclass(frozen=True, eq=False)
class LatticeSet:
    """
    Lattice points of the N-th dilate, NP cap Z^m, in lexicographic order.

    Attributes:
        dilation: N
        dim: m
        points: (n, m) read-only int64 array
    """
    dilation: int
    dim: int
    points: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __iter__(self):
        return (tuple(int(c) for c in row) for row in self.points)

    def scaled(self) -> np.ndarray:
        """alpha / N as floats."""
        return self.points.astype(float) / self.dilation


@lru_cache(maxsize=64)
def _enumerate(polytope: DelzantPolytope, n: int) -> LatticeSet:
    lo = [math.floor(min(n * v[j] for v in polytope.vertices)) for j in range(polytope.dim)]
    hi = [math.ceil(max(n * v[j] for v in polytope.vertices)) for j in range(polytope.dim)]
    axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, polytope.dim)

    normals = np.array([f.normal for f in polytope.facets], dtype=np.int64)
    numer = np.array([f.offset.numerator for f in polytope.facets], dtype=np.int64)
    denom = np.array([f.offset.denominator for f in polytope.facets], dtype=np.int64)
    # <alpha, v_r> >= N p_r / q_r  <=>  q_r <alpha, v_r> >= N p_r
    keep = np.all((grid @ normals.T) * denom >= n * numer, axis=1)
    points = grid[keep]
    points.setflags(write=False)
    return LatticeSet(dilation=n, dim=polytope.dim, points=points)


def lattice_points(polytope: DelzantPolytope, n: int) -> LatticeSet:
    """
    Enumerate NP cap Z^m exactly.

    Args:
        polytope: Validated polytope
        n: Dilation N >= 1

    Returns:
        LatticeSet in lexicographic order
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise PolytopeError(f"dilation must be a positive integer, got {n!r}")
    return _enumerate(polytope, int(n))


def ehrhart_ratio(polytope: DelzantPolytope, n: int) -> float:
    """|NP cap Z^m| / (N^m vol P); tends to 1."""
    return len(lattice_points(polytope, n)) / (n ** polytope.dim * polytope.volume)


def simplex_volume(simplex: np.ndarray) -> float:
    """k-dimensional volume of a k-simplex given by k+1 points in R^m."""
    k = simplex.shape[0] - 1
    if k == 0:
        return 1.0
    edges = simplex[1:] - simplex[0]
    return math.sqrt(max(np.linalg.det(edges @ edges.T), 0.0)) / math.factorial(k)


@dataclass(frozen=True, eq=False)
class FacetChart:
    """
    Affine pieces covering one facet, plus its Leray density.

    Each piece is an (m-1)-simplex in R^m given by m points; the affine
    map from the reference simplex is t -> piece[0] + t @ (piece[1:] - piece[0]).

    Attributes:
        index: Facet index r
        vertices: Facet vertices, (k, m)
        pieces: (m-1)-simplices tiling the facet
        leray_density: 1 / |v_r|_2, turning Euclidean surface measure into d sigma
    """
    index: int
    vertices: np.ndarray
    pieces: tuple
    leray_density: float

    def map(self, piece: int, reference_points: np.ndarray) -> np.ndarray:
        simplex = self.pieces[piece]
        if simplex.shape[0] == 1:
            return np.repeat(simplex, len(reference_points), axis=0)
        return simplex[0] + reference_points @ (simplex[1:] - simplex[0])

    @property
    def euclidean_measure(self) -> float:
        return float(sum(simplex_volume(p) for p in self.pieces))

    @property
    def leray_measure(self) -> float:
        return self.euclidean_measure * self.leray_density


def _order_polygon(points: np.ndarray, normal: np.ndarray) -> np.ndarray:
    center = points.mean(axis=0)
    axis1 = points[0] - center
    axis1 /= np.linalg.norm(axis1)
    axis2 = np.cross(normal / np.linalg.norm(normal), axis1)
    rel = points - center
    angles = np.arctan2(rel @ axis2, rel @ axis1)
    return points[np.argsort(angles)]


@lru_cache(maxsize=256)
def facet_chart(polytope: DelzantPolytope, r: int) -> FacetChart:
    """
    Chart of facet r with its Leray density.

    Simplicial facets are a single piece; polygonal facets (m = 3) are
    fanned from the facet centroid.
    """
    if not 0 <= r < polytope.n_facets:
        raise PolytopeError(f"facet index {r} out of range 0..{polytope.n_facets - 1}")
    facet = polytope.facets[r]
    on_facet = np.array([[float(c) for c in v] for v in polytope.vertices
                         if facet.pairing(v) == facet.offset])
    m = polytope.dim
    if len(on_facet) < m:
        raise DegenerateFacet(f"facet {r} has only {len(on_facet)} vertices")
    if m > 1:
        rank = np.linalg.matrix_rank(on_facet[1:] - on_facet[0])
        if rank != m - 1:
            raise DegenerateFacet(f"facet {r} spans a {rank}-dimensional face")

    if len(on_facet) == m:
        pieces = (on_facet,)
    else:
        ring = _order_polygon(on_facet, np.asarray(facet.normal, dtype=float))
        center = ring.mean(axis=0)
        pieces = tuple(np.vstack([center, ring[i], ring[(i + 1) % len(ring)]])
                       for i in range(len(ring)))
    density = 1.0 / float(np.linalg.norm(facet.normal))
    return FacetChart(index=r, vertices=on_facet, pieces=pieces, leray_density=density)


@lru_cache(maxsize=64)
def triangulate(polytope: DelzantPolytope) -> tuple:
    """
    Centroid-fan triangulation: every facet piece coned to the centroid.

    Returns:
        Tuple of (m+1, m) arrays, one per m-simplex
    """
    center = polytope.centroid
    simplices = []
    for r in range(polytope.n_facets):
        for piece in facet_chart(polytope, r).pieces:
            simplices.append(np.vstack([center, piece]))
    return tuple(simplices)


def grid_points(
    polytope: DelzantPolytope,
    counts,
    margin: float = 0.0,
    include_ends: bool = True,
) -> np.ndarray:
    """
    Tensor grid over the bounding box, kept where the boundary distance is at least margin.

    Args:
        polytope: Validated polytope
        counts: Points per axis, an int or one int per axis
        margin: Minimum Euclidean distance to the boundary
        include_ends: Whether the grid touches the bounding box faces

    Returns:
        (n, m) array in lexicographic order
    """
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (polytope.dim,))
    if np.any(counts < 1):
        raise PolytopeError(f"grid counts must be positive, got {counts.tolist()}")
    lo = polytope.vertex_array.min(axis=0)
    hi = polytope.vertex_array.max(axis=0)
    axes = []
    for a, b, n in zip(lo, hi, counts):
        if include_ends:
            axes.append(np.linspace(a, b, n) if n > 1 else np.array([(a + b) / 2]))
        else:
            axes.append(np.linspace(a, b, n + 2)[1:-1])
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, polytope.dim)
    keep = polytope.facet_distance(grid) >= margin - ABS_TOL
    if not include_ends:
        keep &= polytope.facet_distance(grid) > ABS_TOL
    return grid[keep]


def standard_simplex_facets(dim: int) -> list:
    facets = [Facet(tuple(int(i == j) for j in range(dim)), Fraction(0)) for i in range(dim)]
    facets.append(Facet(tuple([-1] * dim), Fraction(-1)))
    return facets


def standard_simplex(dim: int) -> DelzantPolytope:
    """Sigma_m = {x >= 0, x_1 + ... + x_m <= 1}."""
    return validate_delzant(standard_simplex_facets(dim), dim)


def interval() -> DelzantPolytope:
    """[0, 1] = Sigma_1."""
    return standard_simplex(1)


def unit_cube(dim: int) -> DelzantPolytope:
    facets = []
    for i in range(dim):
        unit = tuple(int(i == j) for j in range(dim))
        facets.append(Facet(unit, Fraction(0)))
        facets.append(Facet(tuple(-c for c in unit), Fraction(-1)))
    return validate_delzant(facets, dim)


def polytope_from_dict(data: Mapping) -> DelzantPolytope:
    """
    Build a polytope from the JSON schema
    {"dim": m, "facets": [{"normal": [...], "lambda": "p/q" | number}, ...]}.
    """
    try:
        dim = data["dim"]
        facets = [Facet(tuple(entry["normal"]), parse_rational(entry["lambda"]))
                  for entry in data["facets"]]
    except (KeyError, TypeError) as exc:
        raise PolytopeError(f"malformed polytope description: missing {exc}") from exc
    return validate_delzant(facets, dim)


def polytope_to_dict(polytope: DelzantPolytope) -> dict:
    return {
        "dim": polytope.dim,
        "facets": [
            {"normal": list(f.normal), "lambda": str(f.offset)}
            for f in polytope.facets
        ],
    }


def _format_point(point: Sequence[Fraction]) -> str:
    return "(" + ", ".join(str(c) for c in point) + ")"


def load_polytope(spec, base_dir: Optional[Path] = None) -> DelzantPolytope:
    """
    Resolve a polytope description.

    Args:
        spec: A mapping in the polytope JSON schema, a builtin name
            ("interval", "simplex:<m>", "cube:<m>") or a path to a JSON/YAML file
        base_dir: Directory that relative paths are resolved against

    Raises:
        ConfigError: Unknown name or unreadable file
    """
    if isinstance(spec, Mapping):
        return polytope_from_dict(spec)
    if not isinstance(spec, str) or not spec.strip():
        raise ConfigError(f"polytope must be a mapping, builtin name or path, got {spec!r}")
    name = spec.strip()
    if name == "interval":
        return interval()
    kind, _, size = name.partition(":")
    if kind in _BUILTINS and size.isdigit():
        return _BUILTINS[kind](int(size))

    path = Path(name)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.is_file():
        raise ConfigError(f"polytope {name!r} is neither a builtin nor a readable file")
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} does not contain a polytope mapping")
    return polytope_from_dict(data)


_BUILTINS = {
    "simplex": standard_simplex,
    "cube": unit_cube,
}
