"""
Run configuration for the command-line tools.

A run is one YAML or JSON document:

    polytope: simplex:2          # builtin, inline mapping, or path to a JSON/YAML file
    perturbation: "0.05*x1^2"    # empty for the canonical metric
    f: "sin(pi*x1)"
    N: [16, 32, 64, 128]
    grid: 11                     # points per axis, or one count per axis
    margin: 0.02                 # fraction of the polytope diameter
    x: [[0.3], [0.5]]            # optional explicit points, replaces the grid
    quadrature: {order: 16, tol: 1.0e-10, levels: 8}
    truncation: 10
    out: results.csv
    cache: norming.json
"""

import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import yaml

from .exceptions import ConfigError
from .expr import Expr, parse, parse_optional
from .metric import ToricMetric
from .polytope import DelzantPolytope, grid_points, load_polytope
from .quad import QuadratureSpec

logger = logging.getLogger(__name__)

QUADRATURE_KEYS = ("order", "tol", "levels")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a command needs to build its objects.

    Attributes:
        polytope: Builtin name, inline mapping or file path
        perturbation: Expression for g; empty means the canonical metric
        f: Test function expression
        N: Strictly increasing dilations
        grid: Points per axis for the evaluation grid
        margin: Interior margin as a fraction of the diameter, in (0, 0.5)
        x: Explicit evaluation points, used instead of the grid
        quadrature: Overrides for QuadratureSpec (order, tol, levels)
        truncation: Window multiplier for localized sums
        out: CSV output path, stdout when unset
        cache: Norming table cache path
        base_dir: Directory relative polytope paths resolve against
    """
    polytope: Union[str, dict] = "interval"
    perturbation: str = ""
    f: str = "x1"
    N: tuple = (2, 4, 8)
    grid: Union[int, tuple] = 11
    margin: float = 0.02
    x: Optional[tuple] = None
    quadrature: dict = field(default_factory=dict)
    truncation: float = 10.0
    out: Optional[str] = None
    cache: Optional[str] = None
    base_dir: Optional[str] = None

    def __post_init__(self):
        try:
            Ns = tuple(int(n) for n in self.N)
        except (TypeError, ValueError):
            raise ConfigError(f"N: expected a list of integers, got {self.N!r}") from None
        if not Ns:
            raise ConfigError("N: the list of dilations is empty")
        if any(n < 1 for n in Ns) or any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ConfigError(f"N: dilations must be positive and strictly increasing, got {list(Ns)}")
        object.__setattr__(self, "N", Ns)

        grid = self.grid
        if isinstance(grid, (list, tuple)):
            grid = tuple(grid)
        if not all(isinstance(g, int) and not isinstance(g, bool) and g >= 1
                   for g in (grid if isinstance(grid, tuple) else (grid,))):
            raise ConfigError(f"grid: expected positive integer counts, got {self.grid!r}")
        object.__setattr__(self, "grid", grid)

        try:
            margin, truncation = float(self.margin), float(self.truncation)
        except (TypeError, ValueError):
            raise ConfigError(f"margin and truncation must be numbers, got {self.margin!r}, {self.truncation!r}") from None
        object.__setattr__(self, "margin", margin)
        object.__setattr__(self, "truncation", truncation)
        if not 0.0 < margin < 0.5:
            raise ConfigError(f"margin: must lie in (0, 0.5), got {self.margin!r}")
        if not truncation > 0.0:
            raise ConfigError(f"truncation: must be positive, got {self.truncation!r}")
        if not isinstance(self.f, str) or not self.f.strip():
            raise ConfigError("f: a test function expression is required")
        if self.perturbation is None:
            object.__setattr__(self, "perturbation", "")
        unknown = set(self.quadrature or {}) - set(QUADRATURE_KEYS)
        if unknown:
            raise ConfigError(f"quadrature: unknown keys {sorted(unknown)}")
        if self.x is not None:
            try:
                points = tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in self.x)
            except (TypeError, ValueError):
                raise ConfigError(f"x: expected a list of points, got {self.x!r}") from None
            if not points:
                raise ConfigError("x: the list of points is empty")
            object.__setattr__(self, "x", points)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with every non-None override applied; quadrature keys merge."""
        quadrature = dict(self.quadrature or {})
        for key in QUADRATURE_KEYS:
            value = overrides.pop(f"quad_{key}", None)
            if value is not None:
                quadrature[key] = value
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, quadrature=quadrature, **changes)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("base_dir")
        data["N"] = list(self.N)
        return data

    def build_polytope(self) -> DelzantPolytope:
        base = Path(self.base_dir) if self.base_dir else None
        return load_polytope(self.polytope, base)

    def build_metric(self, polytope: DelzantPolytope) -> ToricMetric:
        return ToricMetric(polytope, parse_optional(self.perturbation, polytope.dim))

    def test_function(self, dim: int) -> Expr:
        return parse(self.f, dim)

    def quad_spec(self, dim: int) -> QuadratureSpec:
        raw = self.quadrature or {}
        try:
            # YAML reads "1e-10" as a string
            values = {
                key: (float if key == "tol" else int)(raw[key])
                for key in QUADRATURE_KEYS if raw.get(key) is not None
            }
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"quadrature: {exc}") from exc
        return QuadratureSpec.default(dim).with_overrides(**values)

    def evaluation_points(self, polytope: DelzantPolytope) -> np.ndarray:
        """Explicit points, or the grid kept at least margin * diameter from the boundary."""
        if self.x is not None:
            points = np.array(self.x, dtype=float)
            if points.ndim != 2 or points.shape[1] != polytope.dim:
                raise ConfigError(f"x: points must have {polytope.dim} coordinates")
            return points
        counts = self.grid if isinstance(self.grid, tuple) else (self.grid,) * polytope.dim
        if len(counts) != polytope.dim:
            raise ConfigError(f"grid: expected {polytope.dim} counts, got {len(counts)}")
        return grid_points(polytope, counts, margin=self.margin * polytope.diameter)


def load_config(source: Optional[str] = None) -> RunConfig:
    """
    Load a run configuration.

    Args:
        source: Path to a YAML/JSON document, "-" for stdin, or None for defaults

    Raises:
        ConfigError: Unreadable document, unknown keys or invalid values
    """
    if source is None:
        return RunConfig()
    base_dir = None
    try:
        if source == "-":
            data = yaml.safe_load(sys.stdin.read())
        else:
            with open(source, 'r') as f:
                data = yaml.safe_load(f)
            base_dir = str(Path(source).resolve().parent)
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {source}: {exc}") from exc

    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {source} must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    logger.debug("loaded config from %s: %s", source, sorted(data))
    return RunConfig(base_dir=base_dir, **data)


def parse_int_list(text: Optional[str], name: str) -> Optional[tuple]:
    """Parse "2,4,8" into (2, 4, 8)."""
    if text is None:
        return None
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers, got {text!r}") from None
