"""Simplicial meshes of domains and of their closed boundary manifolds.

Meshes are immutable values. Generated shapes carry a :class:`GeneratorTag`
so that :func:`refine` can push new boundary midpoints back onto the
analytic boundary; imported meshes do not.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, ClassVar, Dict, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    DegenerateMeshError,
    InvalidDensityError,
    InvalidInputError,
    InvalidMetricError,
    InvalidSpecError,
    MeshParseError,
    NonManifoldError,
    OrientationError,
)

logger = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-12
MIN_COMPONENT_VERTICES = 3


# ---------------------------------------------------------------------------
# Generator tags


@lru_cache(maxsize=64)
def _radius_curve(samples: Tuple[float, ...]) -> CubicSpline:
    theta = np.linspace(0.0, 2.0 * np.pi, len(samples) + 1)
    values = np.append(np.asarray(samples, dtype=float), samples[0])
    return CubicSpline(theta, values, bc_type="periodic")


def star_radius(samples: Tuple[float, ...], theta: np.ndarray) -> np.ndarray:
    """Evaluate the periodic spline r(theta) through equally spaced samples."""
    return _radius_curve(tuple(samples))(np.mod(theta, 2.0 * np.pi))


@dataclass(frozen=True)
class GeneratorTag:
    """Analytic description of a generated shape's boundary.

    kind is one of ``disk``, ``annulus``, ``star``, ``ball``, ``cylinder``;
    params are (radius,), (r_in, r_out), radius samples, (radius,) and
    (circumference, length) respectively.
    """

    kind: str
    params: Tuple[float, ...]

    def project(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.kind in ("disk", "ball"):
            norms = np.linalg.norm(points, axis=1, keepdims=True)
            return points / norms * self.params[0]
        if self.kind == "annulus":
            r_in, r_out = self.params
            norms = np.linalg.norm(points, axis=1, keepdims=True)
            target = np.where(np.abs(norms - r_in) < np.abs(norms - r_out), r_in, r_out)
            return points / norms * target
        if self.kind == "star":
            theta = np.arctan2(points[:, 1], points[:, 0])
            r = star_radius(self.params, theta)
            return np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        # cylinder boundary lines are straight
        return points

    def scaled(self, t: float) -> "GeneratorTag":
        return GeneratorTag(self.kind, tuple(float(p) * t for p in self.params))


# ---------------------------------------------------------------------------
# Mesh type


def _union_find(n: int, pairs: np.ndarray) -> np.ndarray:
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            parent[hi] = lo
    return np.array([find(i) for i in range(n)], dtype=np.int64)


def _gram_volumes(points: np.ndarray) -> np.ndarray:
    """Unsigned volumes of simplices given as (n, d+1, m) coordinate stacks."""
    d = points.shape[1] - 1
    edges = points[:, 1:, :] - points[:, :1, :]
    gram = np.einsum("nim,njm->nij", edges, edges)
    det = np.clip(np.linalg.det(gram), 0.0, None)
    return np.sqrt(det) / math.factorial(d)


def _signed_volumes(points: np.ndarray) -> np.ndarray:
    d = points.shape[1] - 1
    edges = points[:, 1:, :] - points[:, :1, :]
    return np.linalg.det(edges) / math.factorial(d)


def _inversion_parity(rows: np.ndarray) -> np.ndarray:
    inversions = np.zeros(len(rows), dtype=np.int64)
    for a, b in itertools.combinations(range(rows.shape[1]), 2):
        inversions += rows[:, a] > rows[:, b]
    return np.where(inversions % 2 == 0, 1, -1)


def _unique_rows(rows: np.ndarray):
    uniq, inverse, counts = np.unique(rows, axis=0, return_inverse=True, return_counts=True)
    return uniq, np.asarray(inverse).reshape(-1), counts


def _read_only(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Triangles/tetrahedra of a domain, or the closed mesh of its boundary.

    ``dim`` is the topological dimension of the cells; vertex coordinates
    may live in a larger space (boundary curves in the plane, surfaces in
    R^3). Vertices listed in ``periodic_pairs`` are the same point of the
    manifold; they are unified into one unknown at assembly time.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    boundary_vertices: np.ndarray
    periodic_pairs: np.ndarray
    genus: Optional[int] = None
    generator: Optional[GeneratorTag] = None
    parent_vertices: Optional[np.ndarray] = None

    @classmethod
    def build(
        cls,
        vertices,
        cells,
        periodic_pairs=None,
        genus: Optional[int] = None,
        generator: Optional[GeneratorTag] = None,
        parent_vertices=None,
        require_connected: bool = True,
    ) -> "SimplicialMesh":
        """Validate raw arrays and derive the boundary."""
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or cells.ndim != 2 or len(cells) == 0:
            raise InvalidInputError("vertices and cells must be non-empty 2-D arrays")
        dim = cells.shape[1] - 1
        embed = vertices.shape[1]
        if dim not in (1, 2, 3) or dim > embed:
            raise InvalidInputError(f"cells of {dim + 1} vertices cannot live in R^{embed}")
        if cells.min() < 0 or cells.max() >= len(vertices):
            raise InvalidInputError("cell vertex index out of range")
        if not np.all(np.isfinite(vertices)):
            raise InvalidInputError("vertex coordinates must be finite")

        pairs = np.zeros((0, 2), dtype=np.int64) if periodic_pairs is None else np.asarray(periodic_pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs) and (pairs.min() < 0 or pairs.max() >= len(vertices)):
            raise InvalidInputError("periodic pair index out of range")
        reps = _union_find(len(vertices), pairs)

        if len(vertices) > 1:
            close = cKDTree(vertices).query_pairs(DUPLICATE_TOL)
            if close:
                a, b = sorted(close)[0]
                raise DegenerateMeshError(f"duplicate vertices {a} and {b} within {DUPLICATE_TOL}")
        if np.setdiff1d(np.arange(len(vertices)), cells).size:
            raise DegenerateMeshError("mesh has vertices that belong to no cell")

        corner_points = vertices[cells]
        if dim == embed:
            signed = _signed_volumes(corner_points)
            scale = np.max(np.abs(signed))
            if np.any(np.abs(signed) <= 1e-14 * scale):
                raise DegenerateMeshError(f"cell {int(np.argmin(np.abs(signed)))} has zero volume")
            if np.any(signed < 0):
                raise OrientationError(f"cell {int(np.argmax(signed < 0))} has negative orientation")
        else:
            unsigned = _gram_volumes(corner_points)
            if np.any(unsigned <= 1e-14 * np.max(unsigned)):
                raise DegenerateMeshError(f"cell {int(np.argmin(unsigned))} has zero volume")

        boundary_facets = cls._boundary_facets(cells, reps)
        boundary_vertices = np.unique(boundary_facets) if len(boundary_facets) else np.zeros(0, dtype=np.int64)

        mesh = cls(
            dim=dim,
            vertices=_read_only(vertices),
            cells=_read_only(cells),
            boundary_facets=_read_only(boundary_facets),
            boundary_vertices=_read_only(boundary_vertices),
            periodic_pairs=_read_only(pairs),
            genus=genus,
            generator=generator,
            parent_vertices=None if parent_vertices is None else _read_only(np.asarray(parent_vertices, dtype=np.int64)),
        )
        if require_connected and mesh.component_count != 1:
            raise DegenerateMeshError(f"mesh is not connected ({mesh.component_count} components)")
        if genus is None and dim == 2:
            mesh = replace(mesh, genus=mesh.euler_genus())
        logger.debug(
            "Built mesh: dim=%d, %d vertices, %d cells, %d boundary facets",
            dim, len(vertices), len(cells), len(boundary_facets),
        )
        return mesh

    @staticmethod
    def _boundary_facets(cells: np.ndarray, reps: np.ndarray) -> np.ndarray:
        nc, width = cells.shape
        d = width - 1
        facets = np.stack([np.delete(cells, i, axis=1) for i in range(width)], axis=1)
        signs = np.tile(np.array([(-1) ** i for i in range(width)]), nc)
        facets = facets.reshape(nc * width, d)
        identified = reps[facets]
        if d > 1 and np.any(np.sort(identified, axis=1)[:, 1:] == np.sort(identified, axis=1)[:, :-1]):
            raise DegenerateMeshError("periodic identification collapses a facet")
        orientation = signs * _inversion_parity(identified)
        _, inverse, counts = _unique_rows(np.sort(identified, axis=1))
        occurrences = counts[inverse]
        if np.any(counts > 2):
            raise NonManifoldError(f"{int(np.sum(counts > 2))} facet(s) shared by more than two cells")
        balance = np.bincount(inverse, weights=orientation)
        if np.any((counts == 2) & (balance != 0)):
            raise OrientationError("adjacent cells induce the same orientation on a shared facet")
        boundary = facets[occurrences == 1].copy()
        flip = signs[occurrences == 1] < 0
        if d >= 2:
            boundary[flip, 0], boundary[flip, 1] = boundary[flip, 1].copy(), boundary[flip, 0].copy()
        return boundary

    # -- derived quantities ------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def embed_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def is_closed(self) -> bool:
        return len(self.boundary_facets) == 0

    @cached_property
    def representatives(self) -> np.ndarray:
        """Vertex -> representative vertex after periodic identification."""
        return _union_find(self.n_vertices, self.periodic_pairs)

    def signed_volumes(self) -> np.ndarray:
        if self.dim != self.embed_dim:
            raise InvalidInputError("signed volumes need cells of full dimension")
        return _signed_volumes(self.vertices[self.cells])

    def cell_volumes(self) -> np.ndarray:
        return _gram_volumes(self.vertices[self.cells])

    def _vertex_graph(self, simplices: np.ndarray) -> sparse.csr_matrix:
        reps = self.representatives
        rows, cols = [], []
        for a, b in itertools.combinations(range(simplices.shape[1]), 2):
            rows.append(reps[simplices[:, a]])
            cols.append(reps[simplices[:, b]])
        if not rows:
            rows, cols = [reps[simplices[:, 0]]], [reps[simplices[:, 0]]]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        n = self.n_vertices
        return sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()

    @cached_property
    def component_labels(self) -> np.ndarray:
        """Connected component of every vertex (periodic copies share one)."""
        _, labels = connected_components(self._vertex_graph(self.cells), directed=False)
        labels = labels[self.representatives]
        _, compact = np.unique(labels, return_inverse=True)
        return np.asarray(compact).reshape(-1)

    @property
    def component_count(self) -> int:
        return int(self.component_labels.max()) + 1

    @cached_property
    def boundary_component_labels(self) -> np.ndarray:
        """Component label per entry of ``boundary_vertices``."""
        if self.is_closed:
            return np.zeros(0, dtype=np.int64)
        _, labels = connected_components(self._vertex_graph(self.boundary_facets), directed=False)
        labels = labels[self.representatives[self.boundary_vertices]]
        _, compact = np.unique(labels, return_inverse=True)
        return np.asarray(compact).reshape(-1)

    @property
    def boundary_components(self) -> int:
        labels = self.boundary_component_labels
        return int(labels.max()) + 1 if len(labels) else 0

    @cached_property
    def euler_characteristic(self) -> int:
        reps = self.representatives
        identified = reps[self.cells]
        chi = 0
        for j in range(self.dim + 1):
            faces = [np.sort(identified[:, list(c)], axis=1) for c in itertools.combinations(range(self.dim + 1), j + 1)]
            chi += (-1) ** j * len(np.unique(np.vstack(faces), axis=0))
        return int(chi)

    def euler_genus(self) -> Optional[int]:
        """Genus of an orientable surface from chi = 2 - 2g - b."""
        if self.dim != 2:
            return None
        twice = 2 - self.euler_characteristic - self.boundary_components
        if twice < 0 or twice % 2:
            return None
        return twice // 2

    def edges(self) -> np.ndarray:
        pairs = [np.sort(self.cells[:, [a, b]], axis=1) for a, b in itertools.combinations(range(self.dim + 1), 2)]
        return np.unique(np.vstack(pairs), axis=0)

    def boundary_length_or_area(self) -> float:
        """Euclidean measure of the boundary facets in model coordinates."""
        if self.is_closed:
            return 0.0
        return float(np.sum(_gram_volumes(self.vertices[self.boundary_facets])))


# ---------------------------------------------------------------------------
# Conformal metric and boundary density


class MetricKind(str, Enum):
    EUCLIDEAN = "euclidean"
    SPHERICAL = "spherical_stereographic"
    HYPERBOLIC = "hyperbolic_poincare"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class MetricField:
    """Conformal factor rho of g = rho * g_euclid, per vertex.

    Presets depend on the model coordinates; ``curvature_scale`` s is the
    radius of curvature: spherical rho = 4 s^4 / (s^2 + |x|^2)^2,
    hyperbolic rho = 4 s^4 / (s^2 - |x|^2)^2 for |x| < s.
    """

    kind: MetricKind = MetricKind.EUCLIDEAN
    values: Optional[np.ndarray] = None
    curvature_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if not (self.curvature_scale > 0 and math.isfinite(self.curvature_scale)):
            raise InvalidMetricError("curvature_scale must be positive")
        if self.kind is MetricKind.CUSTOM:
            if self.values is None:
                raise InvalidMetricError("custom metric needs per-vertex values")
            values = np.asarray(self.values, dtype=float)
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise InvalidMetricError("conformal factor must be positive at every vertex")
            object.__setattr__(self, "values", _read_only(values))

    @classmethod
    def euclidean(cls) -> "MetricField":
        return cls(MetricKind.EUCLIDEAN)

    @classmethod
    def spherical(cls, curvature_scale: float = 1.0) -> "MetricField":
        return cls(MetricKind.SPHERICAL, curvature_scale=curvature_scale)

    @classmethod
    def hyperbolic(cls, curvature_scale: float = 1.0) -> "MetricField":
        return cls(MetricKind.HYPERBOLIC, curvature_scale=curvature_scale)

    @classmethod
    def custom(cls, values) -> "MetricField":
        return cls(MetricKind.CUSTOM, values=np.asarray(values, dtype=float))

    @classmethod
    def exponential(cls, exponent) -> "MetricField":
        """rho = exp(f) for per-vertex f."""
        return cls.custom(np.exp(np.asarray(exponent, dtype=float)))

    @property
    def ricci_nonnegative(self) -> Optional[bool]:
        if self.kind in (MetricKind.EUCLIDEAN, MetricKind.SPHERICAL):
            return True
        if self.kind is MetricKind.HYPERBOLIC:
            return False
        return None

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        s = self.curvature_scale
        r2 = np.sum(points * points, axis=1)
        if self.kind is MetricKind.EUCLIDEAN:
            return np.ones(len(points))
        if self.kind is MetricKind.SPHERICAL:
            return 4.0 * s**4 / (s**2 + r2) ** 2
        if self.kind is MetricKind.HYPERBOLIC:
            if np.any(r2 >= s**2):
                raise InvalidMetricError("hyperbolic chart needs every vertex strictly inside |x| < curvature_scale")
            return 4.0 * s**4 / (s**2 - r2) ** 2
        if len(self.values) != len(points):
            raise InvalidMetricError(f"custom metric has {len(self.values)} values for {len(points)} vertices")
        return np.array(self.values)

    def restrict(self, indices) -> "MetricField":
        """The same metric on a sub-mesh whose vertices are ``indices``."""
        if self.kind is MetricKind.CUSTOM:
            return MetricField.custom(np.asarray(self.values)[np.asarray(indices)])
        return self

    def to_dict(self) -> Dict:
        data = {"kind": self.kind.value, "curvature_scale": self.curvature_scale}
        if self.kind is MetricKind.CUSTOM:
            data["values"] = "per-vertex"
        return data


@dataclass(frozen=True, eq=False)
class BoundaryDensity:
    """delta >= 0 on the boundary, aligned with ``mesh.boundary_vertices``."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise InvalidDensityError("density values must be finite")
        if np.any(values < 0):
            raise InvalidDensityError("density must be non-negative")
        if not np.any(values > 0):
            raise InvalidDensityError("density must not vanish identically")
        object.__setattr__(self, "values", _read_only(values))

    @classmethod
    def uniform(cls, mesh: SimplicialMesh, value: float = 1.0) -> "BoundaryDensity":
        return cls(np.full(len(mesh.boundary_vertices), float(value)))

    @classmethod
    def from_function(cls, mesh: SimplicialMesh, fn: Callable[[np.ndarray], np.ndarray]) -> "BoundaryDensity":
        return cls(np.asarray(fn(mesh.vertices[mesh.boundary_vertices]), dtype=float))

    def scaled(self, c: float) -> "BoundaryDensity":
        return BoundaryDensity(self.values * c)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    @property
    def strictly_positive(self) -> bool:
        return bool(np.all(self.values > 0))

    def vertex_values(self, mesh: SimplicialMesh) -> np.ndarray:
        if len(self.values) != len(mesh.boundary_vertices):
            raise InvalidDensityError(
                f"density has {len(self.values)} values for {len(mesh.boundary_vertices)} boundary vertices"
            )
        full = np.zeros(mesh.n_vertices)
        full[mesh.boundary_vertices] = self.values
        return full


# ---------------------------------------------------------------------------
# Domain specs


@dataclass(frozen=True)
class UnitDisk:
    refinement: int = 3
    radius: float = 1.0
    kind: ClassVar[str] = "unit_disk"


@dataclass(frozen=True)
class StarShaped:
    radius_samples: Tuple[float, ...]
    refinement: int = 3
    kind: ClassVar[str] = "star_shaped"


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float
    refinement: int = 2
    kind: ClassVar[str] = "annulus"


@dataclass(frozen=True)
class FlatCylinder:
    circumference: float
    length: float
    refinement: int = 2
    kind: ClassVar[str] = "flat_cylinder"

    @property
    def half_length(self) -> float:
        return self.length / 2.0


@dataclass(frozen=True)
class UnitBall:
    refinement: int = 2
    radius: float = 1.0
    kind: ClassVar[str] = "unit_ball"


DomainSpec = Union[UnitDisk, StarShaped, Annulus, FlatCylinder, UnitBall]

_SPEC_TYPES = {cls.kind: cls for cls in (UnitDisk, StarShaped, Annulus, FlatCylinder, UnitBall)}


def domain_spec_from_dict(data: Dict) -> DomainSpec:
    """Parse ``{"kind": "annulus", "r_in": 0.5, ...}`` into a DomainSpec."""
    if not isinstance(data, dict) or data.get("kind") not in _SPEC_TYPES:
        raise InvalidSpecError(f"unknown domain kind: {data.get('kind') if isinstance(data, dict) else data!r}")
    cls = _SPEC_TYPES[data["kind"]]
    allowed = {f.name for f in fields(cls)}
    kwargs = {key: value for key, value in data.items() if key != "kind"}
    unknown = set(kwargs) - allowed
    if unknown:
        raise InvalidSpecError(f"unknown {data['kind']} parameter(s): {', '.join(sorted(unknown))}")
    if "radius_samples" in kwargs:
        kwargs["radius_samples"] = tuple(float(r) for r in kwargs["radius_samples"])
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise InvalidSpecError(str(e)) from e


def domain_spec_to_dict(spec: DomainSpec) -> Dict:
    data = {"kind": spec.kind}
    for f in fields(spec):
        value = getattr(spec, f.name)
        data[f.name] = list(value) if isinstance(value, tuple) else value
    return data


def _positive(name: str, value) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InvalidSpecError(f"{name} must be a number")
    if not (value > 0 and math.isfinite(value)):
        raise InvalidSpecError(f"{name} must be positive, got {value}")
    return value


def _refinement(value) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 0:
        raise InvalidSpecError(f"refinement must be a non-negative integer, got {value!r}")
    return int(value)


# ---------------------------------------------------------------------------
# Midpoint subdivision

_TET_DIAGONALS = (
    # (diagonal, equatorial cycle) in terms of edge midpoints m_ab
    (((0, 1), (2, 3)), ((0, 2), (0, 3), (1, 3), (1, 2))),
    (((0, 2), (1, 3)), ((0, 1), (0, 3), (2, 3), (1, 2))),
    (((0, 3), (1, 2)), ((0, 1), (0, 2), (2, 3), (1, 3))),
)


def _subdivide(vertices: np.ndarray, cells: np.ndarray, pairs: np.ndarray):
    """Split every cell at its edge midpoints.

    Returns (vertices, cells, periodic_pairs, edges, midpoints) where
    ``midpoints[e]`` is the index of the new vertex on ``edges[e]``.
    """
    nv = len(vertices)
    nc, width = cells.shape
    d = width - 1
    local = list(itertools.combinations(range(width), 2))
    cell_edges = np.sort(np.stack([cells[:, [a, b]] for a, b in local], axis=1), axis=2)
    edges, inverse, _ = _unique_rows(cell_edges.reshape(-1, 2))
    midpoints = nv + np.arange(len(edges))
    new_vertices = np.vstack([vertices, 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])])
    mid = midpoints[inverse.reshape(nc, len(local))]

    def m(a, b):
        return mid[:, local.index((min(a, b), max(a, b)))]

    v = [cells[:, i] for i in range(width)]
    if d == 1:
        children = [np.column_stack([v[0], m(0, 1)]), np.column_stack([m(0, 1), v[1]])]
        new_cells = np.stack(children, axis=1).reshape(-1, 2)
    elif d == 2:
        children = [
            np.column_stack([v[0], m(0, 1), m(0, 2)]),
            np.column_stack([m(0, 1), v[1], m(1, 2)]),
            np.column_stack([m(0, 2), m(1, 2), v[2]]),
            np.column_stack([m(0, 1), m(1, 2), m(0, 2)]),
        ]
        new_cells = np.stack(children, axis=1).reshape(-1, 3)
    else:
        corners = [
            np.column_stack([v[0], m(0, 1), m(0, 2), m(0, 3)]),
            np.column_stack([m(0, 1), v[1], m(1, 2), m(1, 3)]),
            np.column_stack([m(0, 2), m(1, 2), v[2], m(2, 3)]),
            np.column_stack([m(0, 3), m(1, 3), m(2, 3), v[3]]),
        ]
        lengths = []
        options = []
        for (da, db), cycle in _TET_DIAGONALS:
            a, b = m(*da), m(*db)
            lengths.append(np.linalg.norm(new_vertices[a] - new_vertices[b], axis=1))
            ring = [m(*e) for e in cycle]
            options.append(np.stack([np.column_stack([a, b, ring[i], ring[(i + 1) % 4]]) for i in range(4)], axis=1))
        choice = np.argmin(np.column_stack(lengths), axis=1)
        inner = np.stack(options, axis=0)[choice, np.arange(nc)]
        new_cells = np.concatenate([np.stack(corners, axis=1), inner], axis=1).reshape(-1, 4)

    if d == new_vertices.shape[1]:
        flip = _signed_volumes(new_vertices[new_cells]) < 0
        new_cells[flip, 0], new_cells[flip, 1] = new_cells[flip, 1].copy(), new_cells[flip, 0].copy()

    new_pairs = pairs
    if len(pairs):
        reps = _union_find(nv, pairs)
        lookup = {(int(a), int(b)): int(k) for k, (a, b) in zip(midpoints, edges)}
        extra = []
        for k, (a, b) in zip(midpoints, edges):
            ra, rb = sorted((int(reps[a]), int(reps[b])))
            if (ra, rb) != (int(a), int(b)) and (ra, rb) in lookup:
                extra.append((int(k), lookup[(ra, rb)]))
        if extra:
            new_pairs = np.vstack([pairs, np.array(extra, dtype=np.int64)])
    return new_vertices, new_cells, new_pairs, edges, midpoints


def _subdivide_times(vertices, cells, times: int):
    pairs = np.zeros((0, 2), dtype=np.int64)
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    for _ in range(times):
        vertices, cells, pairs, _, _ = _subdivide(vertices, cells, pairs)
    return vertices, cells


# ---------------------------------------------------------------------------
# Generators


def _hexagon_disk(refinement: int) -> Tuple[np.ndarray, np.ndarray]:
    angles = np.arange(6) * np.pi / 3.0
    seed = np.vstack([[0.0, 0.0], np.column_stack([np.cos(angles), np.sin(angles)])])
    cells = [(0, i + 1, (i + 1) % 6 + 1) for i in range(6)]
    vertices, cells = _subdivide_times(seed, cells, refinement)
    normals = np.column_stack([np.cos(angles + np.pi / 6.0), np.sin(angles + np.pi / 6.0)])
    gauge = np.max(vertices @ normals.T, axis=1) / math.cos(math.pi / 6.0)
    norms = np.linalg.norm(vertices, axis=1)
    scale = np.divide(gauge, norms, out=np.zeros_like(norms), where=norms > 0)
    return vertices * scale[:, None], cells


def _octahedron_ball(refinement: int) -> Tuple[np.ndarray, np.ndarray]:
    seed = np.vstack([np.zeros(3), np.eye(3), -np.eye(3)])
    cells = []
    for sx, sy, sz in itertools.product((1, 4), (2, 5), (3, 6)):
        tet = [0, sx, sy, sz]
        if _signed_volumes(seed[[tet]])[0] < 0:
            tet[1], tet[2] = tet[2], tet[1]
        cells.append(tet)
    vertices, cells = _subdivide_times(seed, cells, refinement)
    l1 = np.sum(np.abs(vertices), axis=1)
    l2 = np.linalg.norm(vertices, axis=1)
    scale = np.divide(l1, l2, out=np.zeros_like(l2), where=l2 > 0)
    return vertices * scale[:, None], cells


def _make_disk(spec: UnitDisk) -> SimplicialMesh:
    radius = _positive("radius", spec.radius)
    vertices, cells = _hexagon_disk(_refinement(spec.refinement))
    return SimplicialMesh.build(vertices * radius, cells, generator=GeneratorTag("disk", (radius,)))


def _make_star(spec: StarShaped) -> SimplicialMesh:
    samples = tuple(_positive("radius sample", r) for r in spec.radius_samples)
    if len(samples) < 3:
        raise InvalidSpecError("star_shaped needs at least 3 radius samples")
    vertices, cells = _hexagon_disk(_refinement(spec.refinement))
    theta = np.arctan2(vertices[:, 1], vertices[:, 0])
    radial = star_radius(samples, theta)
    if np.any(radial <= 0):
        raise InvalidSpecError("interpolated radius curve is not positive")
    return SimplicialMesh.build(vertices * radial[:, None], cells, generator=GeneratorTag("star", samples))


def _make_annulus(spec: Annulus) -> SimplicialMesh:
    r_in = _positive("r_in", spec.r_in)
    r_out = _positive("r_out", spec.r_out)
    if r_in >= r_out:
        raise InvalidSpecError(f"annulus needs r_in < r_out, got {r_in} >= {r_out}")
    n_theta = 12 * 2 ** _refinement(spec.refinement)
    n_r = max(1, math.ceil(n_theta * math.log(r_out / r_in) / (2.0 * math.pi)))
    radii = r_in * (r_out / r_in) ** (np.arange(n_r + 1) / n_r)
    radii[-1] = r_out
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    rr, tt = np.meshgrid(radii, theta, indexing="ij")
    vertices = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])

    def idx(i, j):
        return i * n_theta + j % n_theta

    cells = []
    for i in range(n_r):
        for j in range(n_theta):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            cells.extend([(a, b, c), (a, c, d)])
    return SimplicialMesh.build(vertices, cells, generator=GeneratorTag("annulus", (r_in, r_out)))


def _make_cylinder(spec: FlatCylinder) -> SimplicialMesh:
    ell = _positive("circumference", spec.circumference)
    length = _positive("length", spec.length)
    n_x = 8 * 2 ** _refinement(spec.refinement)
    h = ell / n_x
    n_y = max(1, math.ceil(length / h - 1e-9))
    xs = np.linspace(0.0, ell, n_x + 1)
    ys = np.linspace(-length / 2.0, length / 2.0, n_y + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def idx(i, j):
        return i * (n_y + 1) + j

    cells = []
    for i in range(n_x):
        for j in range(n_y):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            cells.extend([(a, b, c), (a, c, d)])
    pairs = [(idx(n_x, j), idx(0, j)) for j in range(n_y + 1)]
    return SimplicialMesh.build(vertices, cells, periodic_pairs=pairs, generator=GeneratorTag("cylinder", (ell, length)))


def _make_ball(spec: UnitBall) -> SimplicialMesh:
    radius = _positive("radius", spec.radius)
    vertices, cells = _octahedron_ball(_refinement(spec.refinement))
    return SimplicialMesh.build(vertices * radius, cells, generator=GeneratorTag("ball", (radius,)))


_GENERATORS = {
    UnitDisk: _make_disk,
    StarShaped: _make_star,
    Annulus: _make_annulus,
    FlatCylinder: _make_cylinder,
    UnitBall: _make_ball,
}


def make_domain(spec: DomainSpec) -> SimplicialMesh:
    """Generate the mesh of one of the built-in domain families."""
    generator = _GENERATORS.get(type(spec))
    if generator is None:
        raise InvalidSpecError(f"unsupported domain spec: {spec!r}")
    mesh = generator(spec)
    labels = mesh.boundary_component_labels
    counts = np.bincount(labels) if len(labels) else np.zeros(1, dtype=np.int64)
    if np.any(counts < MIN_COMPONENT_VERTICES):
        raise DegenerateMeshError("boundary component with fewer than 3 vertices")
    logger.info("Generated %s: %d vertices, %d cells", spec.kind, mesh.n_vertices, len(mesh.cells))
    return mesh


# ---------------------------------------------------------------------------
# Operations on meshes


def refine(mesh: SimplicialMesh) -> SimplicialMesh:
    """Midpoint refinement; boundary midpoints follow the generator's shape."""
    vertices, cells, pairs, edges, midpoints = _subdivide(
        np.array(mesh.vertices), np.array(mesh.cells), np.array(mesh.periodic_pairs)
    )
    if mesh.generator is not None and mesh.dim >= 2 and not mesh.is_closed:
        facets = mesh.boundary_facets
        facet_edges = np.vstack([np.sort(facets[:, [a, b]], axis=1) for a, b in itertools.combinations(range(facets.shape[1]), 2)])
        n = mesh.n_vertices
        on_boundary = np.isin(edges[:, 0] * n + edges[:, 1], facet_edges[:, 0] * n + facet_edges[:, 1])
        targets = midpoints[on_boundary]
        vertices[targets] = mesh.generator.project(vertices[targets])
    return SimplicialMesh.build(
        vertices,
        cells,
        periodic_pairs=pairs,
        genus=mesh.genus,
        generator=mesh.generator,
        require_connected=mesh.component_count == 1,
    )


def boundary_of(mesh: SimplicialMesh) -> SimplicialMesh:
    """Closed (dim-1)-mesh of the boundary, coordinates inherited."""
    if mesh.dim < 2 or mesh.is_closed:
        raise InvalidInputError("boundary_of needs a domain mesh with non-empty boundary")
    keep = np.array(mesh.boundary_vertices)
    index = np.full(mesh.n_vertices, -1, dtype=np.int64)
    index[keep] = np.arange(len(keep))
    pairs = np.array(mesh.periodic_pairs)
    if len(pairs):
        pairs = pairs[np.all(index[pairs] >= 0, axis=1)]
        pairs = index[pairs]
    return SimplicialMesh.build(
        mesh.vertices[keep],
        index[mesh.boundary_facets],
        periodic_pairs=pairs,
        parent_vertices=keep,
        require_connected=False,
    )


def scale_mesh(mesh: SimplicialMesh, t: float) -> SimplicialMesh:
    """Scale all model coordinates (and the generator shape) by t > 0."""
    t = _positive("scale", t)
    return replace(
        mesh,
        vertices=_read_only(np.asarray(mesh.vertices) * t),
        generator=None if mesh.generator is None else mesh.generator.scaled(t),
    )


# ---------------------------------------------------------------------------
# Import / export


def _format_of(path: Path, format: Optional[str]) -> str:
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("off", "json"):
        raise MeshParseError(f"unsupported mesh format: {fmt!r}")
    return fmt


def _parse_json_mesh(text: str) -> Dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MeshParseError(f"invalid JSON mesh: {e}") from e
    if not isinstance(data, dict) or not all(key in data for key in ("dim", "vertices", "cells")):
        raise MeshParseError("JSON mesh needs 'dim', 'vertices' and 'cells'")
    dim = data["dim"]
    if not isinstance(dim, int) or dim not in (1, 2, 3):
        raise MeshParseError(f"invalid dim: {dim!r}")
    try:
        vertices = np.array(data["vertices"], dtype=float)
        cells = np.array(data["cells"], dtype=np.int64)
        pairs = np.array(data.get("periodic_pairs") or [], dtype=np.int64).reshape(-1, 2)
    except (TypeError, ValueError) as e:
        raise MeshParseError(f"malformed mesh arrays: {e}") from e
    if vertices.ndim != 2 or cells.ndim != 2 or cells.shape[1] != dim + 1 or vertices.shape[1] < dim:
        raise MeshParseError("array shapes do not match dim")
    if len(cells) == 0 or cells.min() < 0 or cells.max() >= len(vertices):
        raise MeshParseError("cell vertex index out of range")
    genus = data.get("genus")
    if genus is not None and (not isinstance(genus, int) or genus < 0):
        raise MeshParseError(f"invalid genus: {genus!r}")
    return {"vertices": vertices, "cells": cells, "periodic_pairs": pairs, "genus": genus}


def _parse_off_mesh(text: str) -> Dict:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line.split())
    if not tokens or not tokens[0][0].upper().endswith("OFF"):
        raise MeshParseError("missing OFF header")
    header = tokens[0][1:] if len(tokens[0]) > 1 else None
    body = tokens[1:]
    if header is None:
        if not body:
            raise MeshParseError("missing OFF counts line")
        header, body = body[0], body[1:]
    try:
        nv, nf = int(header[0]), int(header[1])
        vertices = np.array([[float(x) for x in row[:3]] for row in body[:nv]], dtype=float)
        faces = []
        for row in body[nv : nv + nf]:
            if int(row[0]) != 3:
                raise MeshParseError("OFF import supports triangles only")
            faces.append([int(x) for x in row[1:4]])
    except (IndexError, ValueError) as e:
        raise MeshParseError(f"malformed OFF data: {e}") from e
    if len(vertices) != nv or len(faces) != nf or vertices.shape[1] != 3:
        raise MeshParseError("OFF section sizes do not match the header")
    cells = np.array(faces, dtype=np.int64)
    if cells.min() < 0 or cells.max() >= nv:
        raise MeshParseError("face vertex index out of range")
    if np.all(vertices[:, 2] == 0.0):
        vertices = vertices[:, :2]
    return {"vertices": vertices, "cells": cells, "periodic_pairs": None, "genus": None}


def import_mesh(path, format: Optional[str] = None) -> SimplicialMesh:
    """Read an OFF (triangles) or JSON mesh and validate it."""
    path = Path(path)
    fmt = _format_of(path, format)
    try:
        text = path.read_text()
    except OSError as e:
        raise MeshParseError(f"cannot read {path}: {e}") from e
    parsed = _parse_json_mesh(text) if fmt == "json" else _parse_off_mesh(text)
    try:
        mesh = SimplicialMesh.build(**parsed)
    except InvalidInputError as e:
        raise MeshParseError(str(e)) from e
    logger.info("Imported %s mesh from %s (genus=%s)", fmt, path, mesh.genus)
    return mesh


def export_mesh(mesh: SimplicialMesh, path, format: Optional[str] = None) -> Path:
    path = Path(path)
    fmt = _format_of(path, format)
    if fmt == "json":
        data = {
            "dim": mesh.dim,
            "vertices": np.asarray(mesh.vertices).tolist(),
            "cells": np.asarray(mesh.cells).tolist(),
        }
        if len(mesh.periodic_pairs):
            data["periodic_pairs"] = np.asarray(mesh.periodic_pairs).tolist()
        if mesh.genus is not None:
            data["genus"] = mesh.genus
        path.write_text(json.dumps(data))
        return path
    if mesh.dim != 2:
        raise InvalidInputError("OFF export supports triangle meshes only")
    coords = np.asarray(mesh.vertices)
    if coords.shape[1] == 2:
        coords = np.column_stack([coords, np.zeros(len(coords))])
    lines = ["OFF", f"{len(coords)} {len(mesh.cells)} 0"]
    lines += [" ".join(repr(float(x)) for x in row) for row in coords]
    lines += ["3 " + " ".join(str(int(i)) for i in cell) for cell in mesh.cells]
    path.write_text("\n".join(lines) + "\n")
    return path
