"""P1 finite-element operators under a conformal metric g = rho * g_euclid.

Element matrices use the Gram-matrix form of the barycentric gradients, so
the same code handles intervals, triangles and tetrahedra embedded in any
ambient dimension (boundary curves, boundary surfaces, surfaces in R^3).
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import InvalidInputError
from .mesh import BoundaryDensity, MetricField, SimplicialMesh

logger = logging.getLogger(__name__)


def _rule(points, weights):
    return np.asarray(points, dtype=float), np.asarray(weights, dtype=float)


_G = 1.0 / (2.0 * math.sqrt(3.0))
_A3 = 0.5854101966249685
_B3 = 0.1381966011250105

# Barycentric quadrature rules, weights normalized to sum to one.
VOLUME_RULES = {
    1: _rule([[0.5 + _G, 0.5 - _G], [0.5 - _G, 0.5 + _G]], [0.5, 0.5]),
    2: _rule([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]], [1 / 3] * 3),
    3: _rule(
        [[_A3, _B3, _B3, _B3], [_B3, _A3, _B3, _B3], [_B3, _B3, _A3, _B3], [_B3, _B3, _B3, _A3]],
        [0.25] * 4,
    ),
}

_T = math.sqrt(3.0 / 5.0) / 2.0
_FA, _FW = 0.445948490915965, 0.223381589678011
_FC, _FV = 0.091576213509771, 0.109951743655322

# Boundary facets: 3-point Gauss on edges, degree-4 six-point rule on triangles.
FACET_RULES = {
    1: _rule([[0.5 + _T, 0.5 - _T], [0.5, 0.5], [0.5 - _T, 0.5 + _T]], [5 / 18, 8 / 18, 5 / 18]),
    2: _rule(
        [
            [_FA, _FA, 1 - 2 * _FA], [_FA, 1 - 2 * _FA, _FA], [1 - 2 * _FA, _FA, _FA],
            [_FC, _FC, 1 - 2 * _FC], [_FC, 1 - 2 * _FC, _FC], [1 - 2 * _FC, _FC, _FC],
        ],
        [_FW] * 3 + [_FV] * 3,
    ),
}


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """Stiffness and mass matrices on the DOF space of one mesh.

    DOFs are vertices after periodic identification (``dof_map``).
    ``M_bnd`` carries the density delta, ``M_area`` is the same boundary mass
    without it. For Laplace-Beltrami bundles ``M_bnd`` and ``M_area`` are None
    and ``boundary_index`` lists every DOF.
    """

    mesh: SimplicialMesh
    K: sparse.csr_matrix
    M_vol: sparse.csr_matrix
    M_bnd: Optional[sparse.csr_matrix]
    M_area: Optional[sparse.csr_matrix]
    sigma_area: float
    omega_volume: float
    boundary_index: np.ndarray
    n_bdim: int
    dof_map: np.ndarray
    mean_density: float = 1.0

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]

    @property
    def interior_index(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.boundary_index)

    @property
    def dof_vertices(self) -> np.ndarray:
        """Representative vertex of every DOF."""
        return np.unique(self.dof_map, return_index=True)[1]

    def to_dofs(self, vertex_values) -> np.ndarray:
        """Per-vertex values -> DOF values, read at each DOF's representative vertex."""
        values = np.asarray(vertex_values, dtype=float)
        if len(values) != len(self.dof_map):
            raise InvalidInputError(f"expected {len(self.dof_map)} vertex values, got {len(values)}")
        return values[self.dof_vertices]

    def to_vertices(self, dof_values) -> np.ndarray:
        return np.asarray(dof_values)[self.dof_map]

    def component_indicators(self) -> np.ndarray:
        """One 0/1 column per connected component, on DOFs."""
        labels = self.mesh.component_labels
        indicators = np.zeros((self.n_dofs, int(labels.max()) + 1))
        indicators[self.dof_map, labels] = 1.0
        return indicators


def _dof_map(mesh: SimplicialMesh) -> np.ndarray:
    _, compact = np.unique(mesh.representatives, return_inverse=True)
    return np.asarray(compact).reshape(-1)


def _element_geometry(points: np.ndarray):
    """Volumes and barycentric gradients of simplices (n, d+1, m)."""
    d = points.shape[1] - 1
    jac = points[:, 1:, :] - points[:, :1, :]
    gram = np.einsum("nim,njm->nij", jac, jac)
    vol = np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / math.factorial(d)
    grads = np.linalg.solve(gram, jac)
    grads = np.concatenate([-grads.sum(axis=1, keepdims=True), grads], axis=1)
    return vol, grads


def _weights_at_quadrature(rho_cells: np.ndarray, exponent: float, rule) -> np.ndarray:
    """rho^exponent at each quadrature point, rho interpolated linearly."""
    points, _ = rule
    return (rho_cells @ points.T) ** exponent


def _assemble(cells: np.ndarray, local: np.ndarray, dof_map: np.ndarray, n: int) -> sparse.csr_matrix:
    width = cells.shape[1]
    dofs = dof_map[cells]
    rows = np.repeat(dofs, width, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, width)).reshape(-1)
    matrix = sparse.csc_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    matrix = 0.5 * (matrix + matrix.T)
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix.tocsr()


def _stiffness(points, cells, rho, exponent, dof_map, n):
    vol, grads = _element_geometry(points)
    local = vol[:, None, None] * np.einsum("nim,njm->nij", grads, grads)
    if exponent != 0.0:
        d = cells.shape[1] - 1
        rule = VOLUME_RULES[d]
        weight = _weights_at_quadrature(rho[cells], exponent, rule) @ rule[1]
        local = local * weight[:, None, None]
    return _assemble(cells, local, dof_map, n)


def _mass(points, cells, weight_at_vertices, dof_map, n, rules):
    """Mass matrix int w phi_i phi_j with w evaluated by quadrature."""
    d = cells.shape[1] - 1
    vol, _ = _element_geometry(points)
    bary, qw = rules[d]
    w_q = weight_at_vertices(cells, bary)
    local = np.einsum("q,nq,qi,qj->nij", qw, w_q, bary, bary) * vol[:, None, None]
    return _assemble(cells, local, dof_map, n)


def assemble(mesh: SimplicialMesh, metric: MetricField, density: BoundaryDensity) -> OperatorBundle:
    """Weighted Steklov operators: K, volume mass, and delta-weighted boundary mass."""
    if mesh.is_closed or mesh.dim < 2:
        raise InvalidInputError("Steklov assembly needs a domain mesh with non-empty boundary")
    d = mesh.dim
    rho = metric.evaluate(mesh.vertices)
    delta = density.vertex_values(mesh)
    dof_map = _dof_map(mesh)
    n = int(dof_map.max()) + 1
    points = np.asarray(mesh.vertices)[mesh.cells]
    cells = np.asarray(mesh.cells)

    K = _stiffness(points, cells, rho, (d - 2) / 2.0, dof_map, n)
    M_vol = _mass(points, cells, lambda c, b: (rho[c] @ b.T) ** (d / 2.0), dof_map, n, VOLUME_RULES)

    facets = np.asarray(mesh.boundary_facets)
    facet_points = np.asarray(mesh.vertices)[facets]
    boundary_exp = (d - 1) / 2.0
    M_area = _mass(facet_points, facets, lambda c, b: (rho[c] @ b.T) ** boundary_exp, dof_map, n, FACET_RULES)
    M_bnd = _mass(
        facet_points,
        facets,
        lambda c, b: (delta[c] @ b.T) * (rho[c] @ b.T) ** boundary_exp,
        dof_map,
        n,
        FACET_RULES,
    )

    sigma_area = float(M_area.sum())
    omega_volume = float(M_vol.sum())
    bundle = OperatorBundle(
        mesh=mesh,
        K=K,
        M_vol=M_vol,
        M_bnd=M_bnd,
        M_area=M_area,
        sigma_area=sigma_area,
        omega_volume=omega_volume,
        boundary_index=np.unique(dof_map[mesh.boundary_vertices]),
        n_bdim=d - 1,
        dof_map=dof_map,
        mean_density=float(M_bnd.sum()) / sigma_area,
    )
    logger.debug(
        "Assembled %d DOFs (%d on boundary): |Sigma|=%.6g, |Omega|=%.6g",
        n, len(bundle.boundary_index), sigma_area, omega_volume,
    )
    return bundle


def lb_operators(closed_mesh: SimplicialMesh, metric: MetricField) -> OperatorBundle:
    """Laplace-Beltrami stiffness and mass on a closed n-manifold mesh."""
    if not closed_mesh.is_closed:
        raise InvalidInputError("Laplace-Beltrami operators need a closed mesh")
    n_dim = closed_mesh.dim
    rho = metric.evaluate(closed_mesh.vertices)
    dof_map = _dof_map(closed_mesh)
    n = int(dof_map.max()) + 1
    cells = np.asarray(closed_mesh.cells)
    points = np.asarray(closed_mesh.vertices)[cells]

    K = _stiffness(points, cells, rho, (n_dim - 2) / 2.0, dof_map, n)
    M_vol = _mass(points, cells, lambda c, b: (rho[c] @ b.T) ** (n_dim / 2.0), dof_map, n, VOLUME_RULES)
    area = float(M_vol.sum())
    return OperatorBundle(
        mesh=closed_mesh,
        K=K,
        M_vol=M_vol,
        M_bnd=None,
        M_area=None,
        sigma_area=area,
        omega_volume=area,
        boundary_index=np.arange(n),
        n_bdim=n_dim,
        dof_map=dof_map,
    )


def dump_operator(matrix, path) -> Path:
    """Write ``row col value`` triplets, sorted by (row, col)."""
    path = Path(path)
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{int(coo.row[i])} {int(coo.col[i])} {float(coo.data[i])!r}" for i in order]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path

