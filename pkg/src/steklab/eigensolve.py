"""Dirichlet-to-Neumann reduction and dense generalized eigensolves.

Eigenvalues are indexed from 1 with sigma_1 = 0 (the constant mode), in
every result and every report.
"""

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as la
from scipy import sparse
from scipy.sparse.linalg import cg, splu

from .analytic import normalized_laplace, normalized_quantities
from .assembly import OperatorBundle, assemble, lb_operators
from .errors import (
    InvalidAnnulusError,
    InvalidDensityError,
    InvalidFamilyError,
    InvalidInputError,
    SolverFailureError,
    SpectrumTruncationWarning,
    UndefinedQuotientError,
)
from .mesh import BoundaryDensity, MetricField, SimplicialMesh

try:
    from sksparse.cholmod import CholmodError
    from sksparse.cholmod import cholesky as cholmod_cholesky
    CHOLMOD_AVAILABLE = True
except ImportError:
    CHOLMOD_AVAILABLE = False

logger = logging.getLogger(__name__)

INTERIOR_RTOL = 1e-12
B_DEFLATION_RTOL = 1e-12
RESIDUAL_RTOL = 1e-9
INDEX_CONVENTION = "1-based, sigma_1 = 0 (constant mode)"
SOLVERS = ("auto", "splu", "cholmod", "cg")


class SpectrumKind(str, Enum):
    STEKLOV = "steklov"
    LAPLACE = "laplace"


class EigenPairs(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray


def group_multiplicities(values: Sequence[float], tolerance: float) -> List[int]:
    """Sizes of runs of sorted values whose consecutive gaps are <= tolerance."""
    counts: List[int] = []
    previous = None
    for value in values:
        if previous is not None and value - previous <= tolerance:
            counts[-1] += 1
        else:
            counts.append(1)
        previous = value
    return counts


@dataclass
class SpectrumResult:
    kind: SpectrumKind
    raw: List[float]
    normalized: List[float]
    k_count: int
    geometry: Dict[str, float]
    solver_info: Dict = field(default_factory=dict)
    eigenfunctions: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def multiplicities(self) -> List[int]:
        return list(self.solver_info.get("multiplicities", []))

    def to_dict(self) -> Dict:
        return {
            "kind": SpectrumKind(self.kind).value,
            "index_convention": INDEX_CONVENTION,
            "k_count": self.k_count,
            "raw": [float(v) for v in self.raw],
            "normalized": [float(v) for v in self.normalized],
            "geometry": {key: self.geometry[key] for key in sorted(self.geometry)},
            "solver_info": {key: self.solver_info[key] for key in sorted(self.solver_info)},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SpectrumResult":
        try:
            return cls(
                kind=SpectrumKind(data["kind"]),
                raw=[float(v) for v in data["raw"]],
                normalized=[float(v) for v in data["normalized"]],
                k_count=int(data["k_count"]),
                geometry=dict(data["geometry"]),
                solver_info=dict(data.get("solver_info", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"malformed spectrum record: {e}") from e


# ---------------------------------------------------------------------------
# Interior solves


def _factorize(K_ii: sparse.csc_matrix, solver: str) -> Callable[[np.ndarray], np.ndarray]:
    if solver == "cholmod" and not CHOLMOD_AVAILABLE:
        raise InvalidInputError("scikit-sparse is not installed. Install with: pip install steklab[cholmod]")
    if solver == "cholmod" or (solver == "auto" and CHOLMOD_AVAILABLE):
        try:
            factor = cholmod_cholesky(K_ii)
        except CholmodError as e:
            raise SolverFailureError(f"interior block is not positive definite: {e}") from e
        return factor

    if solver in ("auto", "splu"):
        try:
            lu = splu(
                K_ii,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as e:
            raise SolverFailureError(f"interior factorization failed: {e}") from e
        pivots = lu.U.diagonal()
        if np.any(pivots <= 0):
            bad = int(np.argmax(pivots <= 0))
            raise SolverFailureError(f"interior block is indefinite: pivot {bad} = {pivots[bad]:.3g}")
        return lu.solve

    diagonal = K_ii.diagonal()
    if np.any(diagonal <= 0):
        raise SolverFailureError("interior block has a non-positive diagonal")
    jacobi = sparse.diags(1.0 / diagonal)

    def solve(rhs: np.ndarray) -> np.ndarray:
        columns = np.asarray(rhs, dtype=float).reshape(K_ii.shape[0], -1)
        out = np.zeros_like(columns)
        for j in range(columns.shape[1]):
            if not np.any(columns[:, j]):
                continue
            x, info = cg(K_ii, columns[:, j], rtol=INTERIOR_RTOL, atol=0.0, M=jacobi, maxiter=10 * K_ii.shape[0])
            if info != 0:
                raise SolverFailureError(f"conjugate gradients did not converge for column {j} after {info} iterations")
            out[:, j] = x
        return out.reshape(np.shape(rhs))

    return solve


def solve_interior(K_ii, rhs: np.ndarray, solver: str = "auto") -> np.ndarray:
    """K_ii^{-1} rhs with one step of iterative refinement."""
    if solver not in SOLVERS:
        raise InvalidInputError(f"unknown solver {solver!r}; choose from {', '.join(SOLVERS)}")
    K_ii = sparse.csc_matrix(K_ii)
    solve = _factorize(K_ii, solver)
    x = np.asarray(solve(rhs))
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return x
    residual = rhs - K_ii @ x
    if np.linalg.norm(residual) > INTERIOR_RTOL * scale:
        x = x + np.asarray(solve(residual))
        logger.debug("Interior solve refined: residual %.3g", np.linalg.norm(rhs - K_ii @ x) / scale)
    return x


def _schur(ops: OperatorBundle, solver: str):
    b = ops.boundary_index
    i = ops.interior_index
    K = ops.K.tocsr()
    K_bb = K[b][:, b].toarray()
    if len(i) == 0:
        return K_bb, np.zeros((0, len(b)))
    K_ib = K[i][:, b].toarray()
    extension = solve_interior(K[i][:, i], K_ib, solver)
    S = K_bb - K_ib.T @ extension
    return 0.5 * (S + S.T), extension


def schur_dtn(ops: OperatorBundle, solver: str = "auto") -> np.ndarray:
    """Dense discrete DtN map S = K_bb - K_bi K_ii^{-1} K_ib on ``boundary_index``."""
    return _schur(ops, solver)[0]


# ---------------------------------------------------------------------------
# Generalized symmetric eigenproblems


def generalized_sym_eig(A, B, k: int) -> EigenPairs:
    """Lowest k pairs of A x = sigma B x for symmetric A and PSD B.

    Rows of B below ``1e-12 trace(B)/n`` are eliminated exactly (their
    unknowns follow from the A-rows), eigen-directions of B at or below the
    same threshold are dropped, and the rest goes through a Cholesky
    congruence. A pair whose relative residual exceeds ``RESIDUAL_RTOL``
    raises ``SolverFailureError``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape != (n, n):
        raise InvalidInputError("A and B must be square matrices of the same size")
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    trace = float(np.trace(B))
    if not trace > 0:
        raise InvalidInputError("B is numerically zero")
    tol_B = B_DEFLATION_RTOL * trace / n

    zero = np.max(np.abs(B), axis=1) <= tol_B
    keep = ~zero
    if zero.any():
        A_00 = A[np.ix_(zero, zero)]
        A_0r = A[np.ix_(zero, keep)]
        try:
            elimination = la.solve(A_00, A_0r, assume_a="sym")
        except la.LinAlgError as e:
            raise SolverFailureError(f"eliminated block is singular: {e}") from e
        A_red = A[np.ix_(keep, keep)] - A_0r.T @ elimination
        B_red = B[np.ix_(keep, keep)]
    else:
        elimination = np.zeros((0, n))
        A_red, B_red = A, B
    A_red = 0.5 * (A_red + A_red.T)
    B_red = 0.5 * (B_red + B_red.T)

    w, V = la.eigh(B_red)
    retained = w > tol_B
    basis = None
    if retained.all():
        try:
            chol = la.cholesky(B_red, lower=True)
        except la.LinAlgError:
            basis = V
    else:
        logger.info("Deflating %d degenerate direction(s) of B", int(np.count_nonzero(~retained)))
        basis = V[:, retained]
    if basis is not None:
        A_red = basis.T @ A_red @ basis
        chol = np.diag(np.sqrt(w[retained]))

    m = A_red.shape[0]
    if m == 0:
        raise InvalidInputError("B has no non-degenerate directions")
    count = min(k, m)
    if k > m:
        warnings.warn(
            f"requested {k} eigenpairs but the deflated problem has dimension {m}",
            SpectrumTruncationWarning,
            stacklevel=2,
        )
    half = la.solve_triangular(chol, A_red, lower=True)
    congruent = la.solve_triangular(chol, half.T, lower=True)
    congruent = 0.5 * (congruent + congruent.T)
    values, Y = la.eigh(congruent, subset_by_index=[0, count - 1])
    X = la.solve_triangular(chol.T, Y, lower=False)
    if basis is not None:
        X = basis @ X

    vectors = np.zeros((n, count))
    vectors[keep] = X
    vectors[zero] = -elimination @ X
    norm_A = np.linalg.norm(A, 1)
    norm_B = np.linalg.norm(B, 1)
    defect = A @ vectors - (B @ vectors) * values
    if basis is not None:
        # measured on the retained subspace
        defect = np.vstack([defect[zero], basis.T @ defect[keep]])
    relative = np.linalg.norm(defect, axis=0) / (norm_A + np.abs(values) * norm_B)
    if np.any(relative > RESIDUAL_RTOL):
        raise SolverFailureError(f"eigen residual {float(relative.max()):.3g} exceeds {RESIDUAL_RTOL:.1g}")
    return EigenPairs(values=values, vectors=vectors, residuals=relative)


def _clamp(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    scale = max(1.0, float(np.max(np.abs(values)))) if len(values) else 1.0
    values[(values < 0) & (values >= -1e-10 * scale)] = 0.0
    return values


def _solver_info(method: str, pairs: EigenPairs, values: np.ndarray) -> Dict:
    tolerance = 1e-6 * max(1.0, float(values[-1]))
    return {
        "method": method,
        "residual_norms": [float(r) for r in pairs.residuals],
        "dedup_tolerance": tolerance,
        "multiplicities": group_multiplicities(values, tolerance),
    }


def steklov_from_operators(ops: OperatorBundle, k: int, solver: str = "auto") -> SpectrumResult:
    """Steklov spectrum of an assembled bundle through the boundary Schur complement."""
    if ops.M_bnd is None:
        raise InvalidInputError("bundle has no boundary mass; use laplace_spectrum")
    S, extension = _schur(ops, solver)
    b = ops.boundary_index
    B = ops.M_bnd.tocsr()[b][:, b].toarray()
    pairs = generalized_sym_eig(S, B, k)
    raw = _clamp(pairs.values)

    dof_vectors = np.zeros((ops.n_dofs, len(raw)))
    dof_vectors[b] = pairs.vectors
    dof_vectors[ops.interior_index] = -extension @ pairs.vectors

    quantities = normalized_quantities(raw, ops.sigma_area, ops.omega_volume, ops.n_bdim, ops.mean_density)
    method = "schur+" + (("cholmod" if CHOLMOD_AVAILABLE else "splu") if solver == "auto" else solver)
    logger.info("Steklov spectrum: %d values, sigma_2 = %s", len(raw), f"{raw[1]:.6g}" if len(raw) > 1 else "n/a")
    return SpectrumResult(
        kind=SpectrumKind.STEKLOV,
        raw=[float(v) for v in raw],
        normalized=quantities.normalized,
        k_count=len(raw),
        geometry={
            "sigma_area": ops.sigma_area,
            "omega_volume": ops.omega_volume,
            "n_bdim": ops.n_bdim,
            "mean_density": ops.mean_density,
        },
        solver_info=_solver_info(method, pairs, raw),
        eigenfunctions=ops.to_vertices(dof_vectors),
    )


def steklov_spectrum(
    mesh: SimplicialMesh,
    metric: MetricField,
    density: BoundaryDensity,
    k: int,
    solver: str = "auto",
    allow_deflation: bool = False,
) -> SpectrumResult:
    """Assemble, reduce to the boundary, and solve for the first k Steklov eigenvalues."""
    if not allow_deflation and not density.strictly_positive:
        raise InvalidDensityError("density vanishes at a boundary vertex; pass allow_deflation=True to deflate")
    return steklov_from_operators(assemble(mesh, metric, density), k, solver)


def laplace_spectrum(closed_mesh: SimplicialMesh, metric: MetricField, k: int) -> SpectrumResult:
    """First k Laplace-Beltrami eigenvalues of a closed mesh."""
    ops = lb_operators(closed_mesh, metric)
    pairs = generalized_sym_eig(ops.K.toarray(), ops.M_vol.toarray(), k)
    raw = _clamp(pairs.values)
    return SpectrumResult(
        kind=SpectrumKind.LAPLACE,
        raw=[float(v) for v in raw],
        normalized=normalized_laplace(raw, ops.sigma_area, ops.n_bdim),
        k_count=len(raw),
        geometry={
            "sigma_area": ops.sigma_area,
            "omega_volume": ops.omega_volume,
            "n_bdim": ops.n_bdim,
            "mean_density": 1.0,
        },
        solver_info=_solver_info("dense-cholesky", pairs, raw),
        eigenfunctions=ops.to_vertices(pairs.vectors),
    )


def full_space_steklov(ops: OperatorBundle, k: int) -> EigenPairs:
    """K u = sigma M_bnd u on all DOFs; interior unknowns are eliminated exactly."""
    if ops.M_bnd is None:
        raise InvalidInputError("bundle has no boundary mass")
    pairs = generalized_sym_eig(ops.K.toarray(), ops.M_bnd.toarray(), k)
    return pairs._replace(values=_clamp(pairs.values))


# ---------------------------------------------------------------------------
# Rayleigh quotients and min-max bounds


def rayleigh_quotient(ops: OperatorBundle, f) -> float:
    """f^T K f / f^T M_bnd f for per-vertex values f."""
    if ops.M_bnd is None:
        raise InvalidInputError("bundle has no boundary mass")
    u = ops.to_dofs(f)
    denominator = float(u @ (ops.M_bnd @ u))
    if denominator <= 0.0:
        raise UndefinedQuotientError("function vanishes on the boundary (zero boundary norm)")
    numerator = float(u @ (ops.K @ u))
    return max(numerator, 0.0) / denominator


def build_plateau(mesh: SimplicialMesh, center, r: float, R: float) -> np.ndarray:
    """1 on the annulus r <= |x - center| <= R, linear to 0 at r/2 and at 2R."""
    r, R = float(r), float(R)
    if r < 0 or not r < R:
        raise InvalidAnnulusError(f"annulus needs 0 <= r < R, got r={r}, R={R}")
    center = np.asarray(center, dtype=float)
    if center.shape != (mesh.embed_dim,):
        raise InvalidInputError(f"center must have {mesh.embed_dim} coordinates")
    distance = np.linalg.norm(np.asarray(mesh.vertices) - center, axis=1)
    values = np.ones(mesh.n_vertices)
    if r > 0:
        inner = distance < r
        values[inner] = np.clip((distance[inner] - r / 2.0) / (r / 2.0), 0.0, 1.0)
    if np.isfinite(R):
        outer = distance > R
        values[outer] = np.clip((2.0 * R - distance[outer]) / R, 0.0, 1.0)
    return values


def minmax_upper_bound(ops: OperatorBundle, plateau_family: Sequence) -> float:
    """max_j R(f_j) for functions whose supports share no cell; bounds sigma_k, k = len(family)."""
    if len(plateau_family) == 0:
        raise InvalidFamilyError("empty test-function family")
    supports = []
    cells = np.asarray(ops.mesh.cells)
    for f in plateau_family:
        u = ops.to_vertices(ops.to_dofs(f))
        supports.append(np.any(u[cells] != 0.0, axis=1))
    touched = np.sum(np.vstack(supports), axis=0)
    if np.any(touched > 1):
        raise InvalidFamilyError(f"supports overlap on {int(np.sum(touched > 1))} cell(s)")
    return max(rayleigh_quotient(ops, f) for f in plateau_family)
