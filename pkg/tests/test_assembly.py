import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

from steklab.assembly import FACET_RULES, VOLUME_RULES, assemble, dump_operator, lb_operators
from steklab.errors import InvalidInputError
from steklab.mesh import (
    BoundaryDensity,
    FlatCylinder,
    MetricField,
    UnitBall,
    UnitDisk,
    boundary_of,
    make_domain,
)


class TestQuadratureRules:
    def test_weights_sum_to_one(self):
        """Test every quadrature rule has unit weight."""
        for rules in (VOLUME_RULES, FACET_RULES):
            for points, weights in rules.values():
                assert math.isclose(float(np.sum(weights)), 1.0, rel_tol=1e-12)
                assert np.allclose(points.sum(axis=1), 1.0)

    def test_facet_rules_integrate_cubics(self):
        """int_e l0^2 l1 = 2!1!/(4!) |e| on a segment; the rules must be exact for it."""
        points, weights = FACET_RULES[1]
        assert math.isclose(float(weights @ (points[:, 0] ** 2 * points[:, 1])), 2.0 / 24.0, rel_tol=1e-12)
        points, weights = FACET_RULES[2]
        # on a triangle int l0^2 l1 = 2! 1! 2! / 5! |T|
        assert math.isclose(float(weights @ (points[:, 0] ** 2 * points[:, 1])), 4.0 / 120.0, rel_tol=1e-9)


class TestAssembleDisk:
    """Operators of the planar disk."""

    def setup_method(self):
        self.mesh = make_domain(UnitDisk(refinement=2))
        self.density = BoundaryDensity.uniform(self.mesh)
        self.ops = assemble(self.mesh, MetricField.euclidean(), self.density)

    def test_stiffness_kills_constants(self):
        """Test K is symmetric with constants in its kernel."""
        ones = np.ones(self.ops.n_dofs)
        assert np.max(np.abs(self.ops.K @ ones)) < 1e-12
        assert abs(self.ops.K - self.ops.K.T).max() == 0.0

    def test_geometry_matches_mesh(self):
        """Test assembled measures match the mesh."""
        assert math.isclose(self.ops.sigma_area, self.mesh.boundary_length_or_area(), rel_tol=1e-12)
        assert math.isclose(self.ops.omega_volume, float(np.sum(self.mesh.cell_volumes())), rel_tol=1e-12)
        assert abs(self.ops.sigma_area - 2.0 * math.pi) < 0.05
        assert self.ops.n_bdim == 1
        assert math.isclose(self.ops.mean_density, 1.0, rel_tol=1e-12)

    def test_boundary_and_interior_split(self):
        """Test boundary and interior DOFs partition the unknowns."""
        assert len(self.ops.boundary_index) == len(self.mesh.boundary_vertices)
        assert len(self.ops.boundary_index) + len(self.ops.interior_index) == self.ops.n_dofs

    def test_density_scales_boundary_mass(self):
        """Test density scales M_bnd only."""
        scaled = assemble(self.mesh, MetricField.euclidean(), self.density.scaled(3.0))

        assert np.allclose(scaled.M_bnd.toarray(), 3.0 * self.ops.M_bnd.toarray())
        assert np.allclose(scaled.M_area.toarray(), self.ops.M_area.toarray())
        assert math.isclose(scaled.mean_density, 3.0, rel_tol=1e-12)

    def test_planar_stiffness_ignores_conformal_factor(self):
        """Test the planar stiffness does not see the conformal factor."""
        exponent = -np.linalg.norm(self.mesh.vertices, axis=1)
        conformal = assemble(self.mesh, MetricField.exponential(exponent), self.density)

        assert abs(conformal.K - self.ops.K).max() == 0.0
        assert conformal.omega_volume < self.ops.omega_volume

    def test_to_dofs_checks_length(self):
        """Test vertex and DOF vectors convert both ways."""
        with pytest.raises(InvalidInputError):
            self.ops.to_dofs(np.ones(3))
        values = np.arange(self.mesh.n_vertices, dtype=float)
        assert np.array_equal(self.ops.to_vertices(self.ops.to_dofs(values)), values)

    def test_closed_mesh_rejected(self):
        """Test closed meshes have no Steklov operators."""
        with pytest.raises(InvalidInputError):
            assemble(boundary_of(self.mesh), MetricField.euclidean(), self.density)


class TestAssembleOtherDomains:
    def test_spherical_cap_measures(self):
        """Stereographic unit disk = hemisphere: area 2 pi, equator length 2 pi."""
        mesh = make_domain(UnitDisk(refinement=3))
        ops = assemble(mesh, MetricField.spherical(), BoundaryDensity.uniform(mesh))

        assert abs(ops.omega_volume - 2.0 * math.pi) / (2.0 * math.pi) < 0.02
        assert abs(ops.sigma_area - 2.0 * math.pi) / (2.0 * math.pi) < 0.02

    def test_cylinder_merges_seam(self):
        """Test periodic vertices share one DOF."""
        mesh = make_domain(FlatCylinder(2.0 * math.pi, 2.0, refinement=0))
        ops = assemble(mesh, MetricField.euclidean(), BoundaryDensity.uniform(mesh))

        assert ops.n_dofs == mesh.n_vertices - len(mesh.periodic_pairs)
        assert math.isclose(ops.sigma_area, 4.0 * math.pi, rel_tol=1e-12)
        assert math.isclose(ops.omega_volume, 4.0 * math.pi, rel_tol=1e-12)
        assert np.max(np.abs(ops.K @ np.ones(ops.n_dofs))) < 1e-12
        assert ops.component_indicators().shape == (ops.n_dofs, 1)

    def test_ball(self):
        """Test ball operators and measures."""
        mesh = make_domain(UnitBall(refinement=1))
        ops = assemble(mesh, MetricField.euclidean(), BoundaryDensity.uniform(mesh))

        assert ops.n_bdim == 2
        assert np.max(np.abs(ops.K @ np.ones(ops.n_dofs))) < 1e-12
        assert 0.5 * 4.0 * math.pi / 3.0 < ops.omega_volume < 4.0 * math.pi / 3.0
        assert 0.5 * 4.0 * math.pi < ops.sigma_area < 4.0 * math.pi


class TestLaplaceBeltramiOperators:
    def test_circle_operators(self):
        """Test the circle Laplace operators."""
        disk = make_domain(UnitDisk(refinement=2))
        curve = boundary_of(disk)
        ops = lb_operators(curve, MetricField.euclidean())

        assert ops.M_bnd is None
        assert ops.n_bdim == 1
        assert ops.sigma_area == ops.omega_volume
        assert math.isclose(ops.sigma_area, disk.boundary_length_or_area(), rel_tol=1e-12)
        assert np.max(np.abs(ops.K @ np.ones(ops.n_dofs))) < 1e-12

    def test_open_mesh_rejected(self):
        """Test Laplace-Beltrami operators need a closed mesh."""
        with pytest.raises(InvalidInputError):
            lb_operators(make_domain(UnitDisk(refinement=1)), MetricField.euclidean())


class TestDumpOperator:
    def test_sorted_triplets(self):
        """Test operators dump as sorted triplets."""
        matrix = sparse.csr_matrix(np.array([[2.0, 0.0], [-1.0, 0.5]]))
        with tempfile.TemporaryDirectory() as temp_dir:
            path = dump_operator(matrix, Path(temp_dir) / "K.txt")
            lines = path.read_text().splitlines()

        assert lines == ["0 0 2.0", "1 0 -1.0", "1 1 0.5"]
