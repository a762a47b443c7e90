"""Mesh construction, quadrature and gradient operators."""

import numpy as np
import pytest

from tvheat import (Annulus, Field, Interval, MeshError, Rectangle,
                    build_mesh, load_field)


class TestDomains:
    def test_interval_measure(self):
        d = Interval(2.5)
        assert d.measure == 2.5
        assert d.diameter == 2.5

    def test_interval_rejects_nonpositive_length(self):
        with pytest.raises(MeshError):
            Interval(0.0)
        with pytest.raises(MeshError):
            Interval(-1.0)

    def test_annulus_measure_2d(self):
        d = Annulus(1.0, 2.0, dim=2)
        assert d.measure == pytest.approx(np.pi * (4.0 - 1.0))

    def test_annulus_measure_3d(self):
        d = Annulus(1.0, 2.0, dim=3)
        assert d.measure == pytest.approx(4.0 * np.pi / 3.0 * (8.0 - 1.0))

    def test_annulus_rejects_bad_radii(self):
        with pytest.raises(MeshError):
            Annulus(2.0, 1.0)
        with pytest.raises(MeshError):
            Annulus(0.0, 1.0)
        with pytest.raises(MeshError):
            Annulus(1.0, 2.0, dim=1)

    def test_rectangle_measure(self):
        assert Rectangle(2.0, 3.0).measure == pytest.approx(6.0)
        with pytest.raises(MeshError):
            Rectangle(0.0, 1.0)


class TestIntervalMesh:
    def test_quadrature_reproduces_measure(self):
        mesh = build_mesh(Interval(1.5), 37)
        assert mesh.quad_weights.sum() == pytest.approx(1.5, rel=1e-13)
        assert mesh.integrate(np.ones(mesh.n_nodes)) == pytest.approx(1.5)

    def test_quadrature_linear_moment(self):
        mesh = build_mesh(Interval(1.0), 64)
        x = mesh.nodes[:, 0]
        assert mesh.integrate(x) == pytest.approx(0.5, rel=1e-12)

    def test_gradient_exact_on_affine(self):
        mesh = build_mesh(Interval(2.0), 25)
        vals = 3.0 * mesh.nodes[:, 0] - 1.0
        g = mesh.gradient(vals)
        assert np.allclose(g[:, 0], 3.0, atol=1e-12)

    def test_boundary_structure(self):
        mesh = build_mesh(Interval(1.0), 10)
        assert len(mesh.boundary_nodes) == 2
        assert np.allclose(mesh.boundary_normals, [[-1.0], [1.0]])
        assert mesh.boundary_integrate(np.ones(2)) == pytest.approx(2.0)

    def test_validate(self):
        build_mesh(Interval(1.0), 50).validate()

    def test_resolution_too_small(self):
        with pytest.raises(MeshError):
            build_mesh(Interval(1.0), 1)


class TestAnnulusMesh:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_quadrature_reproduces_measure(self, dim):
        dom = Annulus(1.0, 2.0, dim=dim)
        mesh = build_mesh(dom, 80)
        assert mesh.quad_weights.sum() == pytest.approx(dom.measure,
                                                        rel=1e-12)

    def test_quadrature_exact_for_hats(self):
        # the weighted 1d rule integrates r^(N-1) times a hat exactly, so
        # int r dr over the annulus (a nodal linear function) is exact
        mesh = build_mesh(Annulus(1.0, 2.0, dim=2), 16)
        r = mesh.nodes[:, 0]
        exact = 2.0 * np.pi * (2.0 ** 3 - 1.0) / 3.0
        assert mesh.integrate(r) == pytest.approx(exact, rel=1e-12)

    def test_boundary_weights_are_sphere_areas(self):
        dom = Annulus(0.5, 3.0, dim=3)
        mesh = build_mesh(dom, 40)
        ones = np.ones(len(mesh.boundary_nodes))
        expected = 4.0 * np.pi * (0.5 ** 2 + 3.0 ** 2)
        assert mesh.boundary_integrate(ones) == pytest.approx(expected)

    def test_gradient_exact_on_affine(self):
        mesh = build_mesh(Annulus(1.0, 2.0, dim=2), 30)
        vals = -2.0 * mesh.nodes[:, 0] + 5.0
        assert np.allclose(mesh.gradient(vals)[:, 0], -2.0, atol=1e-12)

    def test_validate(self):
        build_mesh(Annulus(1.0, 2.0, dim=2), 25).validate()


class TestRectangleMesh:
    def test_quadrature_reproduces_measure(self):
        mesh = build_mesh(Rectangle(2.0, 1.0), [16, 8])
        assert mesh.quad_weights.sum() == pytest.approx(2.0, rel=1e-12)

    def test_gradient_exact_on_affine(self):
        mesh = build_mesh(Rectangle(1.0, 1.0), [9, 9])
        vals = 2.0 * mesh.nodes[:, 0] - 3.0 * mesh.nodes[:, 1] + 1.0
        g = mesh.gradient(vals)
        assert np.allclose(g[:, 0], 2.0, atol=1e-12)
        assert np.allclose(g[:, 1], -3.0, atol=1e-12)

    def test_boundary_perimeter(self):
        mesh = build_mesh(Rectangle(2.0, 1.0), [20, 10])
        ones = np.ones(len(mesh.boundary_nodes))
        assert mesh.boundary_integrate(ones) == pytest.approx(6.0, rel=1e-12)

    def test_validate(self):
        build_mesh(Rectangle(1.0, 1.0), [7, 7]).validate()


class TestField:
    def test_constrained_zeroes_boundary(self):
        mesh = build_mesh(Interval(1.0), 20)
        f = Field(mesh, np.ones(mesh.n_nodes)).constrained()
        assert f.is_dirichlet()
        assert np.all(f.values[mesh.boundary_nodes] == 0.0)
        assert np.all(f.values[mesh.interior_mask] == 1.0)

    def test_from_function(self):
        mesh = build_mesh(Interval(1.0), 30)
        f = Field.from_function(mesh, lambda x: x ** 2)
        assert np.allclose(f.values, mesh.nodes[:, 0] ** 2)

    def test_shape_mismatch_rejected(self):
        mesh = build_mesh(Interval(1.0), 10)
        with pytest.raises(MeshError):
            Field(mesh, np.zeros(3))

    def test_norms(self):
        mesh = build_mesh(Interval(1.0), 100)
        f = Field(mesh, np.full(mesh.n_nodes, 2.0))
        assert f.sup() == 2.0
        assert f.l2() == pytest.approx(2.0, rel=1e-12)

    def test_gradient_rejects_wrong_size(self):
        mesh = build_mesh(Interval(1.0), 10)
        with pytest.raises(MeshError):
            mesh.gradient(np.zeros(4))


class TestDumpLoad:
    def test_roundtrip(self, tmp_path):
        mesh = build_mesh(Interval(1.0), 15)
        vals = np.sin(np.pi * mesh.nodes[:, 0])
        path = tmp_path / "state.txt"
        mesh.dump(path, vals)
        f = load_field(path, mesh)
        assert np.allclose(f.values, vals, atol=1e-14)

    def test_wrong_mesh_rejected(self, tmp_path):
        mesh = build_mesh(Interval(1.0), 15)
        other = build_mesh(Interval(1.0), 16)
        path = tmp_path / "state.txt"
        mesh.dump(path, np.zeros(mesh.n_nodes))
        with pytest.raises(MeshError):
            load_field(path, other)
