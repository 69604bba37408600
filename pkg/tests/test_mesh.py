"""Shape functions, quadrature and Jacobian-quality metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from femmpm.errors import ConfigError, MeshError
from femmpm.mesh import (
    GaussRule,
    QuadMesh,
    det_jacobian,
    gauss_rule,
    jacobian_ratio,
    jacobian_ratios,
    read_mesh_snapshot,
    shape_functions,
    structured_grid,
    slope_grid,
    write_mesh_snapshot,
)

UNIT_QUAD = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class TestShapeFunctions:
    def test_center(self):
        np.testing.assert_allclose(shape_functions(0.0, 0.0), [0.25] * 4)

    def test_corner_identity(self):
        np.testing.assert_allclose(shape_functions(-1.0, -1.0), [1, 0, 0, 0])

    def test_hand_evaluated_point(self):
        # bilinear values at (0.5, -0.5)
        n = shape_functions(0.5, -0.5)
        np.testing.assert_allclose(n, [0.1875, 0.5625, 0.1875, 0.0625])
        assert n.sum() == pytest.approx(1.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            shape_functions(1.5, 0.0)
        with pytest.raises(ValueError):
            shape_functions(0.0, -1.01)

    def test_kronecker_delta(self):
        corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
        for k, (xi, eta) in enumerate(corners):
            n = shape_functions(xi, eta)
            expected = np.zeros(4)
            expected[k] = 1.0
            np.testing.assert_allclose(n, expected, atol=1e-15)

    @settings(max_examples=1000, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_partition_of_unity(self, xi, eta):
        n = shape_functions(xi, eta)
        assert abs(n.sum() - 1.0) < 1e-12
        assert np.all(n >= -1e-15) and np.all(n <= 1.0 + 1e-15)


def _legendre_roots_newton(order):
    """Independent Gauss-Legendre oracle: Newton iteration on P_n."""

    def legendre(n, x):
        p0, p1 = np.ones_like(x), x
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        return p1 if n > 0 else p0

    def dlegendre(n, x):
        return n * (x * legendre(n, x) - legendre(n - 1, x)) / (x ** 2 - 1.0)

    x = np.cos(np.pi * (np.arange(1, order + 1) - 0.25) / (order + 0.5))
    for _ in range(100):
        x = x - legendre(order, x) / dlegendre(order, x)
    w = 2.0 / ((1.0 - x ** 2) * dlegendre(order, x) ** 2)
    return np.sort(x), w[np.argsort(x)]


class TestGaussRule:
    def test_order_one(self):
        rule = gauss_rule(1)
        np.testing.assert_allclose(rule.points_1d, [0.0])
        np.testing.assert_allclose(rule.weights_1d, [2.0])

    def test_order_two(self):
        rule = gauss_rule(2)
        np.testing.assert_allclose(rule.points_1d, [-1 / np.sqrt(3), 1 / np.sqrt(3)])
        np.testing.assert_allclose(rule.weights_1d, [1.0, 1.0])

    def test_order_four_against_newton_oracle(self):
        rule = gauss_rule(4)
        x, w = _legendre_roots_newton(4)
        np.testing.assert_allclose(np.sort(rule.points_1d), x, atol=1e-14)
        np.testing.assert_allclose(w / 2.0, [0.1739274225687269, 0.3260725774312731,
                                             0.3260725774312731, 0.1739274225687269],
                                   atol=1e-14)
        np.testing.assert_allclose(np.sort(rule.weights_1d) / 2.0, np.sort(w) / 2.0,
                                   atol=1e-14)

    @pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
    def test_normalized_weights_sum_to_one(self, order):
        rule = gauss_rule(order)
        assert abs(rule.normalized_weights.sum() - 1.0) < 1e-14
        assert abs(rule.weights.sum() - 4.0) < 1e-13

    def test_unsupported_order(self):
        with pytest.raises(ConfigError):
            gauss_rule(7)


class TestJacobianRatio:
    def _single_element_mesh(self, coords):
        return QuadMesh(node_coords=coords, elements=[[0, 1, 2, 3]])

    def test_undeformed_is_unity(self):
        mesh = self._single_element_mesh(UNIT_QUAD)
        assert jacobian_ratio(mesh, 0) == pytest.approx(1.0)

    def test_inverted_element_is_negative(self):
        mesh = self._single_element_mesh(UNIT_QUAD)
        # swap two nodes across a diagonal
        mesh.node_coords[[1, 3]] = mesh.node_coords[[3, 1]]
        assert jacobian_ratio(mesh, 0) < 0.0

    def test_uniform_scaling_gives_area_ratio(self):
        mesh = self._single_element_mesh(UNIT_QUAD)
        mesh.node_coords[:] = 2.0 * mesh.node_coords
        assert jacobian_ratio(mesh, 0) == pytest.approx(4.0)

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(0)
        mesh = self._single_element_mesh(UNIT_QUAD + 0.1 * rng.random((4, 2)))
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        mesh.node_coords[:] = mesh.node_coords @ rot.T + np.array([3.0, -2.0])
        assert abs(jacobian_ratio(mesh, 0) - 1.0) < 1e-12

    def test_vectorized_matches_scalar(self):
        mesh = structured_grid(4.0, 3.0, 1.0)
        mesh.node_coords[:, 0] *= 1.3
        ratios = jacobian_ratios(mesh)
        for e in range(mesh.n_elements):
            assert ratios[e] == pytest.approx(jacobian_ratio(mesh, e))


class TestQuadMesh:
    def test_structured_grid_counts(self):
        mesh = structured_grid(4.0, 3.0, 0.5)
        assert mesh.n_elements == 8 * 6
        assert mesh.n_nodes == 9 * 7
        assert mesh.boundary_sets["base"].size == 9
        assert mesh.boundary_sets["surface"].size == 9
        assert mesh.boundary_sets["left"].size == 7

    def test_element_volumes(self):
        mesh = structured_grid(4.0, 3.0, 0.5)
        np.testing.assert_allclose(mesh.element_volumes(), 0.25)
        assert mesh.element_volumes().sum() == pytest.approx(12.0)

    def test_reference_coords_immutable(self):
        mesh = structured_grid(2.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            mesh.reference_coords[0, 0] = 5.0

    def test_duplicate_nodes_rejected(self):
        coords = np.vstack([UNIT_QUAD, UNIT_QUAD[0]])
        with pytest.raises(MeshError):
            QuadMesh(node_coords=coords, elements=[[0, 1, 2, 4]])

    def test_out_of_range_element_rejected(self):
        with pytest.raises(MeshError):
            QuadMesh(node_coords=UNIT_QUAD, elements=[[0, 1, 2, 7]])

    def test_inverted_reference_element_rejected(self):
        with pytest.raises(MeshError):
            QuadMesh(node_coords=UNIT_QUAD, elements=[[0, 3, 2, 1]])

    def test_integral_of_one_is_element_area(self):
        # raw weights integrate to 4 on the reference square, i.e. the area
        # of a 2x2 square; scaled by detJ they give the physical area.
        rule = gauss_rule(3)
        coords = np.array([[0, 0], [2, 0.2], [2.3, 1.9], [-0.1, 1.7]], dtype=float)
        dets = np.array([det_jacobian(coords, xi, eta) for xi, eta in rule.points])
        area = float(np.dot(dets, rule.weights))
        shoelace = 0.5 * abs(
            np.dot(coords[:, 0], np.roll(coords[:, 1], -1))
            - np.dot(np.roll(coords[:, 0], -1), coords[:, 1])
        )
        assert area == pytest.approx(shoelace, rel=1e-12)


class TestSlopeGrid:
    def test_slope_mesh_is_valid_and_tapers(self):
        mesh = slope_grid(height=20.0, run_per_rise=1.0, crest_length=20.0,
                          element_size=1.0)
        assert np.all(jacobian_ratios(mesh) > 0)
        # staircase keeps roughly crest + half the run in elements
        assert 580 <= mesh.n_elements <= 620
        ys = mesh.node_coords[mesh.boundary_sets["base"], 1]
        np.testing.assert_allclose(ys, 0.0, atol=1e-12)
        assert mesh.boundary_sets["surface"].size > 0

    def test_total_volume_close_to_polygon(self):
        mesh = slope_grid(height=10.0, run_per_rise=3.0, crest_length=15.0,
                          element_size=0.5)
        poly_area = 15.0 * 10.0 + 0.5 * 30.0 * 10.0
        assert mesh.element_volumes().sum() == pytest.approx(poly_area, rel=0.05)


class TestMeshSnapshot:
    def test_round_trip(self, tmp_path):
        mesh = structured_grid(3.0, 2.0, 1.0)
        mesh.node_coords[:, 1] += 0.1 * np.sin(mesh.node_coords[:, 0])
        path = tmp_path / "mesh.txt"
        write_mesh_snapshot(mesh, path)
        back = read_mesh_snapshot(path, reference_coords=mesh.reference_coords)
        np.testing.assert_array_equal(back.node_coords, mesh.node_coords)
        np.testing.assert_array_equal(back.elements, mesh.elements)
        for name, ids in mesh.boundary_sets.items():
            np.testing.assert_array_equal(back.boundary_sets[name], ids)
