"""State transfer: nodal interpolation, RBF fits, volume/mass bookkeeping."""

import numpy as np
import pytest

from femmpm.errors import EntanglementError, TransferError
from femmpm.fem import FemPhaseConfig, geostatic_solve, initial_state
from femmpm.materials import MaterialParams
from femmpm.mesh import gauss_rule, structured_grid
from femmpm.transfer import (
    RbfInterpolator,
    TransferBundle,
    TransferConfig,
    auto_shape_parameter,
    execute_transfer,
    fem_gauss_positions,
    interpolate_nodal,
    partition_volume_mass,
    rbf_eval,
    rbf_fit,
)

ELASTIC = MaterialParams(mass_density=1700.0, youngs_modulus=23.8e6,
                         poissons_ratio=0.23)


@pytest.fixture(scope="module")
def geostatic_column():
    """4 m x 4 m elastic column, 0.25 m single-point elements, relaxed."""
    mesh = structured_grid(4.0, 4.0, 0.25)
    config = FemPhaseConfig(gauss_order=1)
    state = geostatic_solve(mesh, ELASTIC, config)
    return mesh, state, config


class TestInterpolateNodal:
    def test_constant_field(self):
        assert interpolate_nodal([3.0, 3.0, 3.0, 3.0], 0.3, -0.7) == pytest.approx(3.0)

    def test_corner_kronecker(self):
        assert interpolate_nodal([1.0, 2.0, 3.0, 4.0], 1.0, 1.0) == pytest.approx(3.0)

    def test_center_average(self):
        assert interpolate_nodal([0.0, 1.0, 2.0, 1.0], 0.0, 0.0) == pytest.approx(1.0)

    def test_vector_values(self):
        vals = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(interpolate_nodal(vals, 0.0, 0.0), [0.5, 0.5])


class TestRbf:
    def test_single_center(self):
        lam, _ = rbf_fit(np.array([[1.0, 2.0]]), np.array([5.0]), 1.0)
        assert lam[0] == pytest.approx(5.0)

    def test_symmetric_two_centers(self):
        centers = np.array([[-1.0, 0.0], [1.0, 0.0]])
        lam, _ = rbf_fit(centers, np.array([7.0, 7.0]), 0.8)
        assert lam[0] == pytest.approx(lam[1])

    def test_duplicate_centers_rejected(self):
        with pytest.raises(TransferError):
            RbfInterpolator(np.array([[0.0, 0.0], [0.0, 0.0]]), 1.0)

    def test_eval_at_center_reproduces_value(self):
        rng = np.random.default_rng(5)
        centers = rng.uniform(0, 4, (40, 2))
        vals = np.sin(centers[:, 0]) + centers[:, 1] ** 2
        lam, interp = rbf_fit(centers, vals)
        back = interp.evaluate(lam, centers)
        assert np.max(np.abs(back - vals)) < 1e-8 * np.abs(vals).max()

    def test_rbf_eval_function_matches_class(self):
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.5]])
        vals = np.array([1.0, -2.0, 0.5])
        lam, interp = rbf_fit(centers, vals, 0.9)
        pts = np.array([[0.2, 0.3], [0.8, 0.9]])
        np.testing.assert_allclose(rbf_eval(lam, centers, pts, 0.9),
                                   interp.evaluate(lam, pts))

    def test_constant_field_nearly_constant_on_hull(self):
        # multiquadrics reproduce constants only approximately; the bounds
        # below were measured with this oracle (worst case at hull corners)
        xs, ys = np.meshgrid(np.linspace(0, 3, 7), np.linspace(0, 3, 7))
        centers = np.column_stack([xs.ravel(), ys.ravel()])
        lam, interp = rbf_fit(centers, np.full(centers.shape[0], 4.2))
        qx, qy = np.meshgrid(np.linspace(0, 3, 61), np.linspace(0, 3, 61))
        query = np.column_stack([qx.ravel(), qy.ravel()])
        rel = np.abs(interp.evaluate(lam, query) - 4.2) / 4.2
        assert rel.max() < 0.01
        inner = np.all((query >= 0.5) & (query <= 2.5), axis=1)
        assert rel[inner].max() < 0.005

    def test_linear_in_depth_field(self, geostatic_column):
        mesh, state, config = geostatic_column
        centers = fem_gauss_positions(mesh, config.gauss_order)
        vals = state.gauss.stress[:, 1]
        lam, interp = rbf_fit(centers, vals)
        back = interp.evaluate(lam, centers)
        assert np.max(np.abs(back - vals)) < 1e-8 * np.abs(vals).max()

    def test_auto_shape_is_typical_spacing(self):
        xs, ys = np.meshgrid(np.arange(0, 10), np.arange(0, 10))
        centers = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
        assert auto_shape_parameter(centers) == pytest.approx(0.9, rel=0.01)


class TestPartition:
    SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

    def test_two_by_two_equal_quarters(self):
        vp, mp = partition_volume_mass(self.SQUARE, self.SQUARE, 1700.0,
                                       TransferConfig(particles_per_axis=2))
        np.testing.assert_allclose(vp, 0.25)
        np.testing.assert_allclose(mp, 1700.0 * 0.25)

    def test_sixteen_particles_sum_to_volume(self):
        vp, _ = partition_volume_mass(self.SQUARE, self.SQUARE, 1700.0,
                                      TransferConfig(particles_per_axis=4))
        assert vp.size == 16
        assert abs(vp.sum() - 1.0) < 1e-14

    def test_mass_tracks_undeformed_volume(self):
        squeezed = self.SQUARE * np.array([1.0, 0.9])
        vp, mp = partition_volume_mass(squeezed, self.SQUARE, 1700.0,
                                       TransferConfig(particles_per_axis=4))
        assert vp.sum() == pytest.approx(0.9, rel=1e-12)
        assert mp.sum() == pytest.approx(1700.0, rel=1e-12)

    def test_inverted_element_refused(self):
        flipped = self.SQUARE[::-1]
        with pytest.raises(TransferError):
            partition_volume_mass(flipped, self.SQUARE, 1700.0,
                                  TransferConfig(particles_per_axis=2))


class TestExecuteTransfer:
    def test_uniform_single_element(self):
        mesh = structured_grid(1.0, 1.0, 1.0)
        config = FemPhaseConfig(gauss_order=2, gravity=0.0)
        state = initial_state(mesh, ELASTIC, config)
        state.gauss.stress[:] = np.array([-1e3, -2e3, -1e3, 50.0])
        state.v[:] = [0.3, -0.1]
        bundle = execute_transfer(state, mesh, TransferConfig(particles_per_axis=4),
                                  ELASTIC)
        assert bundle.n_particles == 16
        np.testing.assert_allclose(bundle.velocity,
                                   np.tile([0.3, -0.1], (16, 1)), rtol=1e-12)
        # volumes follow the normalized tensor quadrature weights
        w = gauss_rule(4).weights_1d / 2.0
        expected_v = (w[:, None] * w[None, :]).ravel()
        np.testing.assert_allclose(np.sort(bundle.volume), np.sort(expected_v),
                                   rtol=1e-12)
        assert bundle.volume.sum() == pytest.approx(1.0, abs=1e-14)
        assert bundle.mass.sum() == pytest.approx(1700.0, rel=1e-14)
        # an isolated element is the worst case for constant reproduction
        # (4 clustered centers, no augmentation): stresses agree only to ~25%,
        # but the field stays proportional and symmetric ring-by-ring
        np.testing.assert_allclose(bundle.stress,
                                   np.tile([-1e3, -2e3, -1e3, 50.0], (16, 1)),
                                   rtol=0.25)
        np.testing.assert_allclose(bundle.stress[:, 0] / bundle.stress[:, 1], 0.5,
                                   rtol=1e-9)
        corner = [0, 3, 12, 15]
        np.testing.assert_allclose(bundle.stress[corner, 1],
                                   bundle.stress[corner[0], 1], rtol=1e-9)

    def test_bundle_totals_conserved(self, geostatic_column):
        mesh, state, _ = geostatic_column
        bundle = execute_transfer(state, mesh, TransferConfig(particles_per_axis=4),
                                  ELASTIC)
        assert bundle.total_mass() == pytest.approx(1700.0 * 16.0, rel=1e-10)
        assert bundle.total_volume() == pytest.approx(
            mesh.element_volumes().sum(), rel=1e-10)

    def test_geostatic_rbf_oracle(self, geostatic_column):
        """Interior particle stress tracks the overburden to 1%.

        The boundary band carries a small extrapolation error; near the free
        surface the local stress vanishes, so that band is judged against the
        full overburden scale rho*g*H instead of the local value.
        """
        mesh, state, _ = geostatic_column
        bundle = execute_transfer(state, mesh, TransferConfig(particles_per_axis=4),
                                  ELASTIC)
        g = 9.81
        depth = 4.0 - bundle.position[:, 1]
        expected = -1700.0 * g * depth
        abs_err = np.abs(bundle.stress[:, 1] - expected)
        pos = bundle.position
        interior = ((pos[:, 0] > 0.5) & (pos[:, 0] < 3.5)
                    & (pos[:, 1] > 0.5) & (pos[:, 1] < 3.5))
        assert (abs_err[interior] / np.abs(expected[interior])).max() < 0.01
        assert (abs_err / (1700.0 * g * 4.0)).max() < 0.10

    def test_momentum_consistency(self, geostatic_column):
        mesh, state, config = geostatic_column
        state = state.copy()
        rng = np.random.default_rng(2)
        state.v[:] = rng.uniform(-1, 1, state.v.shape)
        bundle = execute_transfer(state, mesh, TransferConfig(particles_per_axis=4),
                                  ELASTIC)
        assert bundle.diagnostics["momentum_rel_error"] < 0.01

    def test_entangled_mesh_refused_and_override(self):
        mesh = structured_grid(2.0, 1.0, 1.0)
        config = FemPhaseConfig(gauss_order=2, gravity=0.0)
        state = initial_state(mesh, ELASTIC, config)
        quad = mesh.elements[0]
        mesh.node_coords[quad[3]] += [0.0, -2.0]   # invert element 0
        with pytest.raises(EntanglementError) as exc:
            execute_transfer(state, mesh, TransferConfig(), ELASTIC)
        assert 0 in exc.value.elements
        bundle = execute_transfer(state, mesh, TransferConfig(), ELASTIC,
                                  override_entanglement=True)
        assert bundle.n_particles > 0


class TestBundleFile:
    def test_round_trip_bit_exact(self, tmp_path, geostatic_column):
        mesh, state, _ = geostatic_column
        bundle = execute_transfer(state, mesh, TransferConfig(particles_per_axis=2),
                                  ELASTIC)
        path = tmp_path / "bundle.txt"
        bundle.write(path)
        back = TransferBundle.read(path)
        np.testing.assert_array_equal(back.position, bundle.position)
        np.testing.assert_array_equal(back.velocity, bundle.velocity)
        np.testing.assert_array_equal(back.stress, bundle.stress)
        np.testing.assert_array_equal(back.strain, bundle.strain)
        np.testing.assert_array_equal(back.volume, bundle.volume)
        np.testing.assert_array_equal(back.mass, bundle.mass)
        np.testing.assert_array_equal(back.source_element, bundle.source_element)
        # second write is byte-identical
        path2 = tmp_path / "bundle2.txt"
        back.write(path2)
        assert path.read_bytes() == path2.read_bytes()


class TestIllConditionedFit:
    def test_strict_raises_relaxed_regularizes(self):
        # two nearly coincident centers with conflicting values make the
        # interpolation conditions unsatisfiable in float arithmetic
        rng = np.random.default_rng(8)
        base = rng.uniform(0, 4, (30, 2))
        centers = np.vstack([base, base[:1] + 1e-9])
        vals = np.concatenate([rng.uniform(-1, 1, 30), [5.0]])
        interp = RbfInterpolator(centers, 0.5)
        with pytest.raises(TransferError):
            interp.fit(vals, strict=True)
        lam = interp.fit(vals, strict=False)
        assert np.all(np.isfinite(lam))
        assert interp._regularized
        assert interp.last_residual < 1.0


class TestStaticAdmissibility:
    def test_grid_residual_below_two_percent_of_weight(self, geostatic_column):
        """A transferred geostatic state is close to grid equilibrium."""
        from femmpm.mpm import BackgroundGrid, ParticleSet, p2g
        mesh, state, _ = geostatic_column
        bundle = execute_transfer(state, mesh, TransferConfig(particles_per_axis=4),
                                  ELASTIC)
        particles = ParticleSet.from_bundle(bundle, 0.25)
        grid = BackgroundGrid.build(0.0, 4.0, 0.0, 4.5, 0.25, base=True,
                                    wall_left=True, wall_right=True)
        p2g(particles, grid, gravity=9.81)
        resid = np.sqrt((grid.fint_x + grid.fext_x) ** 2
                        + (grid.fint_y + grid.fext_y) ** 2)
        # judge only load-bearing interior nodes; boundary rows carry the
        # reaction forces by design
        xs, ys = grid.node_positions()
        interior = ((grid.mass > 1e-6 * grid.mass.max())
                    & (ys[None, :] > 0.05) & (xs[:, None] > 0.05)
                    & (xs[:, None] < 3.95))
        weight = float(particles.mass.sum()) * 9.81
        assert resid[interior].max() < 0.02 * weight
