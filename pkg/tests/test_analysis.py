"""Runout, profile, energy and mesh-quality metric tests."""

import math

import numpy as np
import pytest

from femmpm.analysis import (
    RunRecord,
    critical_time,
    kinetic_energy_fem,
    kinetic_energy_mpm,
    mean_profile_difference,
    mesh_quality,
    nearest_rank_percentile,
    normalized_runout,
    potential_energy_0,
    rmse_profile,
    surface_profile,
    transfer_zone_check,
)
from femmpm.errors import ConfigError
from femmpm.fem import FemPhaseConfig, initial_state
from femmpm.materials import MaterialParams
from femmpm.mesh import structured_grid

ELASTIC = MaterialParams(1700.0, 23.8e6, 0.23)


class TestRunout:
    def test_no_motion(self):
        assert normalized_runout(50.0, 50.0) == 0.0

    def test_short_column_value(self):
        assert normalized_runout(160.5, 50.0) == pytest.approx(2.21)

    def test_tall_column_value(self):
        assert normalized_runout(214.8, 20.0) == pytest.approx(9.74)

    def test_invalid_initial_width(self):
        with pytest.raises(ConfigError):
            normalized_runout(10.0, 0.0)


class TestCriticalTime:
    def test_zero_height(self):
        assert critical_time(0.0) == 0.0

    def test_forty_metres(self):
        assert critical_time(40.0) == pytest.approx(2.019, abs=2e-3)

    def test_eighty_metres(self):
        assert critical_time(80.0) == pytest.approx(2.86, abs=1e-2)

    def test_sqrt_scaling(self):
        assert critical_time(4 * 17.3) / critical_time(17.3) == pytest.approx(
            2.0, abs=1e-12)


class TestSurfaceProfile:
    def test_flat_row(self):
        x = np.linspace(0.1, 9.9, 200)
        y = np.full_like(x, 3.0)
        prof = surface_profile(x, y)
        occupied = prof.counts > 0
        np.testing.assert_allclose(prof.elevation[occupied], 3.0)

    def test_nearest_rank_examples(self):
        assert nearest_rank_percentile(np.arange(1, 101), 99) == 99
        assert nearest_rank_percentile([5.0], 99) == 5.0

    def test_outlier_suppressed(self):
        x = np.full(201, 1.0)
        y = np.full(201, 5.0)
        y[0] = 50.0
        prof = surface_profile(x, y, bin_width=2.0)
        assert prof.elevation[0] == 5.0

    def test_toe_requires_min_count(self):
        x = np.concatenate([np.full(50, 1.0), [9.0]])
        y = np.ones(51)
        prof = surface_profile(x, y, bin_width=2.0)
        assert prof.toe_index == 0
        assert prof.toe_x == pytest.approx(2.0)

    def test_empty_bins_flagged(self):
        prof = surface_profile([1.0, 9.0, 9.1, 9.2], [1.0, 1.0, 1.0, 1.0],
                               bin_width=2.0)
        assert prof.empty_flagged[1]
        assert prof.elevation[1] == 0.0


class TestRmse:
    def _profile(self, elevations, counts=None):
        n = len(elevations)
        return surface_profile(
            np.repeat(np.arange(n) * 2.0 + 1.0, 5),
            np.repeat(elevations, 5), bin_width=2.0)

    def test_identical_profiles_zero(self):
        a = self._profile([3.0, 2.0, 1.0])
        assert rmse_profile(a, a, particle_size=0.25) == 0.0

    def test_single_bin_hand_value(self):
        model = self._profile([2.0])
        ref = self._profile([1.0])
        assert rmse_profile(model, ref, particle_size=1.0) == pytest.approx(0.5)

    def test_monotone_under_offsets(self):
        ref = self._profile([3.0, 2.0, 1.0])
        previous = 0.0
        for shift in (0.1, 0.3, 0.8):
            model = self._profile([3.0 + shift, 2.0 + shift, 1.0 + shift])
            value = rmse_profile(model, ref, particle_size=0.25)
            assert value > previous
            previous = value

    def test_binning_mismatch_rejected(self):
        a = self._profile([1.0, 2.0])
        b = surface_profile([0.5, 1.5], [1.0, 1.0], bin_width=1.0)
        with pytest.raises(ConfigError):
            rmse_profile(a, b, 0.25)

    def test_mean_difference(self):
        ref = self._profile([2.0, 2.0])
        model = self._profile([2.2, 1.8])
        assert mean_profile_difference(model, ref) == pytest.approx(0.1)


class TestEnergies:
    def test_mpm_zero_velocity(self):
        assert kinetic_energy_mpm(np.ones(5), np.zeros((5, 2))) == 0.0

    def test_mpm_single_particle(self):
        assert kinetic_energy_mpm([2.0], [[3.0, 4.0]]) == pytest.approx(25.0)

    def test_mpm_opposite_velocities_add(self):
        ke = kinetic_energy_mpm([1.0, 1.0], [[2.0, 0.0], [-2.0, 0.0]])
        assert ke == pytest.approx(4.0)

    def test_fem_static_zero(self):
        mesh = structured_grid(2.0, 1.0, 1.0)
        state = initial_state(mesh, ELASTIC, FemPhaseConfig())
        assert kinetic_energy_fem(state, mesh, 1700.0) == 0.0

    def test_fem_uniform_translation(self):
        mesh = structured_grid(1.0, 1.0, 1.0)
        state = initial_state(mesh, ELASTIC, FemPhaseConfig())
        state.v[:] = [1.0, 0.0]
        m_e = 1700.0
        assert kinetic_energy_fem(state, mesh, 1700.0) == pytest.approx(0.5 * m_e)

    def test_fem_average_then_square(self):
        mesh = structured_grid(1.0, 1.0, 1.0)
        state = initial_state(mesh, ELASTIC, FemPhaseConfig())
        state.v[0] = [4.0, 0.0]   # single node moving: average is (1, 0)
        assert kinetic_energy_fem(state, mesh, 1700.0) == pytest.approx(
            0.5 * 1700.0 * 1.0)

    def test_potential_energy_unit_element(self):
        mesh = structured_grid(1.0, 1.0, 1.0)
        assert potential_energy_0(mesh, 1.0) == pytest.approx(9.81 * 0.5)

    def test_potential_energy_datum_shift(self):
        mesh = structured_grid(2.0, 2.0, 0.5)
        base = potential_energy_0(mesh, 1700.0)
        lifted = structured_grid(2.0, 2.0, 0.5, y0=3.0)
        expected = base + 1700.0 * 4.0 * 9.81 * 3.0
        assert potential_energy_0(lifted, 1700.0) == pytest.approx(expected)

    def test_column_scale_value(self):
        mesh = structured_grid(50.0, 40.0, 1.0)
        pe0 = potential_energy_0(mesh, 1700.0)
        assert pe0 == pytest.approx(1700.0 * 9.81 * 2000.0 * 20.0, rel=1e-12)


class TestMeshQuality:
    def test_pristine_mesh_flagged(self):
        mesh = structured_grid(3.0, 2.0, 1.0)
        state = initial_state(mesh, ELASTIC, FemPhaseConfig())
        q = mesh_quality(state, mesh)
        assert (q.ratio_avg, q.eps_q_avg, q.ratio_min) == (1.0, 0.0, 1.0)
        assert q.no_yielded_elements

    def test_single_yielded_element(self):
        mesh = structured_grid(3.0, 1.0, 1.0)
        state = initial_state(mesh, ELASTIC, FemPhaseConfig(gauss_order=2))
        # element 1: 10% shear strain at its Gauss points, and squash it
        state.gauss.strain[4:8, 3] = 0.10 * math.sqrt(3.0) / 2.0
        quad = mesh.elements[1]
        mesh.node_coords[quad[2], 1] -= 0.1
        mesh.node_coords[quad[3], 1] -= 0.1
        q = mesh_quality(state, mesh)
        assert not q.no_yielded_elements
        assert q.ratio_avg == pytest.approx(0.9, abs=1e-12)
        assert q.eps_q_avg == pytest.approx(0.1, rel=1e-6)

    def test_zone_check(self):
        ok, *_ = transfer_zone_check(1.0, 0.0)
        assert ok
        assert not transfer_zone_check(0.96, 0.15)[0]
        assert not transfer_zone_check(0.98, 0.25)[0]


class TestRunRecord:
    def _record(self):
        rec = RunRecord(pe0=1000.0, length0=10.0, height0=5.0)
        for i, (ext, ke) in enumerate([(10.0, 0.0), (11.0, 50.0), (13.0, 120.0),
                                       (14.5, 60.0), (14.9, 5.0), (15.0, 0.1)]):
            rec.add_frame(t=0.5 * i, runout_extent=ext, ke=ke)
        return rec

    def test_runout_column(self):
        rec = self._record()
        assert rec.column("R_N")[-1] == pytest.approx(0.5)

    def test_peak_and_cessation(self):
        rec = self._record()
        assert rec.peak_ke_time() == pytest.approx(1.0)
        # 99% of the final R_N = 0.495 is first reached on the last frame
        assert rec.cessation_time() == pytest.approx(2.5)

    def test_times_must_increase(self):
        rec = self._record()
        with pytest.raises(ConfigError):
            rec.add_frame(t=0.0, runout_extent=15.0, ke=0.0)

    def test_csv_round_trip(self, tmp_path):
        rec = self._record()
        path = tmp_path / "record.csv"
        rec.write_csv(path)
        back = RunRecord.read_csv(path, pe0=1000.0, length0=10.0)
        np.testing.assert_array_equal(back.column("t"), rec.column("t"))
        np.testing.assert_array_equal(back.column("KE"), rec.column("KE"))
        np.testing.assert_array_equal(back.column("R_N"), rec.column("R_N"))


class TestToeVersusMaxX:
    def test_agreement_within_one_bin(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            n = rng.integers(50, 400)
            x = rng.uniform(0.0, rng.uniform(10, 60), n)
            y = rng.uniform(0.0, 5.0, n)
            prof = surface_profile(x, y, bin_width=2.0)
            if prof.toe_index < 0:
                continue
            assert abs(prof.toe_x - x.max()) <= 2.0 + 1e-9
