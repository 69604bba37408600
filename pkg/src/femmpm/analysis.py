"""Quantitative run metrics: runout, energies, profiles and mesh quality.

Everything here is a pure function over arrays or recorded frames, so the
metrics can be recomputed from dumped files alone.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .materials import deviatoric_strain
from .mesh import jacobian_ratios

GRAVITY = 9.81


def normalized_runout(length, length0):
    """(L - L0) / L0 with L the current maximum lateral extent."""
    if length0 <= 0:
        raise ConfigError("initial width must be positive")
    if length < 0:
        raise ConfigError("current extent must be non-negative")
    return (length - length0) / length0


def critical_time(height0, gravity=GRAVITY):
    """Duration of the initial acceleration phase, sqrt(H0/g)."""
    if height0 < 0 or gravity <= 0:
        raise ConfigError("need height0 >= 0 and gravity > 0")
    return math.sqrt(height0 / gravity)


@dataclass
class SurfaceProfile:
    """Binned free-surface elevations measured from particle clouds."""

    bin_centers: np.ndarray
    elevation: np.ndarray
    counts: np.ndarray
    bin_width: float
    toe_index: int            # rightmost adequately-populated bin; -1 if none
    empty_flagged: np.ndarray  # bins inside the range that held no particles

    @property
    def toe_x(self):
        if self.toe_index < 0:
            return math.nan
        return float(self.bin_centers[self.toe_index] + 0.5 * self.bin_width)


def nearest_rank_percentile(values, q):
    """Classic nearest-rank percentile (no interpolation)."""
    v = np.sort(np.asarray(values))
    if v.size == 0:
        raise ConfigError("empty sample")
    rank = max(1, math.ceil(q / 100.0 * v.size))
    return float(v[rank - 1])


def surface_profile(x, y, bin_width=2.0, x_origin=0.0, min_count=3,
                    percentile=99.0):
    """Free-surface profile: per-bin high-percentile particle elevation.

    The percentile (nearest rank) suppresses stray fast particles above the
    surface. Empty bins report elevation 0 and are flagged. The toe is the
    rightmost bin holding at least `min_count` particles.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0:
        raise ConfigError("surface profile needs at least one particle")
    n_bins = max(1, math.ceil((x.max() - x_origin) / bin_width - 1e-12))
    idx = np.clip(((x - x_origin) / bin_width).astype(int), 0, n_bins - 1)
    centers = x_origin + bin_width * (np.arange(n_bins) + 0.5)
    elev = np.zeros(n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    for b in range(n_bins):
        if counts[b]:
            elev[b] = nearest_rank_percentile(y[idx == b], percentile)
    populated = np.flatnonzero(counts >= min_count)
    toe = int(populated[-1]) if populated.size else -1
    return SurfaceProfile(bin_centers=centers, elevation=elev, counts=counts,
                          bin_width=bin_width, toe_index=toe,
                          empty_flagged=counts == 0)


def rmse_profile(model, reference, particle_size):
    """Root-mean-square surface mismatch, regularized by the particle size.

    Bins run from the left boundary to the REFERENCE profile's toe; the
    reference elevation appears in the denominator, so the measure is not
    symmetric.
    """
    if abs(model.bin_width - reference.bin_width) > 1e-12 or \
            abs(model.bin_centers[0] - reference.bin_centers[0]) > 1e-12:
        raise ConfigError("profiles use different binning")
    if reference.toe_index < 0:
        raise ConfigError("reference profile has no toe")
    n = reference.toe_index + 1
    y_m = model.elevation[:n] if model.elevation.size >= n else np.pad(
        model.elevation, (0, n - model.elevation.size))
    y_r = reference.elevation[:n]
    terms = ((y_m - y_r) / (y_r + particle_size)) ** 2
    return float(np.sqrt(terms.mean()))


def mean_profile_difference(model, reference, to_reference_toe=True):
    """Mean absolute elevation difference relative to the reference mean."""
    n = (reference.toe_index + 1) if to_reference_toe else min(
        model.elevation.size, reference.elevation.size)
    y_m = model.elevation[:n] if model.elevation.size >= n else np.pad(
        model.elevation, (0, n - model.elevation.size))
    y_r = reference.elevation[:n]
    return float(np.abs(y_m - y_r).sum() / y_r.sum())


def kinetic_energy_mpm(masses, velocities):
    """Sum of particle kinetic energies."""
    v2 = (np.asarray(velocities) ** 2).sum(axis=1)
    return 0.5 * float(np.asarray(masses) @ v2)


def kinetic_energy_fem(state, mesh, density):
    """Element kinetic energy from the average of the 4 nodal velocities."""
    v_e = state.v[mesh.elements].mean(axis=1)
    m_e = density * mesh.element_volumes(reference=True)
    return 0.5 * float(m_e @ (v_e ** 2).sum(axis=1))


def potential_energy_0(mesh, density, gravity=GRAVITY):
    """Element potential energy of the reference geometry, datum y = 0."""
    m_e = density * mesh.element_volumes(reference=True)
    h_e = mesh.element_coords(reference=True)[:, :, 1].mean(axis=1)
    return float((m_e * gravity) @ h_e)


@dataclass
class MeshQuality:
    ratio_avg: float
    eps_q_avg: float
    ratio_min: float
    no_yielded_elements: bool


def mesh_quality(state, mesh, strain_floor=0.03):
    """Distortion metrics over elements that have actually yielded.

    Averages are restricted to elements whose largest Gauss-point deviatoric
    strain exceeds the floor; the minimum ratio considers every element. If
    nothing exceeds the floor the averages report (1.0, 0.0) with a flag.
    """
    ratios = jacobian_ratios(mesh)
    eps_q = deviatoric_strain(state.gauss)
    n_g = state.gauss_order ** 2
    eps_e = eps_q.reshape(mesh.n_elements, n_g).max(axis=1)
    active = eps_e > strain_floor
    if not np.any(active):
        return MeshQuality(1.0, 0.0, float(ratios.min()), True)
    return MeshQuality(float(ratios[active].mean()), float(eps_e[active].mean()),
                       float(ratios.min()), False)


def transfer_zone_check(ratio_avg, eps_q_avg, ratio_threshold=0.97,
                        strain_threshold=0.20):
    """Mesh-quality gate for a safe transfer; returns (ok, margins)."""
    margin_ratio = ratio_avg - ratio_threshold
    margin_strain = strain_threshold - eps_q_avg
    return (margin_ratio >= 0.0 and margin_strain >= 0.0,
            margin_ratio, margin_strain)


@dataclass
class RunRecord:
    """Time series of one run plus its scenario constants."""

    pe0: float
    height0: float = math.nan
    length0: float = math.nan
    tau_c: float = math.nan
    transfer_time: float = math.nan
    frames: list = field(default_factory=list)

    COLUMNS = ("t", "R_N", "KE", "KE_over_PE0", "ratio_min", "ratio_avg",
               "eps_q_avg", "phase")

    def add_frame(self, t, runout_extent, ke, ratio_min=math.nan,
                  ratio_avg=math.nan, eps_q_avg=math.nan, phase="mpm"):
        if self.frames and t < self.frames[-1]["t"] - 1e-12:
            raise ConfigError("frame times must increase")
        self.frames.append({
            "t": t,
            "R_N": normalized_runout(runout_extent, self.length0)
                   if np.isfinite(self.length0) else math.nan,
            "KE": ke,
            "KE_over_PE0": ke / self.pe0 if self.pe0 > 0 else math.nan,
            "ratio_min": ratio_min,
            "ratio_avg": ratio_avg,
            "eps_q_avg": eps_q_avg,
            "phase": phase,
        })

    def column(self, name):
        return np.array([f[name] for f in self.frames])

    def peak_ke_time(self, smooth_window=0.1):
        """Time of the largest KE/PE0 after smoothing over a short window."""
        t = self.column("t")
        ke = self.column("KE_over_PE0")
        if t.size < 3:
            return float(t[np.argmax(ke)])
        sm = np.array([ke[(t >= ti - smooth_window / 2)
                          & (t <= ti + smooth_window / 2)].mean() for ti in t])
        return float(t[np.argmax(sm)])

    def cessation_time(self, fraction=0.99):
        """First time the runout reaches `fraction` of its final value."""
        rn = self.column("R_N")
        t = self.column("t")
        final = rn[-1]
        if not np.isfinite(final) or final <= 0:
            return math.nan
        hit = np.flatnonzero(rn >= fraction * final)
        return float(t[hit[0]]) if hit.size else math.nan

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for f in self.frames:
                cells = []
                for c in self.COLUMNS:
                    v = f[c]
                    cells.append(v if isinstance(v, str) else f"{v:.17g}")
                fh.write(",".join(cells) + "\n")

    @classmethod
    def read_csv(cls, path, pe0=math.nan, length0=math.nan):
        rec = cls(pe0=pe0, length0=length0)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header != list(cls.COLUMNS):
                raise ConfigError(f"unexpected record columns {header}")
            for line in fh:
                parts = line.strip().split(",")
                frame = {}
                for c, raw in zip(cls.COLUMNS, parts):
                    frame[c] = raw if c == "phase" else float(raw)
                rec.frames.append(frame)
        return rec
