"""Mesh-to-particle state transfer.

Nodal quantities (positions, velocities) are carried to particle sites with
the bilinear shape functions of the deformed element. Stress and strain,
which live at the quadrature points, are interpolated with one global
multiquadric radial basis fit per component so the fields stay smooth
across element borders and extrapolate mildly at free boundaries. Volume
comes from the deformed element, mass from the undeformed one, both split
between particles by normalized Gauss-Legendre weights, so the particle
cloud conserves total mass exactly and reproduces the deformed volume.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import ConfigError, EntanglementError, TransferError
from .fem import detect_entanglement
from .mesh import gauss_rule, shape_functions

log = logging.getLogger(__name__)

BUNDLE_COLUMNS = ("id", "x", "y", "vx", "vy", "sxx", "syy", "szz", "sxy",
                  "exx", "eyy", "ezz", "exy", "epq", "pp", "volume", "mass",
                  "material_id", "source_element")


@dataclass
class TransferConfig:
    particles_per_axis: tuple = (4, 4)
    rbf_shape: object = "auto"
    transfer_time: float = 0.0

    def __post_init__(self):
        if np.isscalar(self.particles_per_axis):
            self.particles_per_axis = (int(self.particles_per_axis),) * 2
        npx, npy = self.particles_per_axis
        if npx < 1 or npy < 1:
            raise ConfigError("particles_per_axis entries must be >= 1")
        if self.rbf_shape != "auto" and not self.rbf_shape > 0:
            raise ConfigError("rbf_shape must be positive or 'auto'")
        if self.transfer_time < 0:
            raise ConfigError("transfer_time must be non-negative")


def multiquadric(r, c):
    return np.sqrt((r / c) ** 2 + 1.0)


def auto_shape_parameter(centers):
    """Typical spacing between scattered centers: (bbox volume / N)^(1/dim)."""
    centers = np.atleast_2d(centers)
    edges = centers.max(axis=0) - centers.min(axis=0)
    edges = edges[edges > 0]
    if edges.size == 0:
        return 1.0
    return float(np.power(np.prod(edges) / centers.shape[0], 1.0 / edges.size))


def _pairwise_distances(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


class RbfInterpolator:
    """Exact multiquadric interpolant over one fixed set of centers.

    A single factorization serves any number of value columns; a residual
    check after each solve enforces the interpolation conditions.
    """

    def __init__(self, centers, shape_parameter="auto"):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if self.centers.shape[0] < 1:
            raise TransferError("need at least one interpolation center")
        order = np.lexsort(self.centers.T)
        pts = self.centers[order]
        if np.any(np.all(np.abs(np.diff(pts, axis=0)) < 1e-12, axis=1)):
            raise TransferError("duplicate interpolation centers")
        self.c = (auto_shape_parameter(self.centers)
                  if shape_parameter == "auto" else float(shape_parameter))
        phi = multiquadric(_pairwise_distances(self.centers, self.centers), self.c)
        try:
            self._lu = lu_factor(phi)
            self._regularized = False
        except np.linalg.LinAlgError:
            self._lu = None
        if self._lu is None or not np.all(np.isfinite(self._lu[0])):
            reg = 1e-10 * np.trace(phi) / phi.shape[0]
            log.warning("RBF system singular; adding diagonal regularization %.3e", reg)
            phi[np.diag_indices_from(phi)] += reg
            self._lu = lu_factor(phi)
            self._regularized = True
        self._phi = phi

    def _solve(self, vals):
        lam = lu_solve(self._lu, vals)
        # refinement passes buy several digits on mildly conditioned systems
        for _ in range(2):
            lam += lu_solve(self._lu, vals - self._phi @ lam)
        resid = np.abs(self._phi @ lam - vals).max(axis=0)
        scale = np.abs(vals).max(axis=0)
        rel = float((resid / np.maximum(scale, 1e-300))[scale > 0].max()) \
            if np.any(scale > 0) else 0.0
        return lam, rel

    def fit(self, values, strict=True):
        """Coefficients lambda for one or more value columns (n, k).

        With strict=True a residual above 1e-8 (relative) raises. Otherwise
        the system is re-solved with a small diagonal regularization — the
        honest treatment when a deformed mesh leaves centers nearly
        coincident with conflicting values — and the achieved residual is
        kept on `last_residual` for diagnostics.
        """
        vals = np.asarray(values, dtype=float)
        squeeze = vals.ndim == 1
        vals = vals.reshape(self.centers.shape[0], -1)
        lam, rel = self._solve(vals)
        if rel > 1e-8:
            if strict:
                cond = np.linalg.cond(self._phi) \
                    if self.centers.shape[0] <= 4000 else np.inf
                raise TransferError(
                    f"RBF interpolation conditions violated (residual "
                    f"{rel:.3e}, condition estimate {cond:.3e})")
            reg = 1e-10 * np.trace(self._phi) / self._phi.shape[0]
            log.warning("RBF residual %.3e above tolerance; regularizing "
                        "diagonally with %.3e", rel, reg)
            self._phi[np.diag_indices_from(self._phi)] += reg
            self._lu = lu_factor(self._phi)
            self._regularized = True
            lam, rel = self._solve(vals)
        self.last_residual = rel
        return lam[:, 0] if squeeze else lam

    def evaluate(self, lam, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lam2 = np.asarray(lam, dtype=float).reshape(self.centers.shape[0], -1)
        out = np.empty((pts.shape[0], lam2.shape[1]))
        # chunked so huge point sets do not build a full distance matrix
        step = max(1, int(2e7) // max(self.centers.shape[0], 1))
        for i in range(0, pts.shape[0], step):
            phi = multiquadric(_pairwise_distances(pts[i:i + step], self.centers), self.c)
            out[i:i + step] = phi @ lam2
        return out[:, 0] if np.asarray(lam).ndim == 1 else out


def rbf_fit(centers, values, shape_parameter="auto"):
    """Fit coefficients for one component; returns (lambda, interpolator)."""
    interp = RbfInterpolator(centers, shape_parameter)
    return interp.fit(values), interp


def rbf_eval(lam, centers, points, shape_parameter):
    interp = RbfInterpolator(centers, shape_parameter)
    return interp.evaluate(lam, points)


def interpolate_nodal(nodal_values, xi, eta):
    """Bilinear interpolation of 4 nodal values (scalars or vectors)."""
    vals = np.asarray(nodal_values, dtype=float)
    if vals.shape[0] != 4:
        raise ValueError("expected one value per element node")
    return shape_functions(xi, eta) @ vals


def partition_volume_mass(deformed_coords, reference_coords, density, config):
    """Per-particle volumes and masses for one element.

    Volume splits the deformed element, mass the undeformed one, both with
    normalized tensor-product Gauss weights, so the per-element sums equal
    the deformed volume and the original mass exactly.
    """
    def shoelace(c):
        x, y = c[:, 0], c[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    v_t = shoelace(np.asarray(deformed_coords, dtype=float))
    v_0 = shoelace(np.asarray(reference_coords, dtype=float))
    if v_t <= 0.0:
        raise TransferError("deformed element is inverted; transfer refused")
    npx, npy = config.particles_per_axis
    wx = gauss_rule(npx).weights_1d / 2.0
    wy = gauss_rule(npy).weights_1d / 2.0
    w = (wy[:, None] * wx[None, :]).ravel()   # eta-major to match particle order
    return v_t * w, density * v_0 * w


def _particle_isoparametric(config):
    """(xi, eta) sites and the matching bilinear weights, eta-major order."""
    npx, npy = config.particles_per_axis
    xs = gauss_rule(npx).points_1d
    ys = gauss_rule(npy).points_1d
    pts = [(xi, eta) for eta in ys for xi in xs]
    shapes = np.array([shape_functions(xi, eta) for xi, eta in pts])
    return pts, shapes


@dataclass
class TransferBundle:
    """One record per generated material point, all in SI units."""

    position: np.ndarray
    velocity: np.ndarray
    stress: np.ndarray
    strain: np.ndarray
    plastic_strain: np.ndarray
    pore_pressure: np.ndarray
    volume: np.ndarray
    mass: np.ndarray
    material_id: np.ndarray
    source_element: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def n_particles(self):
        return self.position.shape[0]

    def total_mass(self):
        return float(self.mass.sum())

    def total_volume(self):
        return float(self.volume.sum())

    def momentum(self):
        return self.velocity.T @ self.mass

    def validate(self, mesh):
        """Check the conservation bookkeeping against the source mesh.

        Only elements that actually produced particles are compared, so a
        transfer that skipped inverted elements still validates.
        """
        v_t = mesh.element_volumes()
        v_0 = mesh.element_volumes(reference=True)
        counts = np.bincount(self.source_element, minlength=mesh.n_elements)
        covered = counts > 0
        vol_sums = np.bincount(self.source_element, weights=self.volume,
                               minlength=mesh.n_elements)
        mass_sums = np.bincount(self.source_element, weights=self.mass,
                                minlength=mesh.n_elements)
        if not np.allclose(vol_sums[covered], v_t[covered], rtol=1e-10, atol=0.0):
            raise TransferError("per-element particle volumes do not sum to the "
                                "deformed element volume")
        rho = mass_sums[covered] / v_0[covered]
        if not np.allclose(rho, rho[0], rtol=1e-10):
            raise TransferError("per-element particle masses break mass conservation")
        coords = mesh.node_coords[mesh.elements[self.source_element]]
        lo = coords.min(axis=1) - 1e-9
        hi = coords.max(axis=1) + 1e-9
        inside = np.all((self.position >= lo) & (self.position <= hi), axis=1)
        if not np.all(inside):
            raise TransferError("particle positions fall outside their source elements")

    def write(self, path):
        data = np.column_stack([
            np.arange(self.n_particles, dtype=float),
            self.position, self.velocity, self.stress, self.strain[:, :4],
            self.plastic_strain, self.pore_pressure, self.volume, self.mass,
            self.material_id.astype(float), self.source_element.astype(float),
        ])
        header = " ".join(BUNDLE_COLUMNS)
        fmt = ["%d"] + ["%.17g"] * 16 + ["%d", "%d"]
        np.savetxt(path, data, fmt=fmt, header=header, comments="")

    @classmethod
    def read(cls, path):
        data = np.atleast_2d(np.loadtxt(path, skiprows=1))
        if data.shape[1] != len(BUNDLE_COLUMNS):
            raise TransferError(f"bundle file has {data.shape[1]} columns, "
                                f"expected {len(BUNDLE_COLUMNS)}")
        return cls(
            position=data[:, 1:3].copy(), velocity=data[:, 3:5].copy(),
            stress=data[:, 5:9].copy(), strain=data[:, 9:13].copy(),
            plastic_strain=data[:, 13].copy(), pore_pressure=data[:, 14].copy(),
            volume=data[:, 15].copy(), mass=data[:, 16].copy(),
            material_id=data[:, 17].astype(np.intp),
            source_element=data[:, 18].astype(np.intp),
        )


def fem_gauss_positions(mesh, gauss_order):
    """Quadrature point locations on the deformed geometry, shape (E*G, 2)."""
    rule = gauss_rule(gauss_order)
    coords = mesh.element_coords()
    pos = np.empty((mesh.n_elements, rule.points.shape[0], 2))
    for g, (xi, eta) in enumerate(rule.points):
        n = shape_functions(xi, eta)
        pos[:, g, :] = np.einsum("a,eai->ei", n, coords)
    return pos.reshape(-1, 2)


def execute_transfer(fem_state, mesh, config, params, override_entanglement=False):
    """Convert the full FEM state into a particle bundle."""
    report = detect_entanglement(fem_state, mesh)
    if report.min_ratio <= 0.0 and not override_entanglement:
        raise EntanglementError(
            f"mesh entangled (min Jacobian ratio {report.min_ratio:.3f}); "
            f"{len(report.offending)} inverted elements", elements=report.offending,
            time=fem_state.time)

    iso_pts, shapes = _particle_isoparametric(config)
    n_pp = len(iso_pts)
    keep = np.ones(mesh.n_elements, dtype=bool)
    if report.offending:
        keep[report.offending] = False
        log.warning("transfer skipping %d inverted elements", len(report.offending))
    elem_ids = np.flatnonzero(keep)
    coords = mesh.element_coords()[elem_ids]
    vel_nodes = fem_state.v[mesh.elements[elem_ids]]

    positions = np.einsum("pa,eai->epi", shapes, coords).reshape(-1, 2)
    velocities = np.einsum("pa,eai->epi", shapes, vel_nodes).reshape(-1, 2)

    n_g = fem_state.gauss_order ** 2
    center_mask = np.repeat(keep, n_g)
    centers = fem_gauss_positions(mesh, fem_state.gauss_order)[center_mask]
    interp = RbfInterpolator(centers, config.rbf_shape)
    fields = np.column_stack([
        fem_state.gauss.stress,
        fem_state.gauss.strain[:, [0, 1, 3]],
        fem_state.gauss.plastic_strain,
    ])[center_mask]
    lam = interp.fit(fields, strict=False)
    sampled = interp.evaluate(lam, positions)
    # limit each component to the fitted data range (plus a margin that
    # leaves room for mild free-surface extrapolation): badly conditioned
    # fits from heavily sheared meshes must not invent new field extrema
    lo = fields.min(axis=0)
    hi = fields.max(axis=0)
    pad = 0.1 * (hi - lo)
    sampled = np.clip(sampled, lo - pad, hi + pad)
    stress = sampled[:, 0:4]
    strain = np.zeros((positions.shape[0], 4))
    strain[:, 0] = sampled[:, 4]
    strain[:, 1] = sampled[:, 5]
    strain[:, 3] = sampled[:, 6]
    plastic = np.maximum(sampled[:, 7], 0.0)

    volumes = np.empty(elem_ids.size * n_pp)
    masses = np.empty_like(volumes)
    ref_coords = mesh.element_coords(reference=True)[elem_ids]
    for i in range(elem_ids.size):
        vp, mp = partition_volume_mass(coords[i], ref_coords[i],
                                       params.mass_density, config)
        volumes[i * n_pp:(i + 1) * n_pp] = vp
        masses[i * n_pp:(i + 1) * n_pp] = mp

    src = np.repeat(elem_ids.astype(np.intp), n_pp)
    bundle = TransferBundle(
        position=positions, velocity=velocities, stress=stress, strain=strain,
        plastic_strain=plastic, pore_pressure=np.zeros(positions.shape[0]),
        volume=volumes, mass=masses,
        material_id=np.zeros(positions.shape[0], dtype=np.intp),
        source_element=src,
    )
    bundle.validate(mesh)

    fem_momentum = fem_state.v.T @ fem_state.nodal_mass
    bundle_momentum = bundle.momentum()
    scale = max(float(np.linalg.norm(fem_momentum)),
                bundle.total_mass() * 1e-12)
    bundle.diagnostics = {
        "transfer_time": fem_state.time,
        "rbf_shape_parameter": interp.c,
        "rbf_regularized": interp._regularized,
        "rbf_residual": interp.last_residual,
        "momentum_fem": fem_momentum.tolist(),
        "momentum_bundle": bundle_momentum.tolist(),
        "momentum_rel_error": float(np.linalg.norm(bundle_momentum - fem_momentum)
                                    / scale),
        "min_jacobian_ratio": report.min_ratio,
    }
    return bundle
