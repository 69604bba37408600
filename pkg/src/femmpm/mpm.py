"""Explicit GIMP material point solver for the runout phase.

Update-stress-last cycle: particle quantities scatter to a fixed background
grid (p2g), the grid momentum advances with damping and boundary conditions
(grid_update), and particles gather velocities, move, and update stress
through the shared constitutive module (g2p). Particle GIMP domains are
initialized from the transferred volumes and kept fixed (uGIMP).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DivergenceError, FemMpmError, OutOfDomainError
from .materials import StressStrainState, elastic_step, mohr_coulomb_step

GRAVITY = 9.81


@dataclass
class MpmConfig:
    cell_size: float = 1.0
    damping: float = 0.0
    flip_pic_blend: float = 0.0          # 0 = pure FLIP, 1 = pure PIC
    dt_safety: float = 0.4
    base_friction: float = 0.466
    t_end: float = 20.0
    mass_tolerance_rel: float = 1e-10
    material_model: str = "mohr_coulomb"
    boundary: str = "left_base"          # or "all_walls"
    gravity: float = GRAVITY
    verify_conservation: bool = True
    quiescence_ke_ratio: float = 1e-6
    quiescence_speed: float = 1e-3
    quiescence_hold: float = 0.5
    # once KE collapses, a small PIC fraction drains the particle-level
    # velocity modes the grid cannot see (lone rattlers); pure FLIP cannot
    # reach stillness on its own
    settle_ke_ratio: float = 1e-3
    settle_pic_blend: float = 0.2
    settle_damping: float = 0.05

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ConfigError("cell_size must be positive")
        if not 0.0 <= self.flip_pic_blend <= 1.0:
            raise ConfigError("flip_pic_blend must lie in [0, 1]")
        if self.material_model not in ("mohr_coulomb", "elastic"):
            raise ConfigError("material_model must be 'mohr_coulomb' or 'elastic'")
        if self.boundary not in ("left_base", "all_walls"):
            raise ConfigError("boundary must be 'left_base' or 'all_walls'")


@dataclass
class ParticleSet:
    """Material point state arrays; the particle count never changes."""

    x: np.ndarray
    v: np.ndarray
    stress: np.ndarray
    strain: np.ndarray
    plastic_strain: np.ndarray
    volume: np.ndarray
    mass: np.ndarray
    lp: np.ndarray
    material_id: np.ndarray
    volume0: np.ndarray = None

    def __post_init__(self):
        if np.any(self.mass <= 0) or np.any(self.volume <= 0):
            raise ConfigError("particle masses and volumes must be positive")
        if self.volume0 is None:
            self.volume0 = self.volume.copy()

    @classmethod
    def from_bundle(cls, bundle, cell_size):
        half = 0.5 * np.sqrt(bundle.volume)
        cap = 0.5 * cell_size
        lp = np.column_stack([np.minimum(half, cap), np.minimum(half, cap)])
        return cls(
            x=bundle.position.copy(), v=bundle.velocity.copy(),
            stress=bundle.stress.copy(), strain=bundle.strain.copy(),
            plastic_strain=bundle.plastic_strain.copy(),
            volume=bundle.volume.copy(), mass=bundle.mass.copy(),
            lp=lp, material_id=bundle.material_id.copy(),
        )

    @property
    def n_particles(self):
        return self.x.shape[0]

    def kinetic_energy(self):
        return 0.5 * float(np.sum(self.mass * (self.v ** 2).sum(axis=1)))

    def mean_speed(self):
        return float(np.mean(np.sqrt((self.v ** 2).sum(axis=1))))

    def copy(self):
        return ParticleSet(self.x.copy(), self.v.copy(), self.stress.copy(),
                           self.strain.copy(), self.plastic_strain.copy(),
                           self.volume.copy(), self.mass.copy(), self.lp.copy(),
                           self.material_id.copy(), self.volume0.copy())


@dataclass
class BackgroundGrid:
    """Fixed Cartesian node grid with scratch fields and boundary rows."""

    x0: float
    y0: float
    cell_size: float
    nnx: int
    nny: int
    jbase: int = -1
    iwall_left: int = -1
    iwall_right: int = -1
    jwall_top: int = -1
    mass: np.ndarray = field(init=False)
    momentum_x: np.ndarray = field(init=False)
    momentum_y: np.ndarray = field(init=False)
    fint_x: np.ndarray = field(init=False)
    fint_y: np.ndarray = field(init=False)
    fext_x: np.ndarray = field(init=False)
    fext_y: np.ndarray = field(init=False)
    vel_x: np.ndarray = field(init=False)
    vel_y: np.ndarray = field(init=False)
    acc_x: np.ndarray = field(init=False)
    acc_y: np.ndarray = field(init=False)

    def __post_init__(self):
        shape = (self.nnx, self.nny)
        for name in ("mass", "momentum_x", "momentum_y", "fint_x", "fint_y",
                     "fext_x", "fext_y", "vel_x", "vel_y", "acc_x", "acc_y"):
            setattr(self, name, np.zeros(shape))

    GHOST = 2

    @classmethod
    def build(cls, x_min, x_max, y_min, y_max, cell_size,
              base=True, wall_left=True, wall_right=False, wall_top=False):
        """Grid covering the box plus two ghost cells on every side.

        The base plane and walls sit on the box faces; ghost rows behind
        them carry the same condition so wide GIMP supports stay covered.
        """
        g = cls.GHOST
        ncx = max(1, math.ceil((x_max - x_min) / cell_size - 1e-9))
        ncy = max(1, math.ceil((y_max - y_min) / cell_size - 1e-9))
        nnx = ncx + 1 + 2 * g
        nny = ncy + 1 + 2 * g
        return cls(
            x0=x_min - g * cell_size, y0=y_min - g * cell_size,
            cell_size=cell_size, nnx=nnx, nny=nny,
            jbase=g if base else -1,
            iwall_left=g if wall_left else -1,
            iwall_right=nnx - 1 - g if wall_right else -1,
            jwall_top=nny - 1 - g if wall_top else -1,
        )

    def zero_scratch(self):
        for arr in (self.mass, self.momentum_x, self.momentum_y, self.fint_x,
                    self.fint_y, self.fext_x, self.fext_y):
            arr.fill(0.0)

    def node_positions(self):
        xs = self.x0 + self.cell_size * np.arange(self.nnx)
        ys = self.y0 + self.cell_size * np.arange(self.nny)
        return xs, ys


def gimp_weights(grid, position, lp, node):
    """Weight and gradient of one grid node at one particle.

    `node` is an (i, j) index pair. Raises when the particle support is not
    fully covered by the grid.
    """
    x, y = position
    lpx, lpy = (lp, lp) if np.isscalar(lp) else lp
    dx = grid.cell_size
    bi = int(np.floor((x - lpx - grid.x0) / dx))
    bj = int(np.floor((y - lpy - grid.y0) / dx))
    if bi < 0 or bj < 0 or bi + 2 > grid.nnx - 1 or bj + 2 > grid.nny - 1:
        raise OutOfDomainError(f"particle at ({x:.3f}, {y:.3f}) outside the grid",
                               particle=position)
    i, j = node
    wx, dwx = _kernels.gimp_1d(x - (grid.x0 + i * dx), lpx, dx)
    wy, dwy = _kernels.gimp_1d(y - (grid.y0 + j * dx), lpy, dx)
    return wx * wy, np.array([dwx * wy, wx * dwy])


def p2g(particles, grid, gravity=GRAVITY, verify=False):
    """Scatter particle state to the grid; scratch fields are reset first."""
    grid.zero_scratch()
    bad = _kernels.p2g(
        particles.x[:, 0], particles.x[:, 1], particles.v[:, 0], particles.v[:, 1],
        particles.stress[:, 0], particles.stress[:, 1], particles.stress[:, 3],
        particles.volume, particles.mass, particles.lp[:, 0], particles.lp[:, 1],
        grid.x0, grid.y0, grid.cell_size, 0.0, -gravity,
        grid.mass, grid.momentum_x, grid.momentum_y,
        grid.fint_x, grid.fint_y, grid.fext_x, grid.fext_y)
    if bad >= 0:
        raise OutOfDomainError(
            f"particle {bad} at ({particles.x[bad, 0]:.3f}, "
            f"{particles.x[bad, 1]:.3f}) left the background grid", particle=bad)
    if verify:
        m_p = float(particles.mass.sum())
        m_g = float(grid.mass.sum())
        if abs(m_g - m_p) > 1e-12 * m_p:
            raise FemMpmError(f"grid mass {m_g!r} != particle mass {m_p!r}")
        mom_p = particles.v.T @ particles.mass
        mom_g = np.array([grid.momentum_x.sum(), grid.momentum_y.sum()])
        # a settled body's net momentum cancels to ~0, so judge the match
        # against the unsigned momentum magnitude actually being summed
        scale = max(float((np.abs(particles.v).T @ particles.mass).max()),
                    m_p * 1e-16)
        if np.max(np.abs(mom_g - mom_p)) > 1e-12 * scale:
            raise FemMpmError("grid momentum does not match particle momentum")


def grid_update(grid, dt, damping, base_friction, mass_tolerance_rel=1e-10):
    """Advance nodal momenta; apply damping, walls and base friction."""
    mass_tol = mass_tolerance_rel * float(grid.mass.max())
    _kernels.grid_update(
        grid.mass, grid.momentum_x, grid.momentum_y,
        grid.fint_x, grid.fint_y, grid.fext_x, grid.fext_y,
        grid.vel_x, grid.vel_y, grid.acc_x, grid.acc_y,
        dt, damping, base_friction, mass_tol,
        grid.jbase, grid.iwall_left, grid.iwall_right, grid.jwall_top)


def g2p(grid, particles, dt, params, flip_pic_blend=0.0,
        material_model="mohr_coulomb"):
    """Move particles with the updated grid field and update their stress."""
    n = particles.n_particles
    dexx = np.empty(n)
    deyy = np.empty(n)
    dexy = np.empty(n)
    bad = _kernels.g2p(
        particles.x[:, 0], particles.x[:, 1], particles.v[:, 0], particles.v[:, 1],
        particles.lp[:, 0], particles.lp[:, 1], grid.x0, grid.y0, grid.cell_size,
        grid.vel_x, grid.vel_y, grid.acc_x, grid.acc_y, dt, flip_pic_blend,
        dexx, deyy, dexy)
    if bad >= 0:
        raise OutOfDomainError(
            f"particle {bad} at ({particles.x[bad, 0]:.3f}, "
            f"{particles.x[bad, 1]:.3f}) left the background grid", particle=bad)

    dstrain = np.zeros((n, 4))
    dstrain[:, 0] = dexx
    dstrain[:, 1] = deyy
    dstrain[:, 3] = dexy
    state = StressStrainState(particles.stress, particles.strain,
                              particles.plastic_strain)
    stepper = mohr_coulomb_step if material_model == "mohr_coulomb" else elastic_step
    new = stepper(state, dstrain, params)
    particles.stress = new.stress
    particles.strain = new.strain
    particles.plastic_strain = new.plastic_strain
    # detached flyers interpolate phantom strain rates from nearly-empty
    # nodes; bounding the tracked volume keeps their internal forces sane
    particles.volume = np.clip(particles.volume * (1.0 + dexx + deyy),
                               0.1 * particles.volume0,
                               10.0 * particles.volume0)
    return particles


def stable_dt(particles, params, config):
    """CFL-style bound including the GIMP support-edge stiffness.

    Near the edge of a particle domain the weight vanishes quadratically but
    its gradient only linearly, which caps the stable step at about
    sqrt(cell * lp) / c rather than cell / c.
    """
    vmax = float(np.abs(particles.v).max()) if particles.n_particles else 0.0
    speed = max(params.p_wave_speed, vmax, 1e-12)
    lp_min = float(particles.lp.min())
    h_eff = min(config.cell_size, 2.0 * math.sqrt(config.cell_size * lp_min))
    return config.dt_safety * h_eff / speed


def run_mpm(particles, grid, params, config, pe0=None, frame_interval=0.1,
            recorder=None, t_start=0.0):
    """Step the solver to t_end or sustained quiescence.

    Returns (frames, quiescent_since) where frames is a list of dicts with
    kinematic summaries at the frame cadence. `recorder(t, particles)` runs
    at every frame for file dumps.
    """
    if pe0 is None or pe0 <= 0.0:
        pe0 = max(float(np.sum(particles.mass * config.gravity
                               * particles.x[:, 1])), 1e-300)
    t = t_start
    t_frame = t_start
    quiet_since = None
    settling = False
    frames = []

    def record():
        ke = particles.kinetic_energy()
        frames.append({
            "t": t, "ke": ke, "ke_ratio": ke / pe0,
            "max_x": float(particles.x[:, 0].max()),
            "mean_speed": particles.mean_speed(),
        })
        if recorder is not None:
            recorder(t, particles)

    record()
    while t < config.t_end - 1e-12:
        t_frame_next = min(t_frame + frame_interval, config.t_end)
        dt = min(stable_dt(particles, params, config), t_frame_next - t)
        blend = max(config.flip_pic_blend,
                    config.settle_pic_blend if settling else 0.0)
        damping = max(config.damping,
                      config.settle_damping if settling else 0.0)
        p2g(particles, grid, gravity=config.gravity,
            verify=config.verify_conservation)
        grid_update(grid, dt, damping, config.base_friction,
                    config.mass_tolerance_rel)
        g2p(grid, particles, dt, params, blend, config.material_model)
        t += dt
        if not np.all(np.isfinite(particles.v)):
            raise DivergenceError(f"non-finite particle velocities at t={t:.4f}s",
                                  time=t)
        if t >= t_frame_next - 1e-12:
            t_frame = t_frame_next
            record()
            if not settling and frames[-1]["ke_ratio"] < config.settle_ke_ratio:
                settling = True
            quiet = (frames[-1]["ke_ratio"] < config.quiescence_ke_ratio
                     and frames[-1]["mean_speed"] < config.quiescence_speed)
            if quiet:
                if quiet_since is None:
                    quiet_since = t
                elif t - quiet_since >= config.quiescence_hold - 1e-12:
                    break
            else:
                quiet_since = None
    return frames, quiet_since
