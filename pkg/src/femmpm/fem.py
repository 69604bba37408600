"""Explicit Lagrangian FEM phase: geostatic initialization and failure stepping.

Time integration is central difference with row-sum lumped masses. The mesh
geometry is updated every step (updated Lagrangian), so internal forces and
strain increments always use gradients on the current configuration.
Non-viscous (Cundall) damping serves both dynamic relaxation in the
geostatic phase and optional stabilisation during failure.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, InitializationError
from .materials import (
    StressStrainState,
    elastic_step,
    frozen_strength_field,
    mohr_coulomb_step,
    tresca_step,
)
from .mesh import det_jacobian, gauss_rule, shape_functions, shape_function_gradients

GRAVITY = 9.81


@dataclass
class FemPhaseConfig:
    gauss_order: int = 2
    dt_safety: float = 0.5
    geostatic_damping: float = 0.8
    failure_damping: float = 0.0
    base_friction: float = 0.466
    geostatic_tolerance: float = 1e-6
    geostatic_force_tolerance: float = 2e-6
    geostatic_max_time: float = 120.0
    max_time: float = 10.0
    entanglement_action: str = "halt"
    hourglass_coeff: float = 0.03
    strength_model: str = "mohr_coulomb"
    gravity: float = GRAVITY

    def __post_init__(self):
        if not 0.0 < self.dt_safety <= 1.0:
            raise ConfigError("dt_safety must lie in (0, 1]")
        if self.base_friction < 0:
            raise ConfigError("base_friction must be non-negative")
        if self.entanglement_action not in ("halt", "continue"):
            raise ConfigError("entanglement_action must be 'halt' or 'continue'")
        if self.strength_model not in ("mohr_coulomb", "frozen"):
            raise ConfigError("strength_model must be 'mohr_coulomb' or 'frozen'")


@dataclass
class FemState:
    """Nodal kinematics plus per-Gauss-point material state at one instant."""

    time: float
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    nodal_mass: np.ndarray
    gauss: StressStrainState
    gauss_order: int
    rollers: dict = field(default_factory=dict)   # active: set name -> axis
    released: set = field(default_factory=set)
    base_set: str = "base"
    base_y: float = 0.0
    base_normal: np.ndarray = None                # last-step reactions, base nodes
    strength_field: np.ndarray = None             # frozen per-point strength
    entangled_at: float = None

    def copy(self):
        return FemState(
            time=self.time, u=self.u.copy(), v=self.v.copy(), a=self.a.copy(),
            nodal_mass=self.nodal_mass, gauss=self.gauss.copy(),
            gauss_order=self.gauss_order, rollers=dict(self.rollers),
            released=set(self.released), base_set=self.base_set,
            base_y=self.base_y,
            base_normal=None if self.base_normal is None else self.base_normal.copy(),
            strength_field=None if self.strength_field is None
            else self.strength_field.copy(),
            entangled_at=self.entangled_at,
        )


def lumped_mass(mesh, density, gauss_order):
    """Row-sum nodal masses on the reference geometry; total is rho * volume."""
    rule = gauss_rule(gauss_order)
    coords = mesh.element_coords(reference=True)
    masses = np.zeros(mesh.n_nodes)
    for (xi, eta), w in zip(rule.points, rule.weights):
        n = shape_functions(xi, eta)
        det = det_jacobian(coords, xi, eta)
        contrib = density * w * det[:, None] * n[None, :]
        np.add.at(masses, mesh.elements, contrib)
    return masses


def _gauss_gradients(coords, dn):
    """Shape gradients on the current geometry.

    coords: (E,4,2), dn: (G,4,2). Returns gradN (E,G,4,2) and detJ (E,G).
    Gauss points of inverted elements get zero gradients so they stop
    contributing forces or strain.
    """
    jac = np.einsum("gac,eai->egci", dn, coords)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    ok = det > 1e-300
    safe = np.where(ok, det, 1.0)
    inv = np.empty_like(jac)
    inv[..., 0, 0] = jac[..., 1, 1] / safe
    inv[..., 0, 1] = -jac[..., 0, 1] / safe
    inv[..., 1, 0] = -jac[..., 1, 0] / safe
    inv[..., 1, 1] = jac[..., 0, 0] / safe
    grad = np.einsum("gac,egci->egai", dn, inv)
    grad[~ok] = 0.0
    return grad, np.where(ok, det, 0.0)


class _Operators:
    """Per-(mesh, gauss order) constants for the stepping kernels."""

    def __init__(self, mesh, gauss_order):
        self.rule = gauss_rule(gauss_order)
        self.dn = np.stack([shape_function_gradients(xi, eta)
                            for xi, eta in self.rule.points])
        self.shapes = np.stack([shape_functions(xi, eta)
                                for xi, eta in self.rule.points])
        self.weights = self.rule.weights
        self.det0 = det_jacobian(mesh.element_coords(reference=True), 0.0, 0.0)
        self.conn_flat = mesh.elements.ravel()
        self.areas0 = mesh.element_volumes(reference=True)


def _operators(mesh, gauss_order):
    cache = getattr(mesh, "_fem_operators", None)
    if cache is None:
        cache = {}
        mesh._fem_operators = cache
    op = cache.get(gauss_order)
    if op is None:
        op = _Operators(mesh, gauss_order)
        cache[gauss_order] = op
    return op


def internal_forces(mesh, stress, gauss_order):
    """Nodal internal force vector -int grad(N) . sigma dV, shape (n_nodes, 2)."""
    op = _operators(mesh, gauss_order)
    coords = mesh.element_coords()
    grad, det = _gauss_gradients(coords, op.dn)
    n_e, n_g = det.shape
    sig = stress.reshape(n_e, n_g, 4)
    tens = np.empty((n_e, n_g, 2, 2))
    tens[..., 0, 0] = sig[..., 0]
    tens[..., 1, 1] = sig[..., 1]
    tens[..., 0, 1] = tens[..., 1, 0] = sig[..., 3]
    dv = det * op.weights[None, :]
    fe = -np.einsum("egij,egaj,eg->eai", tens, grad, dv)
    out = np.zeros((mesh.n_nodes, 2))
    out[:, 0] = np.bincount(op.conn_flat, weights=fe[:, :, 0].ravel(),
                            minlength=mesh.n_nodes)
    out[:, 1] = np.bincount(op.conn_flat, weights=fe[:, :, 1].ravel(),
                            minlength=mesh.n_nodes)
    return out


def nodal_gravity(mass, gravity):
    f = np.zeros((mass.size, 2))
    f[:, 1] = -gravity * mass
    return f


def cfl_dt(mesh, params, config, valid_elements=None):
    """Stable step from the smallest current edge and the p-wave speed."""
    coords = mesh.element_coords()
    if valid_elements is not None:
        coords = coords[valid_elements]
        if coords.shape[0] == 0:
            return 1e-6
    d = coords - np.roll(coords, -1, axis=1)
    hmin = math.sqrt(float((d ** 2).sum(axis=2).min()))
    return max(config.dt_safety * hmin / params.p_wave_speed, 1e-7)


def coulomb_friction_correction(trial_tangential, normal_reaction, mu):
    """Capped tangential force: full resistance in stick, mu*N when sliding."""
    trial = np.asarray(trial_tangential, dtype=float)
    cap = mu * np.maximum(np.asarray(normal_reaction, dtype=float), 0.0)
    return -np.sign(trial) * np.minimum(np.abs(trial), cap)


def apply_frictional_base(state, mesh, mu, dt, trial_forces=None):
    """Coulomb corrections for base nodes given the current normal reactions.

    Returns an (n_base, 2) array of force corrections (tangential friction,
    normal reaction) aligned with the base node set.
    """
    base = mesh.boundary_sets[state.base_set]
    n = state.base_normal if state.base_normal is not None else np.zeros(base.size)
    if trial_forces is None:
        trial = state.nodal_mass[base] * state.v[base, 0] / dt
    else:
        trial = np.asarray(trial_forces, dtype=float)
    corr = np.zeros((base.size, 2))
    corr[:, 0] = coulomb_friction_correction(trial, n, mu)
    corr[:, 1] = n
    return corr


def _apply_constraints(state, mesh, config, dt):
    """Roller, base contact and base friction conditions on trial velocities."""
    for name, axis in state.rollers.items():
        ids = mesh.boundary_sets[name]
        state.v[ids, axis] = 0.0

    base = mesh.boundary_sets[state.base_set]
    vy = state.v[base, 1]
    near = mesh.node_coords[base, 1] <= state.base_y + 1e-9
    contact = near & (vy < 0.0)
    m = state.nodal_mass[base]
    normal = np.where(contact, -m * vy / dt, 0.0)
    state.base_normal = normal

    vx = state.v[base, 0]
    dv_cap = np.where(contact, config.base_friction * (-vy), 0.0)
    state.v[base, 0] = np.where(contact,
                                vx - np.sign(vx) * np.minimum(np.abs(vx), dv_cap),
                                vx)
    state.v[base, 1] = np.where(contact, 0.0, vy)
    # never let a base node sink below the plane
    low = mesh.node_coords[base, 1] < state.base_y
    if np.any(low):
        ids = base[low]
        mesh.node_coords[ids, 1] = state.base_y
        state.u[ids, 1] = state.base_y - mesh.reference_coords[ids, 1]
        state.v[ids, 1] = np.maximum(state.v[ids, 1], 0.0)


def _step(state, mesh, params, config, dt, law, damping):
    op = _operators(mesh, config.gauss_order)
    f = internal_forces(mesh, state.gauss.stress, config.gauss_order)
    f += nodal_gravity(state.nodal_mass, config.gravity)

    if config.gauss_order == 1 and config.hourglass_coeff > 0.0:
        f += _hourglass_viscous(mesh, state, params, config, op)

    if damping > 0.0:
        f -= damping * np.abs(f) * np.sign(state.v)

    v_before = state.v.copy()
    acc = f / state.nodal_mass[:, None]
    state.v += acc * dt
    _apply_constraints(state, mesh, config, dt)
    state.a = (state.v - v_before) / dt

    mesh.node_coords += state.v * dt
    state.u += state.v * dt

    grad, det = _gauss_gradients(mesh.element_coords(), op.dn)
    vel = state.v[mesh.elements]
    lgrad = np.einsum("eai,egaj->egij", vel, grad)
    n_pts = det.size
    de = np.zeros((n_pts, 4))
    de[:, 0] = (lgrad[..., 0, 0] * dt).ravel()
    de[:, 1] = (lgrad[..., 1, 1] * dt).ravel()
    de[:, 3] = (0.5 * (lgrad[..., 0, 1] + lgrad[..., 1, 0]) * dt).ravel()

    if law == "elastic":
        state.gauss = elastic_step(state.gauss, de, params)
    elif law == "frozen":
        state.gauss = tresca_step(state.gauss, de, params, state.strength_field)
    else:
        state.gauss = mohr_coulomb_step(state.gauss, de, params)

    state.time += dt
    if not (np.all(np.isfinite(state.v)) and np.all(np.isfinite(state.gauss.stress))):
        raise DivergenceError(f"non-finite kinematics at t={state.time:.6f}s",
                              time=state.time)
    return state


def _hourglass_viscous(mesh, state, params, config, op):
    """Flanagan-Belytschko style viscous hourglass control (1-point elements)."""
    coords = mesh.element_coords()
    vel = state.v[mesh.elements]
    grad, det = _gauss_gradients(coords, op.dn)
    b = grad[:, 0, :, :]                                     # (E,4,2)
    h = np.array([1.0, -1.0, 1.0, -1.0])
    hx = np.einsum("a,eai->ei", h, coords)                   # (E,2)
    gamma = h[None, :] - np.einsum("ei,eai->ea", hx, b)      # (E,4)
    qdot = np.einsum("ea,eai->ei", gamma, vel)               # (E,2)
    area = np.maximum(det[:, 0] * op.weights[0], 1e-300)
    coef = (config.hourglass_coeff * params.mass_density * params.p_wave_speed
            * np.sqrt(area) * 0.25)
    fe = -coef[:, None, None] * gamma[:, :, None] * qdot[:, None, :]
    out = np.zeros((mesh.n_nodes, 2))
    out[:, 0] = np.bincount(op.conn_flat, weights=fe[:, :, 0].ravel(),
                            minlength=mesh.n_nodes)
    out[:, 1] = np.bincount(op.conn_flat, weights=fe[:, :, 1].ravel(),
                            minlength=mesh.n_nodes)
    return out


def initial_state(mesh, params, config):
    """Zero-stress state with lumped masses and the standard constraints."""
    n = mesh.n_nodes
    rollers = {name: 0 for name in ("left", "right") if name in mesh.boundary_sets}
    base_y = float(mesh.reference_coords[mesh.boundary_sets["base"], 1].min())
    n_gp = mesh.n_elements * config.gauss_order ** 2
    return FemState(
        time=0.0, u=np.zeros((n, 2)), v=np.zeros((n, 2)), a=np.zeros((n, 2)),
        nodal_mass=lumped_mass(mesh, params.mass_density, config.gauss_order),
        gauss=StressStrainState.zeros(n_gp), gauss_order=config.gauss_order,
        rollers=rollers, base_y=base_y,
    )


def potential_energy_reference(mesh, density, gravity):
    """Element-mass potential energy of the reference configuration."""
    v0 = mesh.element_volumes(reference=True)
    hbar = mesh.element_coords(reference=True)[:, :, 1].mean(axis=1)
    return float(np.sum(density * v0 * gravity * hbar))


def geostatic_solve(mesh, params, config):
    """Dynamic relaxation to the gravity equilibrium under linear elasticity.

    Converged when nodal kinetic energy drops below geostatic_tolerance * PE_0
    AND the largest post-constraint out-of-balance force falls below
    geostatic_force_tolerance times the total weight (heavily damped
    relaxation can look quiescent long before it is in equilibrium).
    Velocities are then zeroed and the clock reset.
    """
    state = initial_state(mesh, params, config)
    pe0 = potential_energy_reference(mesh, params.mass_density, config.gravity)
    if pe0 == 0.0:
        return state
    tol_ke = config.geostatic_tolerance * pe0
    weight = float(state.nodal_mass.sum()) * config.gravity
    tol_f = config.geostatic_force_tolerance * weight

    # let the first gravity transient build before testing convergence
    t_min = 2.0 * (mesh.reference_coords[:, 1].max() - state.base_y) / params.p_wave_speed
    while True:
        dt = cfl_dt(mesh, params, config)
        _step(state, mesh, params, config, dt, "elastic", config.geostatic_damping)
        ke = 0.5 * float(np.sum(state.nodal_mass[:, None] * state.v ** 2))
        residual = float(np.max(state.nodal_mass[:, None] * np.abs(state.a)))
        if state.time > t_min and ke < tol_ke and residual < tol_f:
            break
        if state.time > config.geostatic_max_time:
            raise InitializationError(
                f"geostatic relaxation did not converge (KE/PE0={ke / pe0:.2e}, "
                f"residual/W={residual / weight:.2e} after {state.time:.1f}s)")
    state.v[:] = 0.0
    state.a[:] = 0.0
    state.time = 0.0
    return state


def step_failure(state, mesh, params, config, dt):
    """One explicit step with the configured plastic law; mutates state/mesh.

    Under the "frozen" strength model the per-point shear strength is fixed
    the first time this is called, from the stresses the state carries then
    (normally the geostatic field).
    """
    limit = cfl_dt(mesh, params, config, valid_elements=_valid_elements(mesh))
    if dt > limit * (1.0 + 1e-9):
        raise ValueError(f"dt={dt:.3e}s exceeds the stability limit {limit:.3e}s")
    law = config.strength_model
    if law == "frozen" and state.strength_field is None:
        state.strength_field = frozen_strength_field(state.gauss.stress, params)
    return _step(state, mesh, params, config, dt, law, config.failure_damping)


def _valid_elements(mesh):
    det0 = det_jacobian(mesh.element_coords(reference=True), 0.0, 0.0)
    det_t = det_jacobian(mesh.element_coords(), 0.0, 0.0)
    return (det_t / det0) > 0.0


def release_lateral_boundary(state, side):
    """Remove the roller on a named lateral boundary; free from then on."""
    if side in state.rollers:
        del state.rollers[side]
        state.released.add(side)
    elif side in state.released:
        warnings.warn(f"boundary '{side}' already released; ignoring")
    else:
        raise ConfigError(f"'{side}' is not an active roller boundary")
    return state


@dataclass
class EntanglementReport:
    min_ratio: float
    offending: list


def detect_entanglement(state, mesh):
    """Minimum centroid Jacobian ratio and the inverted-element list."""
    det0 = det_jacobian(mesh.element_coords(reference=True), 0.0, 0.0)
    det_t = det_jacobian(mesh.element_coords(), 0.0, 0.0)
    ratios = det_t / det0
    offending = np.flatnonzero(ratios <= 0.0)
    return EntanglementReport(min_ratio=float(ratios.min()),
                              offending=offending.tolist())
