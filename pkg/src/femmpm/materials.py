"""Plane-strain constitutive models shared by the mesh and particle solvers.

Stress and strain are stored as (n, 4) arrays with component order
(xx, yy, zz, xy); the shear entry is the tensor component (gamma/2).
Tension is positive, so geostatic stresses are negative.

The elastoplastic update is an elastic predictor followed by a closed-form
return in principal-stress space: main-plane return first, then the
triaxial compression/extension edges when the returned principal values
lose their ordering, and the apex as a last resort. Flow is non-associated
through the dilation angle.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConstitutiveError

_XX, _YY, _ZZ, _XY = 0, 1, 2, 3


@dataclass(frozen=True)
class MaterialParams:
    """Density, elastic constants and Mohr-Coulomb strength parameters.

    Angles are in degrees. `tension_cutoff=None` means the apex limit
    cohesion/tan(friction_angle) (no cap for a frictionless material).
    """

    mass_density: float
    youngs_modulus: float
    poissons_ratio: float
    friction_angle: float = 0.0
    cohesion: float = 0.0
    dilation_angle: float = 0.0
    tension_cutoff: float = None

    def __post_init__(self):
        if self.mass_density <= 0:
            raise ConfigError("mass_density must be positive")
        if self.youngs_modulus <= 0:
            raise ConfigError("youngs_modulus must be positive")
        if not 0.0 <= self.poissons_ratio < 0.5:
            raise ConfigError("poissons_ratio must lie in [0, 0.5)")
        if not 0.0 <= self.dilation_angle <= self.friction_angle < 90.0:
            raise ConfigError("need 0 <= dilation_angle <= friction_angle < 90")
        if self.cohesion < 0:
            raise ConfigError("cohesion must be non-negative")
        if self.tension_cutoff is not None and self.tension_cutoff < 0:
            raise ConfigError("tension_cutoff must be non-negative")

    @property
    def shear_modulus(self):
        return self.youngs_modulus / (2.0 * (1.0 + self.poissons_ratio))

    @property
    def lame_lambda(self):
        e, nu = self.youngs_modulus, self.poissons_ratio
        return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def constrained_modulus(self):
        return self.lame_lambda + 2.0 * self.shear_modulus

    @property
    def p_wave_speed(self):
        return math.sqrt(self.constrained_modulus / self.mass_density)

    def tension_limit(self):
        """Effective tensile cap on principal stresses (may be inf)."""
        phi = math.radians(self.friction_angle)
        apex = self.cohesion / math.tan(phi) if phi > 0 else math.inf
        if self.tension_cutoff is None:
            return apex
        return min(self.tension_cutoff, apex)


@dataclass
class StressStrainState:
    """Stress, accumulated strain and equivalent plastic strain for n points."""

    stress: np.ndarray
    strain: np.ndarray
    plastic_strain: np.ndarray = None

    def __post_init__(self):
        self.stress = np.atleast_2d(np.asarray(self.stress, dtype=float))
        self.strain = np.atleast_2d(np.asarray(self.strain, dtype=float))
        if self.plastic_strain is None:
            self.plastic_strain = np.zeros(self.stress.shape[0])
        else:
            self.plastic_strain = np.atleast_1d(np.asarray(self.plastic_strain, dtype=float))

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 4)), np.zeros((n, 4)), np.zeros(n))

    @property
    def n_points(self):
        return self.stress.shape[0]

    def copy(self):
        return StressStrainState(self.stress.copy(), self.strain.copy(),
                                 self.plastic_strain.copy())


def elastic_step(state, dstrain, params):
    """Isotropic linear elastic update (plane strain when dstrain_zz = 0)."""
    de = np.atleast_2d(np.asarray(dstrain, dtype=float))
    if not np.all(np.isfinite(de)):
        raise ConstitutiveError("non-finite strain increment")
    g, lam = params.shear_modulus, params.lame_lambda
    tr = de[:, _XX] + de[:, _YY] + de[:, _ZZ]
    ds = np.empty_like(de)
    ds[:, _XX] = lam * tr + 2.0 * g * de[:, _XX]
    ds[:, _YY] = lam * tr + 2.0 * g * de[:, _YY]
    ds[:, _ZZ] = lam * tr + 2.0 * g * de[:, _ZZ]
    ds[:, _XY] = 2.0 * g * de[:, _XY]
    return StressStrainState(state.stress + ds, state.strain + de,
                             state.plastic_strain.copy())


def _principal_decompose(sig):
    """In-plane principal values plus sigma_zz, with the rotation retained."""
    s = 0.5 * (sig[:, _XX] + sig[:, _YY])
    half = 0.5 * (sig[:, _XX] - sig[:, _YY])
    r = np.sqrt(half ** 2 + sig[:, _XY] ** 2)
    safe = r > 1e-300
    c2t = np.where(safe, np.divide(half, r, out=np.ones_like(r), where=safe), 1.0)
    s2t = np.where(safe, np.divide(sig[:, _XY], r, out=np.zeros_like(r), where=safe), 0.0)
    prin = np.column_stack([s + r, s - r, sig[:, _ZZ]])
    return prin, c2t, s2t


def _principal_rebuild(prin, c2t, s2t):
    """Tensor components from (in-plane max, in-plane min, zz) and rotation."""
    s = 0.5 * (prin[:, 0] + prin[:, 1])
    half = 0.5 * (prin[:, 0] - prin[:, 1])
    sig = np.empty((prin.shape[0], 4))
    sig[:, _XX] = s + half * c2t
    sig[:, _YY] = s - half * c2t
    sig[:, _ZZ] = prin[:, 2]
    sig[:, _XY] = half * s2t
    return sig


def mohr_coulomb_yield(stress, params):
    """Largest Mohr-Coulomb yield value over the three principal planes.

    Positive means the state lies outside the strength envelope.
    """
    sig = np.atleast_2d(np.asarray(stress, dtype=float))
    prin, _, _ = _principal_decompose(sig)
    srt = -np.sort(-prin, axis=1)
    sphi = math.sin(math.radians(params.friction_angle))
    k = 2.0 * params.cohesion * math.cos(math.radians(params.friction_angle))
    s1, s3 = srt[:, 0], srt[:, 2]
    return (s1 - s3) + (s1 + s3) * sphi - k


def mohr_coulomb_step(state, dstrain, params):
    """Elastic predictor plus Mohr-Coulomb return with tension cap.

    Yield screening runs on every point with cheap extrema; the sorted
    principal return only touches the violating subset. Equivalent plastic
    strain accumulates the deviatoric norm of the plastic strain increment
    recovered from the stress correction.
    """
    from . import _kernels

    trial = elastic_step(state, dstrain, params)
    sig_new = trial.stress.copy()
    depq = np.empty(sig_new.shape[0])
    _kernels.mohr_coulomb_return(
        sig_new,
        params.shear_modulus, params.lame_lambda,
        math.sin(math.radians(params.friction_angle)),
        math.cos(math.radians(params.friction_angle)),
        math.sin(math.radians(params.dilation_angle)),
        params.cohesion, params.tension_limit(),
        params.youngs_modulus, params.poissons_ratio, depq)
    if not np.all(np.isfinite(sig_new)):
        where = np.flatnonzero(~np.all(np.isfinite(sig_new), axis=1))
        raise ConstitutiveError("return mapping produced non-finite stress",
                                where=where[:10].tolist())
    return StressStrainState(sig_new, trial.strain,
                             state.plastic_strain + depq)


def mohr_coulomb_step_reference(state, dstrain, params):
    """Pure-numpy twin of mohr_coulomb_step, kept as the readable reference."""
    trial = elastic_step(state, dstrain, params)
    sig_tr = trial.stress

    sphi = math.sin(math.radians(params.friction_angle))
    cphi = math.cos(math.radians(params.friction_angle))
    coh = params.cohesion
    k = 2.0 * coh * cphi
    sig_t = params.tension_limit()

    # cheap screening: s1/s3 are extrema of the three principal values
    s_mid = 0.5 * (sig_tr[:, _XX] + sig_tr[:, _YY])
    half = 0.5 * (sig_tr[:, _XX] - sig_tr[:, _YY])
    r_in = np.sqrt(half ** 2 + sig_tr[:, _XY] ** 2)
    s1_all = np.maximum(s_mid + r_in, sig_tr[:, _ZZ])
    s3_all = np.minimum(s_mid - r_in, sig_tr[:, _ZZ])
    f_all = (s1_all - s3_all) + (s1_all + s3_all) * sphi - k
    changed_mask = f_all > 0.0
    if np.isfinite(sig_t):
        changed_mask |= s1_all > sig_t
    if not np.any(changed_mask):
        return trial

    sub = np.flatnonzero(changed_mask)
    return _mc_return_subset(state, trial, sub, params)


def _mc_return_subset(state, trial, sub, params):
    """Full principal-space return applied to the selected rows of `trial`."""
    sig_tr = trial.stress[sub]

    prin_raw, c2t, s2t = _principal_decompose(sig_tr)
    order = np.argsort(-prin_raw, axis=1, kind="stable")
    prin = np.take_along_axis(prin_raw, order, axis=1)

    g, lam = params.shear_modulus, params.lame_lambda
    sphi = math.sin(math.radians(params.friction_angle))
    cphi = math.cos(math.radians(params.friction_angle))
    spsi = math.sin(math.radians(params.dilation_angle))
    coh = params.cohesion
    k = 2.0 * coh * cphi
    sig_t = params.tension_limit()

    s1, s2, s3 = prin[:, 0].copy(), prin[:, 1].copy(), prin[:, 2].copy()
    f_main = (s1 - s3) + (s1 + s3) * sphi - k
    yielding = f_main > 0.0
    capped = np.isfinite(sig_t) & (prin[:, 0] > sig_t)

    if np.any(yielding):
        idx = np.flatnonzero(yielding)
        t1, t2, t3 = s1[idx], s2[idx], s3[idx]
        ft = f_main[idx]

        # return directions premultiplied by the elastic stiffness
        dg13 = np.array([2 * g * (1 + spsi) + 2 * lam * spsi,
                         2 * lam * spsi,
                         -2 * g * (1 - spsi) + 2 * lam * spsi])
        dg12 = np.array([dg13[0], dg13[2], dg13[1]])
        dg23 = np.array([dg13[1], dg13[0], dg13[2]])
        a_diag = 4 * g * (1 + sphi * spsi) + 4 * lam * sphi * spsi

        dl = ft / a_diag
        r1 = t1 - dl * dg13[0]
        r2 = t2 - dl * dg13[1]
        r3 = t3 - dl * dg13[2]

        past_ext = r1 < r2 - 1e-12 * np.abs(r2)   # beyond the sigma1=sigma2 edge
        past_cmp = r3 > r2 + 1e-12 * np.abs(r2)   # beyond the sigma2=sigma3 edge
        ext = past_ext & ~past_cmp
        cmp_ = past_cmp & ~past_ext

        if np.any(ext):
            f23 = (t2 - t3) + (t2 + t3) * sphi - k
            b = 2 * g * (1 - sphi) * (1 - spsi) + 4 * lam * sphi * spsi
            det = a_diag ** 2 - b ** 2
            dl1 = (a_diag * ft - b * f23) / det
            dl2 = (a_diag * f23 - b * ft) / det
            ok = ext & (dl1 >= 0) & (dl2 >= 0)
            r1 = np.where(ok, t1 - dl1 * dg13[0] - dl2 * dg23[0], r1)
            r2 = np.where(ok, t2 - dl1 * dg13[1] - dl2 * dg23[1], r2)
            r3 = np.where(ok, t3 - dl1 * dg13[2] - dl2 * dg23[2], r3)

        if np.any(cmp_):
            f12 = (t1 - t2) + (t1 + t2) * sphi - k
            b = 2 * g * (1 + sphi) * (1 + spsi) + 4 * lam * sphi * spsi
            det = a_diag ** 2 - b ** 2
            dl1 = (a_diag * ft - b * f12) / det
            dl2 = (a_diag * f12 - b * ft) / det
            ok = cmp_ & (dl1 >= 0) & (dl2 >= 0)
            r1 = np.where(ok, t1 - dl1 * dg13[0] - dl2 * dg12[0], r1)
            r2 = np.where(ok, t2 - dl1 * dg13[1] - dl2 * dg12[1], r2)
            r3 = np.where(ok, t3 - dl1 * dg13[2] - dl2 * dg12[2], r3)

        # anything still unordered (or past the cone tip) collapses to the apex
        tol = 1e-9 * (np.abs(r1) + np.abs(r3) + k + 1.0)
        bad = (r1 < r2 - tol) | (r2 < r3 - tol)
        if sphi > 0:
            apex = coh * cphi / sphi
            bad |= r1 > apex + tol
            r1 = np.where(bad, apex, r1)
            r2 = np.where(bad, apex, r2)
            r3 = np.where(bad, apex, r3)

        s1[idx], s2[idx], s3[idx] = r1, r2, r3

    changed = yielding | capped
    if not np.any(changed):
        return trial

    # tensile cap on every principal component (moves states inward only)
    if np.isfinite(sig_t):
        s1 = np.minimum(s1, sig_t)
        s2 = np.minimum(s2, sig_t)
        s3 = np.minimum(s3, sig_t)

    prin_new_sorted = np.column_stack([s1, s2, s3])
    inv = np.argsort(order, axis=1)
    prin_new = np.take_along_axis(prin_new_sorted, inv, axis=1)
    rebuilt = _principal_rebuild(prin_new, c2t, s2t)

    # untouched states keep the elastic prediction bit-for-bit
    sig_new = trial.stress.copy()
    rows = sub[changed]
    sig_new[rows] = rebuilt[changed]

    if not np.all(np.isfinite(sig_new[rows])):
        where = rows[~np.all(np.isfinite(sig_new[rows]), axis=1)]
        raise ConstitutiveError("return mapping produced non-finite stress",
                                where=where[:10].tolist())

    # plastic strain increment from the stress correction via elastic compliance
    dprin = np.where(changed[:, None], prin_raw - prin_new, 0.0)
    e, nu = params.youngs_modulus, params.poissons_ratio
    dep = (dprin - nu * (dprin.sum(axis=1, keepdims=True) - dprin)) / e
    tr = dep.sum(axis=1) / 3.0
    dev = dep - tr[:, None]
    depq = np.sqrt(2.0 / 3.0 * np.sum(dev ** 2, axis=1))
    plastic = state.plastic_strain.copy()
    plastic[sub] += depq

    return StressStrainState(sig_new, trial.strain, plastic)


def frozen_strength_field(initial_stress, params, floor=None):
    """Per-point pressure-independent shear strength from an initial state.

    Maps the Mohr-Coulomb envelope onto an equivalent Tresca strength at the
    initial mean stress, k = c cos(phi) - sin(phi) (s1+s3)/2, the usual way a
    pressure-independent model is calibrated against a frictional one. Used
    by the mesh phase so that buried material keeps its overburden strength
    wherever it later flows.
    """
    sig = np.atleast_2d(np.asarray(initial_stress, dtype=float))
    prin, _, _ = _principal_decompose(sig)
    s1 = prin.max(axis=1)
    s3 = prin.min(axis=1)
    sphi = math.sin(math.radians(params.friction_angle))
    cphi = math.cos(math.radians(params.friction_angle))
    k = params.cohesion * cphi - sphi * 0.5 * (s1 + s3)
    if floor is None:
        floor = params.cohesion * cphi
    return np.maximum(k, floor)


def tresca_step(state, dstrain, params, strength):
    """Elastic predictor with a radius cap at a per-point shear strength.

    The deviatoric return preserves the mean stress; `strength` is the
    largest admissible (s1 - s3)/2 in principal space.
    """
    from . import _kernels

    trial = elastic_step(state, dstrain, params)
    sig_new = trial.stress.copy()
    depq = np.empty(sig_new.shape[0])
    strength = np.broadcast_to(np.asarray(strength, dtype=float),
                               (sig_new.shape[0],))
    _kernels.tresca_return(
        sig_new, params.shear_modulus, params.lame_lambda,
        np.ascontiguousarray(strength),
        params.tension_limit() if params.tension_cutoff is not None else math.inf,
        params.youngs_modulus, params.poissons_ratio, depq)
    if not np.all(np.isfinite(sig_new)):
        raise ConstitutiveError("strength-capped update produced non-finite stress")
    return StressStrainState(sig_new, trial.strain,
                             state.plastic_strain + depq)


def deviatoric_strain(state):
    """Scalar shear-strain invariant sqrt(2/3 e:e) per point."""
    eps = state.strain if isinstance(state, StressStrainState) else np.atleast_2d(state)
    if not np.all(np.isfinite(eps)):
        raise ConstitutiveError("non-finite strain tensor")
    tr = (eps[:, _XX] + eps[:, _YY] + eps[:, _ZZ]) / 3.0
    exx = eps[:, _XX] - tr
    eyy = eps[:, _YY] - tr
    ezz = eps[:, _ZZ] - tr
    ee = exx ** 2 + eyy ** 2 + ezz ** 2 + 2.0 * eps[:, _XY] ** 2
    return np.sqrt(2.0 / 3.0 * ee)
