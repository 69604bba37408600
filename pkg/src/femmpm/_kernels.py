"""Serial numba kernels for the material point solver.

All loops run in fixed particle/node order so that results are bit-identical
between runs regardless of machine or thread configuration. Each particle
sees a 3x3 node neighbourhood, which covers uGIMP supports with domain
half-lengths up to half a cell.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def mohr_coulomb_return(sig, g, lam, sphi, cphi, spsi, coh, sig_t, e, nu, depq):
    """In-place principal-space return for (n, 4) trial stresses.

    Scalar twin of the vectorized implementation in materials.py; the
    equivalence is pinned by a test. Writes the equivalent-plastic-strain
    increment per row into depq.
    """
    k = 2.0 * coh * cphi
    apex = coh * cphi / sphi if sphi > 0.0 else 0.0
    dg13_1 = 2.0 * g * (1.0 + spsi) + 2.0 * lam * spsi
    dg13_2 = 2.0 * lam * spsi
    dg13_3 = -2.0 * g * (1.0 - spsi) + 2.0 * lam * spsi
    a_diag = 4.0 * g * (1.0 + sphi * spsi) + 4.0 * lam * sphi * spsi
    b_ext = 2.0 * g * (1.0 - sphi) * (1.0 - spsi) + 4.0 * lam * sphi * spsi
    b_cmp = 2.0 * g * (1.0 + sphi) * (1.0 + spsi) + 4.0 * lam * sphi * spsi
    have_cap = np.isfinite(sig_t)

    for i in range(sig.shape[0]):
        depq[i] = 0.0
        sxx = sig[i, 0]
        syy = sig[i, 1]
        szz = sig[i, 2]
        sxy = sig[i, 3]
        s = 0.5 * (sxx + syy)
        half = 0.5 * (sxx - syy)
        r = np.sqrt(half * half + sxy * sxy)
        p1 = s + r
        p2 = s - r
        s1_max = p1 if p1 > szz else szz
        s3_min = p2 if p2 < szz else szz
        f = (s1_max - s3_min) + (s1_max + s3_min) * sphi - k
        cap_hit = have_cap and s1_max > sig_t
        if f <= 0.0 and not cap_hit:
            continue

        # descending sort of (p1, p2, szz); p1 >= p2 always; zslot in {0,1,2}
        if szz > p1:
            t1, t2, t3 = szz, p1, p2
            zslot = 0
        elif szz > p2:
            t1, t2, t3 = p1, szz, p2
            zslot = 1
        else:
            t1, t2, t3 = p1, p2, szz
            zslot = 2
        r1, r2, r3 = t1, t2, t3

        if f > 0.0:
            dl = f / a_diag
            r1 = t1 - dl * dg13_1
            r2 = t2 - dl * dg13_2
            r3 = t3 - dl * dg13_3
            past_ext = r1 < r2 - 1e-12 * abs(r2)
            past_cmp = r3 > r2 + 1e-12 * abs(r2)
            if past_ext and not past_cmp:
                f23 = (t2 - t3) + (t2 + t3) * sphi - k
                det = a_diag * a_diag - b_ext * b_ext
                dl1 = (a_diag * f - b_ext * f23) / det
                dl2 = (a_diag * f23 - b_ext * f) / det
                if dl1 >= 0.0 and dl2 >= 0.0:
                    r1 = t1 - dl1 * dg13_1 - dl2 * dg13_2
                    r2 = t2 - dl1 * dg13_2 - dl2 * dg13_1
                    r3 = t3 - dl1 * dg13_3 - dl2 * dg13_3
            elif past_cmp and not past_ext:
                f12 = (t1 - t2) + (t1 + t2) * sphi - k
                det = a_diag * a_diag - b_cmp * b_cmp
                dl1 = (a_diag * f - b_cmp * f12) / det
                dl2 = (a_diag * f12 - b_cmp * f) / det
                if dl1 >= 0.0 and dl2 >= 0.0:
                    r1 = t1 - dl1 * dg13_1 - dl2 * dg13_1
                    r2 = t2 - dl1 * dg13_2 - dl2 * dg13_3
                    r3 = t3 - dl1 * dg13_3 - dl2 * dg13_2
            tol = 1e-9 * (abs(r1) + abs(r3) + k + 1.0)
            bad = (r1 < r2 - tol) or (r2 < r3 - tol)
            if sphi > 0.0:
                if r1 > apex + tol:
                    bad = True
                if bad:
                    r1 = apex
                    r2 = apex
                    r3 = apex

        if have_cap:
            if r1 > sig_t:
                r1 = sig_t
            if r2 > sig_t:
                r2 = sig_t
            if r3 > sig_t:
                r3 = sig_t

        # map sorted slots back to (in-plane max, in-plane min, zz)
        if zslot == 0:
            q1, q2, qz = r2, r3, r1
        elif zslot == 1:
            q1, q2, qz = r1, r3, r2
        else:
            q1, q2, qz = r1, r2, r3

        # plastic strain increment from the principal stress correction
        d1 = p1 - q1
        d2 = p2 - q2
        d3 = szz - qz
        tr_d = d1 + d2 + d3
        e1 = (d1 - nu * (tr_d - d1)) / e
        e2 = (d2 - nu * (tr_d - d2)) / e
        e3 = (d3 - nu * (tr_d - d3)) / e
        em = (e1 + e2 + e3) / 3.0
        depq[i] = np.sqrt(2.0 / 3.0 * ((e1 - em) ** 2 + (e2 - em) ** 2
                                       + (e3 - em) ** 2))

        sm = 0.5 * (q1 + q2)
        hd = 0.5 * (q1 - q2)
        if r > 1e-300:
            c2t = half / r
            s2t = sxy / r
        else:
            c2t = 1.0
            s2t = 0.0
        sig[i, 0] = sm + hd * c2t
        sig[i, 1] = sm - hd * c2t
        sig[i, 2] = qz
        sig[i, 3] = hd * s2t
    return 0


@njit(cache=True)
def tresca_return(sig, g, lam, strength, sig_t, e, nu, depq):
    """Deviatoric radius cap at a per-row strength (pressure preserved).

    Works on the three principal values: the largest half-difference is
    scaled back to `strength[i]` about the unchanged center, then a tension
    cap clips every principal value.
    """
    have_cap = np.isfinite(sig_t)
    for i in range(sig.shape[0]):
        depq[i] = 0.0
        sxx = sig[i, 0]
        syy = sig[i, 1]
        szz = sig[i, 2]
        sxy = sig[i, 3]
        s = 0.5 * (sxx + syy)
        half = 0.5 * (sxx - syy)
        r = np.sqrt(half * half + sxy * sxy)
        p1 = s + r
        p2 = s - r
        s1 = p1 if p1 > szz else szz
        s3 = p2 if p2 < szz else szz
        radius = 0.5 * (s1 - s3)
        k = strength[i]
        cap_hit = have_cap and s1 > sig_t
        if radius <= k and not cap_hit:
            continue
        q1, q2, qz = p1, p2, szz
        if radius > k:
            center = 0.5 * (s1 + s3)
            scale = k / radius
            q1 = center + (p1 - center) * scale
            q2 = center + (p2 - center) * scale
            qz = center + (szz - center) * scale
        if have_cap:
            if q1 > sig_t:
                q1 = sig_t
            if q2 > sig_t:
                q2 = sig_t
            if qz > sig_t:
                qz = sig_t

        d1 = p1 - q1
        d2 = p2 - q2
        d3 = szz - qz
        tr_d = d1 + d2 + d3
        e1 = (d1 - nu * (tr_d - d1)) / e
        e2 = (d2 - nu * (tr_d - d2)) / e
        e3 = (d3 - nu * (tr_d - d3)) / e
        em = (e1 + e2 + e3) / 3.0
        depq[i] = np.sqrt(2.0 / 3.0 * ((e1 - em) ** 2 + (e2 - em) ** 2
                                       + (e3 - em) ** 2))

        sm = 0.5 * (q1 + q2)
        hd = 0.5 * (q1 - q2)
        if r > 1e-300:
            c2t = half / r
            s2t = sxy / r
        else:
            c2t = 1.0
            s2t = 0.0
        sig[i, 0] = sm + hd * c2t
        sig[i, 1] = sm - hd * c2t
        sig[i, 2] = qz
        sig[i, 3] = hd * s2t
    return 0


@njit(cache=True)
def gimp_1d(rel, lp, dx):
    """uGIMP weight and gradient along one axis; rel = x_particle - x_node."""
    a = abs(rel)
    if a < lp:
        return 1.0 - (rel * rel + lp * lp) / (2.0 * dx * lp), -rel / (dx * lp)
    if a < dx - lp:
        if rel > 0.0:
            return 1.0 - a / dx, -1.0 / dx
        return 1.0 - a / dx, 1.0 / dx
    if a < dx + lp:
        t = dx + lp - a
        if rel > 0.0:
            return t * t / (4.0 * dx * lp), -t / (2.0 * dx * lp)
        return t * t / (4.0 * dx * lp), t / (2.0 * dx * lp)
    return 0.0, 0.0


@njit(cache=True)
def p2g(px, py, vx, vy, sxx, syy, sxy, vol, mass, lpx, lpy,
        x0, y0, dx, gx, gy,
        g_mass, g_momx, g_momy, g_fintx, g_finty, g_fextx, g_fexty):
    """Scatter mass, momentum and force contributions onto the grid.

    Returns -1 on success or the index of the first particle whose support
    leaves the grid.
    """
    nnx, nny = g_mass.shape
    for p in range(px.shape[0]):
        bi = int(np.floor((px[p] - lpx[p] - x0) / dx))
        bj = int(np.floor((py[p] - lpy[p] - y0) / dx))
        if bi < 0 or bj < 0 or bi + 2 > nnx - 1 or bj + 2 > nny - 1:
            return p
        for a in range(3):
            xn = x0 + (bi + a) * dx
            wx, dwx = gimp_1d(px[p] - xn, lpx[p], dx)
            if wx == 0.0:
                continue
            for b in range(3):
                yn = y0 + (bj + b) * dx
                wy, dwy = gimp_1d(py[p] - yn, lpy[p], dx)
                if wy == 0.0:
                    continue
                w = wx * wy
                gradx = dwx * wy
                grady = wx * dwy
                i = bi + a
                j = bj + b
                wm = w * mass[p]
                g_mass[i, j] += wm
                g_momx[i, j] += wm * vx[p]
                g_momy[i, j] += wm * vy[p]
                g_fintx[i, j] -= (gradx * sxx[p] + grady * sxy[p]) * vol[p]
                g_finty[i, j] -= (gradx * sxy[p] + grady * syy[p]) * vol[p]
                g_fextx[i, j] += wm * gx
                g_fexty[i, j] += wm * gy
    return -1


@njit(cache=True)
def grid_update(g_mass, g_momx, g_momy, g_fintx, g_finty, g_fextx, g_fexty,
                g_vxn, g_vyn, g_ax, g_ay,
                dt, alpha, mu, mass_tol,
                jbase, iwall_l, iwall_r, jwall_t):
    """Momentum update with Cundall damping, walls and base Coulomb friction.

    Writes updated nodal velocities and the effective accelerations
    (velocity change over dt, constraints included) used by the FLIP update.
    """
    nnx, nny = g_mass.shape
    for i in range(nnx):
        for j in range(nny):
            m = g_mass[i, j]
            if m <= mass_tol or m <= 0.0:
                g_vxn[i, j] = 0.0
                g_vyn[i, j] = 0.0
                g_ax[i, j] = 0.0
                g_ay[i, j] = 0.0
                continue
            vx0 = g_momx[i, j] / m
            vy0 = g_momy[i, j] / m
            fx = g_fintx[i, j] + g_fextx[i, j]
            fy = g_finty[i, j] + g_fexty[i, j]
            if alpha > 0.0:
                if vx0 > 0.0:
                    fx -= alpha * abs(fx)
                elif vx0 < 0.0:
                    fx += alpha * abs(fx)
                if vy0 > 0.0:
                    fy -= alpha * abs(fy)
                elif vy0 < 0.0:
                    fy += alpha * abs(fy)
            vx = vx0 + fx / m * dt
            vy = vy0 + fy / m * dt
            if iwall_l >= 0 and i <= iwall_l and vx < 0.0:
                vx = 0.0
            if iwall_r >= 0 and i >= iwall_r and vx > 0.0:
                vx = 0.0
            if jwall_t >= 0 and j >= jwall_t and vy > 0.0:
                vy = 0.0
            if jbase >= 0 and j <= jbase and vy < 0.0:
                cap = mu * (-vy)
                if abs(vx) <= cap:
                    vx = 0.0
                elif vx > 0.0:
                    vx -= cap
                else:
                    vx += cap
                vy = 0.0
            g_vxn[i, j] = vx
            g_vyn[i, j] = vy
            g_ax[i, j] = (vx - vx0) / dt
            g_ay[i, j] = (vy - vy0) / dt
    return 0


@njit(cache=True)
def g2p(px, py, vx, vy, lpx, lpy, x0, y0, dx,
        g_vxn, g_vyn, g_ax, g_ay, dt, pic_blend,
        dexx, deyy, dexy):
    """Gather velocities back to particles, move them, return strain rates.

    FLIP increment blended with PIC per `pic_blend`; positions advect with
    the updated grid velocity field. Returns -1 or the index of the first
    escaping particle.
    """
    nnx, nny = g_vxn.shape
    for p in range(px.shape[0]):
        bi = int(np.floor((px[p] - lpx[p] - x0) / dx))
        bj = int(np.floor((py[p] - lpy[p] - y0) / dx))
        if bi < 0 or bj < 0 or bi + 2 > nnx - 1 or bj + 2 > nny - 1:
            return p
        dvx = 0.0
        dvy = 0.0
        vpx = 0.0
        vpy = 0.0
        lxx = 0.0
        lxy = 0.0
        lyx = 0.0
        lyy = 0.0
        for a in range(3):
            xn = x0 + (bi + a) * dx
            wx, dwx = gimp_1d(px[p] - xn, lpx[p], dx)
            if wx == 0.0:
                continue
            for b in range(3):
                yn = y0 + (bj + b) * dx
                wy, dwy = gimp_1d(py[p] - yn, lpy[p], dx)
                if wy == 0.0:
                    continue
                w = wx * wy
                gradx = dwx * wy
                grady = wx * dwy
                i = bi + a
                j = bj + b
                dvx += w * g_ax[i, j] * dt
                dvy += w * g_ay[i, j] * dt
                vpx += w * g_vxn[i, j]
                vpy += w * g_vyn[i, j]
                lxx += gradx * g_vxn[i, j]
                lxy += grady * g_vxn[i, j]
                lyx += gradx * g_vyn[i, j]
                lyy += grady * g_vyn[i, j]
        flip_x = vx[p] + dvx
        flip_y = vy[p] + dvy
        vx[p] = (1.0 - pic_blend) * flip_x + pic_blend * vpx
        vy[p] = (1.0 - pic_blend) * flip_y + pic_blend * vpy
        px[p] += vpx * dt
        py[p] += vpy * dt
        dexx[p] = lxx * dt
        deyy[p] = lyy * dt
        dexy[p] = 0.5 * (lxy + lyx) * dt
    return -1
