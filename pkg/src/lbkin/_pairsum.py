"""Hot pair-sum kernels for the collision operator (numba, numpy fallback).

Everything quadratic in the node count lives here: the pair flux of the
weak-form collision rate, coefficient (moment) fields for the semi-implicit
and linearized paths, and the pairwise diagnostic functionals.  The public
dispatchers at the bottom pick the numba implementation when it is
available and the vectorized numpy one otherwise (or when the environment
variable LBKIN_DISABLE_NUMBA is set).

Determinism contract
--------------------
Work is decomposed into `nslabs` contiguous index slabs balanced by pair
count.  Each slab accumulates into its own buffer and the buffers are
merged in slab order, so results are *bitwise* reproducible for a fixed
slab count regardless of how many OS threads execute the slabs.  Changing
the slab count only reassociates the floating-point sums (relative
differences at the 1e-15 scale).  The CLI exposes the slab count as
--threads.

Radial-weight modes
-------------------
The d×d kernel tensor for a pair is (2π)^{-d}/|w| · Σ_angular (k̂⊗k̂) I(Z);
the angular structure is exact (two antipodal directions for d=2, a
trapezoid circle for d=3) and I(Z) comes in three flavors:

  mode 0   Landau, ε ≡ 1: B = (L/|w|)(Id − ŵ⊗ŵ) in closed form;
  mode 1   directional table I over (direction, u), bilinear/trilinear,
           built from a ScreeningTable of the evolving field;
  mode 2   isotropic 1D table I(|u|) for fields whose screening is the
           equilibrium one (closed-form Maxwellian ε), linear in |u|.

Tables arrive pre-scaled by (2π)^{-d} so the inner loops never touch the
measure constant.
"""

import math
import os

import numpy as np

HAVE_NUMBA = False
if not os.environ.get("LBKIN_DISABLE_NUMBA"):
    try:
        from numba import njit, prange
        HAVE_NUMBA = True
    except ImportError:
        pass

if not HAVE_NUMBA:
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        if args and callable(args[0]):
            return args[0]
        return wrap

    def prange(*args):
        return range(*args)

__all__ = [
    "HAVE_NUMBA",
    "WeightTables",
    "slab_bounds",
    "pair_flux",
    "moment_fields",
    "landau_entropy_dissipation",
    "screened_quadratic_form",
]


class WeightTables:
    """Bundle of per-run radial-weight data handed to the pair kernels.

    mode 0: only `lconst` is live; mode 1: `itab` (ndirs, nu) with the
    angular offset-grid step and the u-grid origin/step; mode 2: `utab`
    over u1d = u1_0 + du1·arange(len(utab)) with u1_0 = 0 (even profile).
    Unused arrays are 1-element dummies so the jitted signatures stay
    uniform.
    """

    def __init__(self, mode, d, lconst=0.0, itab=None, step=0.0, u0=0.0,
                 du=0.0, utab=None, du1=0.0, ring_polar=None, n_azimuth=0,
                 circle_nodes=32):
        self.mode = int(mode)
        self.d = int(d)
        self.lconst = float(lconst)
        self.itab = np.ascontiguousarray(
            itab if itab is not None else np.zeros((1, 1)))
        self.step = float(step)
        self.u0 = float(u0)
        self.du = float(du)
        self.utab = np.ascontiguousarray(
            utab if utab is not None else np.zeros(1))
        self.du1 = float(du1)
        self.ring_polar = np.ascontiguousarray(
            ring_polar if ring_polar is not None else np.zeros(1))
        self.n_azimuth = int(n_azimuth)
        ang = 2.0 * math.pi * (np.arange(circle_nodes) + 0.5) / circle_nodes
        self.circle_cos = np.cos(ang)
        self.circle_sin = np.sin(ang)


def slab_bounds(n, nslabs):
    """Split rows 0..n-1 into nslabs contiguous slabs balanced by the
    i<j pair count n-1-i of each row."""
    nslabs = max(1, min(int(nslabs), n))
    total = n * (n - 1) // 2
    cum = np.cumsum(np.concatenate([[0.0], n - 1.0 - np.arange(n)]))
    targets = total * np.arange(1, nslabs) / nslabs
    cuts = np.searchsorted(cum, targets)
    bounds = np.unique(np.concatenate([[0], cuts, [n]])).astype(np.int64)
    return bounds


class PairGeometry2:
    """Static pair geometry for a square d=2 lattice.

    v_i − v_j depends only on the index offset, so the unit normal k̂₀,
    1/|w|, and (for directional tables with angular step `step`) the
    direction-grid cell (m0, fm) are tabulated once over the (2n−1)²
    distinct offsets.  This removes atan2/sqrt/hypot from the O(N²) flux
    loop entirely.
    """

    def __init__(self, nodes, step, ndirs):
        axis = np.unique(nodes[:, 0])
        n = axis.size
        h = float(axis[1] - axis[0])
        self.ix = np.rint((nodes[:, 0] - axis[0]) / h).astype(np.int64)
        self.iy = np.rint((nodes[:, 1] - axis[0]) / h).astype(np.int64)
        self.noff = n - 1
        self.span = 2 * n - 1
        di = np.arange(-(n - 1), n, dtype=np.float64) * h
        WX = np.broadcast_to(di[:, None], (self.span, self.span))
        WY = np.broadcast_to(di[None, :], (self.span, self.span))
        wn = np.hypot(WX, WY)
        ok = wn > 0.0
        inv = np.zeros_like(wn)
        inv[ok] = 1.0 / wn[ok]
        self.inv = np.ascontiguousarray(inv.reshape(-1))
        self.k0x = np.ascontiguousarray((-WY * inv).reshape(-1))
        self.k0y = np.ascontiguousarray((WX * inv).reshape(-1))
        if step > 0.0 and ndirs > 0:
            t = np.arctan2(self.k0y, self.k0x)
            t = np.where(t < 0.0, t + 2.0 * math.pi, t)
            pos = t / step - 0.5
            m0 = np.floor(pos)
            self.fm = np.ascontiguousarray(pos - m0)
            self.m0 = np.ascontiguousarray(m0.astype(np.int64) % ndirs)
        else:
            self.m0 = np.zeros(self.span * self.span, dtype=np.int64)
            self.fm = np.zeros(self.span * self.span)


_GEOM_CACHE = {}


def pair_geometry_2d(nodes, wt):
    """Cached PairGeometry2 for these nodes and this weight bundle's
    direction grid."""
    axis0 = float(nodes[0, 0])
    n2 = nodes.shape[0]
    ndirs = wt.itab.shape[0] if wt.mode == 1 else 0
    key = (n2, axis0, float(nodes[-1, 0]), wt.step, ndirs)
    geom = _GEOM_CACHE.get(key)
    if geom is None:
        geom = PairGeometry2(nodes, wt.step, ndirs)
        if len(_GEOM_CACHE) > 8:
            _GEOM_CACHE.clear()
        _GEOM_CACHE[key] = geom
    return geom


# ----------------------------------------------------------------------
# numba kernels, d=2
# ----------------------------------------------------------------------

@njit(cache=True)
def _lookup2(itab, step, u0, du, utab, du1, mode, lconst,
             k0x, k0y, u):
    """Σ over the two antipodal hyperplane directions of I, pre-scaled."""
    if mode == 0:
        return lconst
    if mode == 2:
        nu1 = utab.shape[0]
        up = abs(u) / du1
        j0 = int(up)
        if j0 >= nu1 - 1:
            return 2.0 * utab[nu1 - 1]
        fu = up - j0
        return 2.0 * ((1.0 - fu) * utab[j0] + fu * utab[j0 + 1])
    ndirs = itab.shape[0]
    nu = itab.shape[1]
    half = ndirs // 2
    t = math.atan2(k0y, k0x)
    if t < 0.0:
        t += 2.0 * math.pi
    pos = t / step - 0.5
    m0 = int(math.floor(pos))
    fm = pos - m0
    m0 = m0 % ndirs
    m1 = (m0 + 1) % ndirs
    tot = 0.0
    for s in range(2):
        if s == 0:
            uq = u
            r0 = m0
            r1 = m1
        else:
            uq = -u
            r0 = (m0 + half) % ndirs
            r1 = (m1 + half) % ndirs
        up = (uq - u0) / du
        j0 = int(math.floor(up))
        if j0 < 0:
            j0 = 0
            fu = 0.0
        elif j0 >= nu - 1:
            j0 = nu - 2
            fu = 1.0
        else:
            fu = up - j0
        a = (1.0 - fu) * itab[r0, j0] + fu * itab[r0, j0 + 1]
        b = (1.0 - fu) * itab[r1, j0] + fu * itab[r1, j0 + 1]
        tot += (1.0 - fm) * a + fm * b
    return tot


@njit(cache=True)
def _flux2_slab(nodes, F, G, ix, iy, noff, span, gk0x, gk0y, ginv, gm0, gfm,
                itab, u0, du, utab, du1, mode, lconst, log_form,
                i_lo, i_hi, Q):
    n = nodes.shape[0]
    ndirs = itab.shape[0]
    nu = itab.shape[1]
    half = ndirs // 2
    nu1 = utab.shape[0]
    for i in range(i_lo, i_hi):
        vix = nodes[i, 0]
        viy = nodes[i, 1]
        fi = F[i]
        gix = G[i, 0]
        giy = G[i, 1]
        base_x = (ix[i] + noff) * span
        iyi = iy[i] + noff
        qx = 0.0
        qy = 0.0
        for j in range(i + 1, n):
            idx = base_x - ix[j] * span + (iyi - iy[j])
            inv = ginv[idx]
            k0x = gk0x[idx]
            k0y = gk0y[idx]
            u = k0x * vix + k0y * viy
            if mode == 0:
                ii = lconst
            elif mode == 2:
                up = abs(u) / du1
                j0 = int(up)
                if j0 >= nu1 - 1:
                    ii = 2.0 * utab[nu1 - 1]
                else:
                    fu = up - j0
                    ii = 2.0 * ((1.0 - fu) * utab[j0] + fu * utab[j0 + 1])
            else:
                m0 = gm0[idx]
                fm = gfm[idx]
                m1 = m0 + 1
                if m1 == ndirs:
                    m1 = 0
                mh0 = m0 + half
                if mh0 >= ndirs:
                    mh0 -= ndirs
                mh1 = mh0 + 1
                if mh1 == ndirs:
                    mh1 = 0
                up = (u - u0) / du
                j0 = int(math.floor(up))
                if j0 < 0:
                    j0 = 0
                    fu = 0.0
                elif j0 >= nu - 1:
                    j0 = nu - 2
                    fu = 1.0
                else:
                    fu = up - j0
                a = (1.0 - fu) * itab[m0, j0] + fu * itab[m0, j0 + 1]
                b = (1.0 - fu) * itab[m1, j0] + fu * itab[m1, j0 + 1]
                ii = (1.0 - fm) * a + fm * b
                up = (-u - u0) / du
                j0 = int(math.floor(up))
                if j0 < 0:
                    j0 = 0
                    fu = 0.0
                elif j0 >= nu - 1:
                    j0 = nu - 2
                    fu = 1.0
                else:
                    fu = up - j0
                a = (1.0 - fu) * itab[mh0, j0] + fu * itab[mh0, j0 + 1]
                b = (1.0 - fu) * itab[mh1, j0] + fu * itab[mh1, j0 + 1]
                ii += (1.0 - fm) * a + fm * b
            c = ii * inv
            si = k0x * gix + k0y * giy
            sj = k0x * G[j, 0] + k0y * G[j, 1]
            if log_form:
                val = c * fi * F[j] * (si - sj)
            else:
                val = c * (F[j] * si - fi * sj)
            qx += val * k0x
            qy += val * k0y
            Q[j, 0] -= val * k0x
            Q[j, 1] -= val * k0y
        Q[i, 0] += qx
        Q[i, 1] += qy


@njit(cache=True, parallel=True)
def _flux2_par(nodes, F, G, ix, iy, noff, span, gk0x, gk0y, ginv, gm0, gfm,
               itab, u0, du, utab, du1, mode, lconst, log_form, bounds, Qbuf):
    for c in prange(bounds.shape[0] - 1):
        _flux2_slab(nodes, F, G, ix, iy, noff, span, gk0x, gk0y, ginv,
                    gm0, gfm, itab, u0, du, utab, du1, mode, lconst,
                    log_form, bounds[c], bounds[c + 1], Qbuf[c])


@njit(cache=True)
def _moments2_slab(nodes, a, X, itab, step, u0, du, utab, du1, mode, lconst,
                   i_lo, i_hi, Apk, Bv):
    n = nodes.shape[0]
    for i in range(i_lo, i_hi):
        vix = nodes[i, 0]
        viy = nodes[i, 1]
        axx = 0.0
        axy = 0.0
        ayy = 0.0
        bx = 0.0
        by = 0.0
        for j in range(n):
            if j == i:
                continue
            wx = vix - nodes[j, 0]
            wy = viy - nodes[j, 1]
            wn = math.sqrt(wx * wx + wy * wy)
            inv = 1.0 / wn
            k0x = -wy * inv
            k0y = wx * inv
            u = k0x * vix + k0y * viy
            ii = _lookup2(itab, step, u0, du, utab, du1, mode, lconst,
                          k0x, k0y, u)
            c = ii * inv
            ca = c * a[j]
            axx += ca * k0x * k0x
            axy += ca * k0x * k0y
            ayy += ca * k0y * k0y
            s = c * (k0x * X[j, 0] + k0y * X[j, 1])
            bx += s * k0x
            by += s * k0y
        Apk[i, 0] = axx
        Apk[i, 1] = axy
        Apk[i, 2] = ayy
        Bv[i, 0] = bx
        Bv[i, 1] = by


@njit(cache=True, parallel=True)
def _moments2_par(nodes, a, X, itab, step, u0, du, utab, du1, mode, lconst,
                  bounds, Apk, Bv):
    for c in prange(bounds.shape[0] - 1):
        _moments2_slab(nodes, a, X, itab, step, u0, du, utab, du1, mode,
                       lconst, bounds[c], bounds[c + 1], Apk, Bv)


@njit(cache=True)
def _entdis2_slab(nodes, F, P, i_lo, i_hi, out, c_idx):
    n = nodes.shape[0]
    acc = 0.0
    for i in range(i_lo, i_hi):
        vix = nodes[i, 0]
        viy = nodes[i, 1]
        fi = F[i]
        pix = P[i, 0]
        piy = P[i, 1]
        for j in range(i + 1, n):
            wx = vix - nodes[j, 0]
            wy = viy - nodes[j, 1]
            wn2 = wx * wx + wy * wy
            wn = math.sqrt(wn2)
            dx = pix - P[j, 0]
            dy = piy - P[j, 1]
            dot = (dx * wx + dy * wy) / wn2
            rx = dx - dot * wx
            ry = dy - dot * wy
            acc += fi * F[j] * (rx * rx + ry * ry) / wn
    out[c_idx] = acc


@njit(cache=True, parallel=True)
def _entdis2_par(nodes, F, P, bounds, out):
    for c in prange(bounds.shape[0] - 1):
        _entdis2_slab(nodes, F, P, bounds[c], bounds[c + 1], out, c)


@njit(cache=True)
def _quad2_slab(nodes, sqmu, eta, itab, step, u0, du, utab, du1, mode,
                lconst, i_lo, i_hi, out, c_idx):
    n = nodes.shape[0]
    acc = 0.0
    for i in range(i_lo, i_hi):
        vix = nodes[i, 0]
        viy = nodes[i, 1]
        for j in range(i + 1, n):
            wx = vix - nodes[j, 0]
            wy = viy - nodes[j, 1]
            wn = math.sqrt(wx * wx + wy * wy)
            inv = 1.0 / wn
            k0x = -wy * inv
            k0y = wx * inv
            u = k0x * vix + k0y * viy
            ii = _lookup2(itab, step, u0, du, utab, du1, mode, lconst,
                          k0x, k0y, u)
            xx = sqmu[j] * eta[i, 0] - sqmu[i] * eta[j, 0]
            xy = sqmu[j] * eta[i, 1] - sqmu[i] * eta[j, 1]
            s = k0x * xx + k0y * xy
            acc += ii * inv * s * s
    out[c_idx] = acc


@njit(cache=True, parallel=True)
def _quad2_par(nodes, sqmu, eta, itab, step, u0, du, utab, du1, mode,
               lconst, bounds, out):
    for c in prange(bounds.shape[0] - 1):
        _quad2_slab(nodes, sqmu, eta, itab, step, u0, du, utab, du1, mode,
                    lconst, bounds[c], bounds[c + 1], out, c)


# ----------------------------------------------------------------------
# numba kernels, d=3
# ----------------------------------------------------------------------

@njit(cache=True)
def _lookup3(itab, ring_polar, n_azimuth, u0, du, utab, du1, mode,
             kx, ky, kz, u):
    """I for one circle direction, pre-scaled by (2π)^{-3}."""
    if mode == 2:
        nu1 = utab.shape[0]
        up = abs(u) / du1
        j0 = int(up)
        if j0 >= nu1 - 1:
            return utab[nu1 - 1]
        fu = up - j0
        return (1.0 - fu) * utab[j0] + fu * utab[j0 + 1]
    nring = ring_polar.shape[0]
    nu = itab.shape[1]
    cz = kz
    if cz > 1.0:
        cz = 1.0
    elif cz < -1.0:
        cz = -1.0
    theta = math.acos(cz)
    phi = math.atan2(ky, kx)
    if phi < 0.0:
        phi += 2.0 * math.pi
    astep = 2.0 * math.pi / n_azimuth
    apos = phi / astep - 0.5
    a0 = int(math.floor(apos))
    fa = apos - a0
    a0 = a0 % n_azimuth
    a1 = (a0 + 1) % n_azimuth
    # bracket theta in the (sorted) polar rings
    r1 = 0
    while r1 < nring and ring_polar[r1] < theta:
        r1 += 1
    if r1 == 0:
        r0 = 0
        fr = 0.0
    elif r1 >= nring:
        r0 = nring - 1
        r1 = nring - 1
        fr = 0.0
    else:
        r0 = r1 - 1
        fr = (theta - ring_polar[r0]) / (ring_polar[r1] - ring_polar[r0])
    up = (u - u0) / du
    j0 = int(math.floor(up))
    if j0 < 0:
        j0 = 0
        fu = 0.0
    elif j0 >= nu - 1:
        j0 = nu - 2
        fu = 1.0
    else:
        fu = up - j0
    tot = 0.0
    r = r0
    wr = 1.0 - fr
    for s in range(2):
        if wr != 0.0:
            row0 = r * n_azimuth + a0
            row1 = r * n_azimuth + a1
            v0 = (1.0 - fu) * itab[row0, j0] + fu * itab[row0, j0 + 1]
            v1 = (1.0 - fu) * itab[row1, j0] + fu * itab[row1, j0 + 1]
            tot += wr * ((1.0 - fa) * v0 + fa * v1)
        r = r1
        wr = fr
    return tot


@njit(cache=True)
def _frame3(wx, wy, wz, wn):
    """Orthonormal (e1, e2) spanning w⊥, from the axis least aligned
    with ŵ; returns 6 components."""
    hx = wx / wn
    hy = wy / wn
    hz = wz / wn
    ax = abs(hx)
    ay = abs(hy)
    az = abs(hz)
    if ax <= ay and ax <= az:
        e1x, e1y, e1z = 1.0 - hx * hx, -hx * hy, -hx * hz
    elif ay <= az:
        e1x, e1y, e1z = -hy * hx, 1.0 - hy * hy, -hy * hz
    else:
        e1x, e1y, e1z = -hz * hx, -hz * hy, 1.0 - hz * hz
    nrm = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    e1x /= nrm
    e1y /= nrm
    e1z /= nrm
    e2x = hy * e1z - hz * e1y
    e2y = hz * e1x - hx * e1z
    e2z = hx * e1y - hy * e1x
    return e1x, e1y, e1z, e2x, e2y, e2z


@njit(cache=True)
def _flux3_slab(nodes, F, G, itab, ring_polar, n_azimuth, u0, du, utab, du1,
                mode, lconst, ccos, csin, log_form, i_lo, i_hi, Q):
    n = nodes.shape[0]
    m = ccos.shape[0]
    circle_w = 2.0 * math.pi / m
    for i in range(i_lo, i_hi):
        vix = nodes[i, 0]
        viy = nodes[i, 1]
        viz = nodes[i, 2]
        fi = F[i]
        gix = G[i, 0]
        giy = G[i, 1]
        giz = G[i, 2]
        qx = 0.0
        qy = 0.0
        qz = 0.0
        for j in range(i + 1, n):
            wx = vix - nodes[j, 0]
            wy = viy - nodes[j, 1]
            wz = viz - nodes[j, 2]
            wn = math.sqrt(wx * wx + wy * wy + wz * wz)
            gjx = G[j, 0]
            gjy = G[j, 1]
            gjz = G[j, 2]
            fj = F[j]
            if mode == 0:
                # closed form: (L/|w|)(Id - ŵ⊗ŵ) applied to the pair vector
                if log_form:
                    tx = fi * fj * (gix - gjx)
                    ty = fi * fj * (giy - gjy)
                    tz = fi * fj * (giz - gjz)
                else:
                    tx = fj * gix - fi * gjx
                    ty = fj * giy - fi * gjy
                    tz = fj * giz - fi * gjz
                dot = (tx * wx + ty * wy + tz * wz) / (wn * wn)
                c = lconst / wn
                qx += c * (tx - dot * wx)
                qy += c * (ty - dot * wy)
                qz += c * (tz - dot * wz)
                Q[j, 0] -= c * (tx - dot * wx)
                Q[j, 1] -= c * (ty - dot * wy)
                Q[j, 2] -= c * (tz - dot * wz)
                continue
            e1x, e1y, e1z, e2x, e2y, e2z = _frame3(wx, wy, wz, wn)
            px = 0.0
            py = 0.0
            pz = 0.0
            for cnode in range(m):
                kx = ccos[cnode] * e1x + csin[cnode] * e2x
                ky = ccos[cnode] * e1y + csin[cnode] * e2y
                kz = ccos[cnode] * e1z + csin[cnode] * e2z
                u = kx * vix + ky * viy + kz * viz
                ii = _lookup3(itab, ring_polar, n_azimuth, u0, du, utab,
                              du1, mode, kx, ky, kz, u)
                si = kx * gix + ky * giy + kz * giz
                sj = kx * gjx + ky * gjy + kz * gjz
                if log_form:
                    val = ii * fi * fj * (si - sj)
                else:
                    val = ii * (fj * si - fi * sj)
                px += val * kx
                py += val * ky
                pz += val * kz
            c = circle_w / wn
            qx += c * px
            qy += c * py
            qz += c * pz
            Q[j, 0] -= c * px
            Q[j, 1] -= c * py
            Q[j, 2] -= c * pz
        Q[i, 0] += qx
        Q[i, 1] += qy
        Q[i, 2] += qz


@njit(cache=True, parallel=True)
def _flux3_par(nodes, F, G, itab, ring_polar, n_azimuth, u0, du, utab, du1,
               mode, lconst, ccos, csin, log_form, bounds, Qbuf):
    for c in prange(bounds.shape[0] - 1):
        _flux3_slab(nodes, F, G, itab, ring_polar, n_azimuth, u0, du, utab,
                    du1, mode, lconst, ccos, csin, log_form, bounds[c],
                    bounds[c + 1], Qbuf[c])


@njit(cache=True)
def _moments3_slab(nodes, a, X, itab, ring_polar, n_azimuth, u0, du, utab,
                   du1, mode, lconst, ccos, csin, i_lo, i_hi, Apk, Bv):
    n = nodes.shape[0]
    m = ccos.shape[0]
    circle_w = 2.0 * math.pi / m
    for i in range(i_lo, i_hi):
        vix = nodes[i, 0]
        viy = nodes[i, 1]
        viz = nodes[i, 2]
        axx = 0.0
        axy = 0.0
        axz = 0.0
        ayy = 0.0
        ayz = 0.0
        azz = 0.0
        bx = 0.0
        by = 0.0
        bz = 0.0
        for j in range(n):
            if j == i:
                continue
            wx = vix - nodes[j, 0]
            wy = viy - nodes[j, 1]
            wz = viz - nodes[j, 2]
            wn = math.sqrt(wx * wx + wy * wy + wz * wz)
            if mode == 0:
                hx = wx / wn
                hy = wy / wn
                hz = wz / wn
                c = lconst / wn * a[j]
                axx += c * (1.0 - hx * hx)
                axy += c * (-hx * hy)
                axz += c * (-hx * hz)
                ayy += c * (1.0 - hy * hy)
                ayz += c * (-hy * hz)
                azz += c * (1.0 - hz * hz)
                cb = lconst / wn
                dot = (X[j, 0] * hx + X[j, 1] * hy + X[j, 2] * hz)
                bx += cb * (X[j, 0] - dot * hx)
                by += cb * (X[j, 1] - dot * hy)
                bz += cb * (X[j, 2] - dot * hz)
                continue
            e1x, e1y, e1z, e2x, e2y, e2z = _frame3(wx, wy, wz, wn)
            for cnode in range(m):
                kx = ccos[cnode] * e1x + csin[cnode] * e2x
                ky = ccos[cnode] * e1y + csin[cnode] * e2y
                kz = ccos[cnode] * e1z + csin[cnode] * e2z
                u = kx * vix + ky * viy + kz * viz
                ii = _lookup3(itab, ring_polar, n_azimuth, u0, du, utab,
                              du1, mode, kx, ky, kz, u)
                c = ii * circle_w / wn
                ca = c * a[j]
                axx += ca * kx * kx
                axy += ca * kx * ky
                axz += ca * kx * kz
                ayy += ca * ky * ky
                ayz += ca * ky * kz
                azz += ca * kz * kz
                s = c * (kx * X[j, 0] + ky * X[j, 1] + kz * X[j, 2])
                bx += s * kx
                by += s * ky
                bz += s * kz
        Apk[i, 0] = axx
        Apk[i, 1] = axy
        Apk[i, 2] = axz
        Apk[i, 3] = ayy
        Apk[i, 4] = ayz
        Apk[i, 5] = azz
        Bv[i, 0] = bx
        Bv[i, 1] = by
        Bv[i, 2] = bz


@njit(cache=True, parallel=True)
def _moments3_par(nodes, a, X, itab, ring_polar, n_azimuth, u0, du, utab,
                  du1, mode, lconst, ccos, csin, bounds, Apk, Bv):
    for c in prange(bounds.shape[0] - 1):
        _moments3_slab(nodes, a, X, itab, ring_polar, n_azimuth, u0, du,
                       utab, du1, mode, lconst, ccos, csin, bounds[c],
                       bounds[c + 1], Apk, Bv)


@njit(cache=True)
def _entdis3_slab(nodes, F, P, i_lo, i_hi, out, c_idx):
    n = nodes.shape[0]
    acc = 0.0
    for i in range(i_lo, i_hi):
        for j in range(i + 1, n):
            wx = nodes[i, 0] - nodes[j, 0]
            wy = nodes[i, 1] - nodes[j, 1]
            wz = nodes[i, 2] - nodes[j, 2]
            wn2 = wx * wx + wy * wy + wz * wz
            wn = math.sqrt(wn2)
            dx = P[i, 0] - P[j, 0]
            dy = P[i, 1] - P[j, 1]
            dz = P[i, 2] - P[j, 2]
            dot = (dx * wx + dy * wy + dz * wz) / wn2
            rx = dx - dot * wx
            ry = dy - dot * wy
            rz = dz - dot * wz
            acc += F[i] * F[j] * (rx * rx + ry * ry + rz * rz) / wn
    out[c_idx] = acc


@njit(cache=True, parallel=True)
def _entdis3_par(nodes, F, P, bounds, out):
    for c in prange(bounds.shape[0] - 1):
        _entdis3_slab(nodes, F, P, bounds[c], bounds[c + 1], out, c)


@njit(cache=True)
def _quad3_slab(nodes, sqmu, eta, itab, ring_polar, n_azimuth, u0, du, utab,
                du1, mode, lconst, ccos, csin, i_lo, i_hi, out, c_idx):
    n = nodes.shape[0]
    m = ccos.shape[0]
    circle_w = 2.0 * math.pi / m
    acc = 0.0
    for i in range(i_lo, i_hi):
        vix = nodes[i, 0]
        viy = nodes[i, 1]
        viz = nodes[i, 2]
        for j in range(i + 1, n):
            wx = vix - nodes[j, 0]
            wy = viy - nodes[j, 1]
            wz = viz - nodes[j, 2]
            wn = math.sqrt(wx * wx + wy * wy + wz * wz)
            xx = sqmu[j] * eta[i, 0] - sqmu[i] * eta[j, 0]
            xy = sqmu[j] * eta[i, 1] - sqmu[i] * eta[j, 1]
            xz = sqmu[j] * eta[i, 2] - sqmu[i] * eta[j, 2]
            if mode == 0:
                dot = (xx * wx + xy * wy + xz * wz) / (wn * wn)
                rx = xx - dot * wx
                ry = xy - dot * wy
                rz = xz - dot * wz
                acc += lconst / wn * (rx * rx + ry * ry + rz * rz)
                continue
            e1x, e1y, e1z, e2x, e2y, e2z = _frame3(wx, wy, wz, wn)
            for cnode in range(m):
                kx = ccos[cnode] * e1x + csin[cnode] * e2x
                ky = ccos[cnode] * e1y + csin[cnode] * e2y
                kz = ccos[cnode] * e1z + csin[cnode] * e2z
                u = kx * vix + ky * viy + kz * viz
                ii = _lookup3(itab, ring_polar, n_azimuth, u0, du, utab,
                              du1, mode, kx, ky, kz, u)
                s = kx * xx + ky * xy + kz * xz
                acc += ii * circle_w / wn * s * s
    out[c_idx] = acc


@njit(cache=True, parallel=True)
def _quad3_par(nodes, sqmu, eta, itab, ring_polar, n_azimuth, u0, du, utab,
               du1, mode, lconst, ccos, csin, bounds, out):
    for c in prange(bounds.shape[0] - 1):
        _quad3_slab(nodes, sqmu, eta, itab, ring_polar, n_azimuth, u0, du,
                    utab, du1, mode, lconst, ccos, csin, bounds[c],
                    bounds[c + 1], out, c)


# ----------------------------------------------------------------------
# vectorized numpy fallback
# ----------------------------------------------------------------------

def _row_weight_2d(nodes, i, wt):
    """(c, k0) for row i against all j: c = Σ_antipodal I / |w| pre-scaled,
    with c[i] = 0."""
    w = nodes[i] - nodes                      # (n, 2)
    wn = np.hypot(w[:, 0], w[:, 1])
    ok = wn > 0.0
    inv = np.zeros_like(wn)
    inv[ok] = 1.0 / wn[ok]
    k0 = np.stack([-w[:, 1] * inv, w[:, 0] * inv], axis=1)
    u = k0 @ nodes[i]
    if wt.mode == 0:
        ii = np.full(len(wn), wt.lconst)
    elif wt.mode == 2:
        grid1 = np.arange(wt.utab.shape[0]) * wt.du1
        ii = 2.0 * np.interp(np.abs(u), grid1, wt.utab)
    else:
        ndirs, nu = wt.itab.shape
        half = ndirs // 2
        t = np.arctan2(k0[:, 1], k0[:, 0])
        t = np.where(t < 0.0, t + 2.0 * math.pi, t)
        pos = t / wt.step - 0.5
        m0 = np.floor(pos).astype(np.int64)
        fm = pos - m0
        m0 %= ndirs
        ug = wt.u0 + wt.du * np.arange(nu)
        ii = np.zeros(len(wn))
        for sgn, shift in ((1.0, 0), (-1.0, half)):
            r0 = (m0 + shift) % ndirs
            r1 = (r0 + 1) % ndirs
            va = np.empty(len(wn))
            vb = np.empty(len(wn))
            for arr, rows in ((va, r0), (vb, r1)):
                # linear interp along u for each row index
                up = np.clip((sgn * u - wt.u0) / wt.du, 0.0, nu - 1.0)
                j0 = np.minimum(up.astype(np.int64), nu - 2)
                fu = up - j0
                arr[:] = (1.0 - fu) * wt.itab[rows, j0] \
                    + fu * wt.itab[rows, j0 + 1]
            ii += (1.0 - fm) * va + fm * vb
    c = ii * inv
    c[~ok] = 0.0
    return c, k0


def _row_weight_3d(nodes, i, wt):
    """(c (n, m), khat (n, m, 3)) for row i: per circle node, pre-scaled
    I·(2π/m)/|w|; rows at j == i are zero."""
    w = nodes[i] - nodes
    wn = np.linalg.norm(w, axis=1)
    ok = wn > 0.0
    what = np.zeros_like(w)
    what[ok] = w[ok] / wn[ok, None]
    axis = np.argmin(np.abs(what), axis=1)
    e1 = np.eye(3)[axis]
    e1 -= np.sum(e1 * what, axis=1)[:, None] * what
    nrm = np.linalg.norm(e1, axis=1)
    e1[ok] /= nrm[ok, None]
    e2 = np.cross(what, e1)
    ca, sa = wt.circle_cos, wt.circle_sin
    m = len(ca)
    khat = ca[None, :, None] * e1[:, None, :] + sa[None, :, None] * e2[:, None, :]
    u = khat @ nodes[i]
    if wt.mode == 0:
        ii = np.full(u.shape, wt.lconst)
    elif wt.mode == 2:
        grid1 = np.arange(wt.utab.shape[0]) * wt.du1
        ii = np.interp(np.abs(u), grid1, wt.utab)
    else:
        nring = wt.ring_polar.shape[0]
        na = wt.n_azimuth
        nu = wt.itab.shape[1]
        theta = np.arccos(np.clip(khat[..., 2], -1.0, 1.0))
        phi = np.arctan2(khat[..., 1], khat[..., 0])
        phi = np.where(phi < 0.0, phi + 2.0 * math.pi, phi)
        astep = 2.0 * math.pi / na
        apos = phi / astep - 0.5
        a0 = np.floor(apos).astype(np.int64)
        fa = apos - a0
        a0 %= na
        a1 = (a0 + 1) % na
        r1 = np.searchsorted(wt.ring_polar, theta)
        r0 = np.clip(r1 - 1, 0, nring - 1)
        r1 = np.clip(r1, 0, nring - 1)
        gap = wt.ring_polar[r1] - wt.ring_polar[r0]
        fr = np.where(gap > 0.0, (theta - wt.ring_polar[r0]) / np.where(gap > 0, gap, 1.0), 0.0)
        fr = np.clip(fr, 0.0, 1.0)
        up = np.clip((u - wt.u0) / wt.du, 0.0, nu - 1.0)
        j0 = np.minimum(up.astype(np.int64), nu - 2)
        fu = up - j0
        ii = np.zeros(u.shape)
        for rr, wr in ((r0, 1.0 - fr), (r1, fr)):
            for aa, wa in ((a0, 1.0 - fa), (a1, fa)):
                rows = rr * na + aa
                vals = (1.0 - fu) * wt.itab[rows, j0] + fu * wt.itab[rows, j0 + 1]
                ii += wr * wa * vals
    c = ii * (2.0 * math.pi / m) / np.where(ok, wn, 1.0)[:, None]
    c[~ok] = 0.0
    return c, khat


def _flux_numpy(nodes, F, G, wt, log_form):
    n, d = nodes.shape
    Q = np.zeros((n, d))
    for i in range(n):
        if d == 2:
            c, k0 = _row_weight_2d(nodes, i, wt)
            si = k0 @ G[i]
            sj = np.einsum("ja,ja->j", k0, G)
            if log_form:
                val = c * F[i] * F * (si - sj)
            else:
                val = c * (F * si - F[i] * sj)
            Q[i] = val @ k0
        else:
            if wt.mode == 0:
                w = nodes[i] - nodes
                wn = np.linalg.norm(w, axis=1)
                ok = wn > 0.0
                if log_form:
                    t = F[i] * F[:, None] * (G[i] - G)
                else:
                    t = F[:, None] * G[i] - F[i] * G
                dot = np.einsum("ja,ja->j", t, w)
                dot[ok] /= wn[ok] ** 2
                proj = t - dot[:, None] * w
                cc = np.zeros(n)
                cc[ok] = wt.lconst / wn[ok]
                Q[i] = (cc[:, None] * proj).sum(axis=0)
            else:
                c, khat = _row_weight_3d(nodes, i, wt)
                si = khat @ G[i]
                sj = np.einsum("jma,ja->jm", khat, G)
                if log_form:
                    val = c * F[i] * F[:, None] * (si - sj)
                else:
                    val = c * (F[:, None] * si - F[i] * sj)
                Q[i] = np.einsum("jm,jma->a", val, khat)
    return Q


def _moments_numpy(nodes, a, X, wt):
    n, d = nodes.shape
    npk = 3 if d == 2 else 6
    Apk = np.zeros((n, npk))
    Bv = np.zeros((n, d))
    for i in range(n):
        if d == 2:
            c, k0 = _row_weight_2d(nodes, i, wt)
            ca = c * a
            Apk[i, 0] = ca @ (k0[:, 0] * k0[:, 0])
            Apk[i, 1] = ca @ (k0[:, 0] * k0[:, 1])
            Apk[i, 2] = ca @ (k0[:, 1] * k0[:, 1])
            s = c * np.einsum("ja,ja->j", k0, X)
            Bv[i] = s @ k0
        else:
            if wt.mode == 0:
                w = nodes[i] - nodes
                wn = np.linalg.norm(w, axis=1)
                ok = wn > 0.0
                what = np.zeros_like(w)
                what[ok] = w[ok] / wn[ok, None]
                cc = np.zeros(n)
                cc[ok] = wt.lconst / wn[ok]
                P = np.eye(3)[None] - what[:, :, None] * what[:, None, :]
                Amat = np.einsum("j,jab->ab", cc * a, P)
                Bv[i] = np.einsum("j,jab,jb->a", cc, P, X)
            else:
                c, khat = _row_weight_3d(nodes, i, wt)
                ca = c * a[:, None]
                Amat = np.einsum("jm,jma,jmb->ab", ca, khat, khat)
                s = c * np.einsum("jma,ja->jm", khat, X)
                Bv[i] = np.einsum("jm,jma->a", s, khat)
            Apk[i] = Amat[[0, 0, 0, 1, 1, 2], [0, 1, 2, 1, 2, 2]]
    return Apk, Bv


def _entdis_numpy(nodes, F, P):
    n, d = nodes.shape
    acc = 0.0
    for i in range(n):
        w = nodes[i] - nodes
        wn2 = np.einsum("ja,ja->j", w, w)
        ok = wn2 > 0.0
        dp = P[i] - P
        dot = np.zeros(n)
        dot[ok] = np.einsum("ja,ja->j", dp, w)[ok] / wn2[ok]
        proj = dp - dot[:, None] * w
        term = np.zeros(n)
        term[ok] = F[i] * F[ok] * np.einsum("ja,ja->j", proj, proj)[ok] \
            / np.sqrt(wn2[ok])
        acc += term.sum()
    return 0.5 * acc


def _quad_numpy(nodes, sqmu, eta, wt):
    n, d = nodes.shape
    acc = 0.0
    for i in range(n):
        xi = sqmu[:, None] * eta[i] - sqmu[i] * eta
        if d == 2:
            c, k0 = _row_weight_2d(nodes, i, wt)
            s = np.einsum("ja,ja->j", k0, xi)
            acc += np.sum(c * s * s)
        else:
            if wt.mode == 0:
                w = nodes[i] - nodes
                wn = np.linalg.norm(w, axis=1)
                ok = wn > 0.0
                dot = np.zeros(n)
                dot[ok] = np.einsum("ja,ja->j", xi, w)[ok] / wn[ok] ** 2
                proj = xi - dot[:, None] * w
                cc = np.zeros(n)
                cc[ok] = wt.lconst / wn[ok]
                acc += np.sum(cc * np.einsum("ja,ja->j", proj, proj))
            else:
                c, khat = _row_weight_3d(nodes, i, wt)
                s = np.einsum("jma,ja->jm", khat, xi)
                acc += np.sum(c * s * s)
    return 0.5 * acc


# ----------------------------------------------------------------------
# dispatchers
# ----------------------------------------------------------------------

def pair_flux(nodes, F, G, wt, nslabs=1, log_form=False):
    """Pair flux Q_i = Σ_{j≠i} B_ij (F_j G_i − F_i G_j) (direct form) or
    Σ B_ij F_i F_j (G_i − G_j) (log form), *without* the grid-weight
    factor; the caller multiplies by w_q and takes the divergence."""
    n, d = nodes.shape
    if not HAVE_NUMBA:
        return _flux_numpy(nodes, F, G, wt, log_form)
    bounds = slab_bounds(n, nslabs)
    Qbuf = np.zeros((len(bounds) - 1, n, d))
    if d == 2:
        geom = pair_geometry_2d(nodes, wt)
        _flux2_par(nodes, F, G, geom.ix, geom.iy, geom.noff, geom.span,
                   geom.k0x, geom.k0y, geom.inv, geom.m0, geom.fm,
                   wt.itab, wt.u0, wt.du, wt.utab, wt.du1, wt.mode,
                   wt.lconst, log_form, bounds, Qbuf)
    else:
        _flux3_par(nodes, F, G, wt.itab, wt.ring_polar, wt.n_azimuth,
                   wt.u0, wt.du, wt.utab, wt.du1, wt.mode, wt.lconst,
                   wt.circle_cos, wt.circle_sin, log_form, bounds, Qbuf)
    return Qbuf.sum(axis=0)


def moment_fields(nodes, a, X, wt, nslabs=1):
    """Coefficient fields 𝔸_i = Σ_{j≠i} B_ij a_j (packed symmetric) and
    𝔹_i = Σ_{j≠i} B_ij X_j, without the grid-weight factor."""
    n, d = nodes.shape
    if not HAVE_NUMBA:
        return _moments_numpy(nodes, a, X, wt)
    npk = 3 if d == 2 else 6
    Apk = np.zeros((n, npk))
    Bv = np.zeros((n, d))
    bounds = slab_bounds(n, nslabs)
    if d == 2:
        _moments2_par(nodes, a, X, wt.itab, wt.step, wt.u0, wt.du, wt.utab,
                      wt.du1, wt.mode, wt.lconst, bounds, Apk, Bv)
    else:
        _moments3_par(nodes, a, X, wt.itab, wt.ring_polar, wt.n_azimuth,
                      wt.u0, wt.du, wt.utab, wt.du1, wt.mode, wt.lconst,
                      wt.circle_cos, wt.circle_sin, bounds, Apk, Bv)
    return Apk, Bv


def unpack_symmetric(Apk, d):
    """(n, d, d) matrices from the packed upper triangle."""
    n = Apk.shape[0]
    A = np.empty((n, d, d))
    if d == 2:
        A[:, 0, 0] = Apk[:, 0]
        A[:, 0, 1] = A[:, 1, 0] = Apk[:, 1]
        A[:, 1, 1] = Apk[:, 2]
    else:
        A[:, 0, 0] = Apk[:, 0]
        A[:, 0, 1] = A[:, 1, 0] = Apk[:, 1]
        A[:, 0, 2] = A[:, 2, 0] = Apk[:, 2]
        A[:, 1, 1] = Apk[:, 3]
        A[:, 1, 2] = A[:, 2, 1] = Apk[:, 4]
        A[:, 2, 2] = Apk[:, 5]
    return A


def landau_entropy_dissipation(nodes, F, P, nslabs=1):
    """½ Σ_{i≠j} (F_i F_j / |w_ij|) |Π_ŵ (P_i − P_j)|², without grid
    weights (the caller supplies w_q²); P is the field DF/F."""
    n, d = nodes.shape
    if not HAVE_NUMBA:
        return _entdis_numpy(nodes, F, P)
    bounds = slab_bounds(n, nslabs)
    out = np.zeros(len(bounds) - 1)
    if d == 2:
        _entdis2_par(nodes, F, P, bounds, out)
    else:
        _entdis3_par(nodes, F, P, bounds, out)
    # the slab kernels visit each unordered pair once, which is already
    # the ½ Σ_{i≠j} of the definition
    return float(out.sum())


def screened_quadratic_form(nodes, sqmu, eta, wt, nslabs=1):
    """½ Σ_{i≠j} ξ_ij · B_ij ξ_ij with ξ_ij = √μ_j η_i − √μ_i η_j, without
    grid weights.  Nonnegative by the PSD structure of B."""
    n, d = nodes.shape
    if not HAVE_NUMBA:
        return _quad_numpy(nodes, sqmu, eta, wt)
    bounds = slab_bounds(n, nslabs)
    out = np.zeros(len(bounds) - 1)
    if d == 2:
        _quad2_par(nodes, sqmu, eta, wt.itab, wt.step, wt.u0, wt.du,
                   wt.utab, wt.du1, wt.mode, wt.lconst, bounds, out)
    else:
        _quad3_par(nodes, sqmu, eta, wt.itab, wt.ring_polar, wt.n_azimuth,
                   wt.u0, wt.du, wt.utab, wt.du1, wt.mode, wt.lconst,
                   wt.circle_cos, wt.circle_sin, bounds, out)
    # pairs are visited once: the sum is already ½ Σ_{i≠j}
    return float(out.sum())
