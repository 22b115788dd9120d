"""Assembly of the screened collision-kernel tensor B(v, v−v*; ∇F).

Reducing the defining k-integral against δ(k·(v−v*)) to the hyperplane
k ⟂ w (w = v−v*) and then to polar coordinates in that hyperplane gives

    B(v, v−v*) = (2π)^{-d} / |w| · ∮_{k̂ ∈ S^{d-2}(w⊥)} (k̂⊗k̂) I(Z(k̂, k̂·v)) dΩ,

    I(Z) = π ∫₀^∞ r^d V̂(r)² / |1 + V̂(r)·Z|² dr,

with đk = (2π)^{-d} dk applied exactly once (see the potential module).
For d=2 the "sphere" S⁰ is the two unit vectors ±k̂₀ perpendicular to w;
for d=3 it is the unit circle in w⊥, integrated with the trapezoid rule
(spectrally accurate for smooth ε; *exact* for ε ≡ 1 with ≥ 3 nodes, since
the integrand is then a trigonometric polynomial of degree 2).

With ε ≡ 1 the assembly collapses to the Landau kernel
(L/|w|)(Id − ŵ⊗ŵ) with L = landau_constant(V, d); that reduction is both a
test oracle and the production path for Landau-mode runs.

The radial factor I is the hot quantity: it is evaluated three ways, on a
strict accuracy ladder, each validated against the one above:

  radial_kernel_weight   adaptive quadrature, relative 1e-8 (the contract);
  RadialWeightTable      fixed Gauss-Legendre nodes, vectorized over many Z
                         (used to sweep screening tables; ~1e-10 relative);
  ZMemo                  lazy bilinear memo on a (Re Z, Im Z) lattice of
                         resolution 1e-3 (validated to ~1e-6), turning the
                         per-pair radial integral into a table lookup.

A dispersion degeneracy (|1 + V̂Z| below the floor anywhere on the
quadrature path) raises DispersionDegeneracyError rather than clamping:
the dynamics are only defined under Penrose non-degeneracy, and clamping
would fabricate them.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .dispersion import maxwellian_z
from .potential import landau_constant

__all__ = [
    "DispersionDegeneracyError",
    "KernelMatrix",
    "CoefficientField",
    "radial_kernel_weight",
    "RadialWeightTable",
    "ZMemo",
    "assemble_kernel",
    "landau_kernel",
    "equilibrium_coefficients",
    "isotropic_weight_profile",
    "equilibrium_weight_tables",
    "landau_weight_tables",
    "screening_weight_tables",
]

DEGENERACY_FLOOR = 1e-8


class DispersionDegeneracyError(RuntimeError):
    """|1 + V̂(r)Z| fell below the non-degeneracy floor: the screened kernel
    is (numerically) undefined and the caller must abort the step."""


@dataclass(frozen=True)
class KernelMatrix:
    """d×d collision-kernel tensor for one pair, with its relative velocity.

    Symmetric PSD with B·w = 0 (exact for d=2 by construction of k̂₀; to
    round-off for d=3 frame arithmetic).
    """

    entries: np.ndarray
    w: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @property
    def null_defect(self):
        """|B·w| / (‖B‖·|w|): how exactly w is annihilated."""
        scale = np.linalg.norm(self.entries) * np.linalg.norm(self.w)
        if scale == 0.0:
            return 0.0
        return float(np.linalg.norm(self.entries @ self.w) / scale)


def radial_kernel_weight(V, z, d):
    """I(Z) = π ∫₀^∞ r^d V̂(r)² / |1 + V̂(r)·Z|² dr by adaptive quadrature.

    Relative tolerance 1e-8.  Raises DispersionDegeneracyError if the
    screened denominator |1 + V̂ Z| drops below the floor anywhere on the
    integration path.  Sampling alone cannot certify that: a transversal
    zero of 1 + V̂·Re Z slips between any finite set of probe points.  At
    such a crossing, though, the continuum minimum of |1 + V̂Z| is exactly
    |Im Z|·V̂(r₀), so crossings are detected by the sign change and scored
    with that closed form.
    """
    zr, zi = float(np.real(z)), float(np.imag(z))
    rprobe = np.linspace(0.0, V.r_max, 2049)
    probe = V(rprobe)
    a = 1.0 + probe * zr
    a2 = a * a + (probe * zi) ** 2
    min2 = float(np.min(a2))
    rbad = float(rprobe[np.argmin(a2)])
    crossings = np.flatnonzero(a[:-1] * a[1:] < 0.0)
    if crossings.size:
        vh_cross = 0.5 * (probe[crossings] + probe[crossings + 1])
        cont2 = float(np.min((zi * vh_cross) ** 2))
        if cont2 < min2:
            min2 = cont2
            rbad = float(0.5 * (rprobe[crossings[0]] + rprobe[crossings[0] + 1]))
    if min2 < DEGENERACY_FLOOR ** 2:
        raise DispersionDegeneracyError(
            f"|1 + V̂Z| = {math.sqrt(min2):.3e} at r = {rbad:.4g} "
            f"(Z = {zr:.4g}{zi:+.4g}i)")

    def integrand(r):
        vh = float(V.profile(np.asarray(r)))
        den = (1.0 + vh * zr) ** 2 + (vh * zi) ** 2
        return math.pi * r ** d * vh * vh / den

    val, _ = quad(integrand, 0.0, V.r_max, epsrel=1e-8, epsabs=1e-300, limit=200)
    return val


class RadialWeightTable:
    """Vectorized I(Z) on fixed Gauss-Legendre nodes over [0, r_max].

    The integrand is smooth and non-oscillatory for admissible spectra, so
    a single high-order rule converges spectrally; n_nodes=192 leaves
    ~1e-12 relative against the adaptive path for the gaussian family.
    Evaluation over an array of Z costs one (nz, n_nodes) broadcast.
    """

    def __init__(self, V, d, n_nodes=192):
        x, gw = np.polynomial.legendre.leggauss(n_nodes)
        r = 0.5 * V.r_max * (x + 1.0)
        self.r = r
        self.vh = V(r)
        self.base = 0.5 * V.r_max * gw * math.pi * r ** d * self.vh ** 2
        self.unscreened = float(self.base.sum())

    def evaluate(self, z, check_degeneracy=True, floor=DEGENERACY_FLOOR):
        """I(Z) for an array of Z values; flags degeneracy across the whole
        batch unless told otherwise."""
        z = np.asarray(z)
        shape = z.shape
        zr = np.real(z).reshape(-1, 1)
        zi = np.imag(z).reshape(-1, 1)
        a = 1.0 + self.vh * zr
        den = a * a + (self.vh * zi) ** 2
        if check_degeneracy:
            dmin = float(den.min())
            # sign changes of the real part between nodes: there the true
            # minimum of |1 + V̂Z|² is (Im Z · V̂)², whatever the sampling
            rows, cols = np.nonzero(a[:, :-1] * a[:, 1:] < 0.0)
            if rows.size:
                vh_cross = 0.5 * (self.vh[cols] + self.vh[cols + 1])
                dmin = min(dmin,
                           float(np.min((zi[rows, 0] * vh_cross) ** 2)))
            if dmin < floor ** 2:
                raise DispersionDegeneracyError(
                    f"|1 + V̂Z| = {math.sqrt(dmin):.3e} within a batch of "
                    f"{z.size} screening values")
        out = (self.base / den).sum(axis=1)
        return out.reshape(shape)


class ZMemo:
    """Lazy bilinear memoization of I(Z) on a (Re Z, Im Z) lattice.

    Corner values at resolution `res` (default 1e-3) are computed on demand
    with the Gauss-Legendre table and cached; queries bilinearly blend the
    four surrounding corners.  The interpolation error is O(res²·∂²I): a
    few parts in 1e5 relative at the default resolution for the gaussian
    family, worst where strong screening bends I hardest.
    """

    def __init__(self, V, d, res=1e-3, n_nodes=192):
        self.res = float(res)
        self.table = RadialWeightTable(V, d, n_nodes)
        self.unscreened = self.table.unscreened
        self._corners = {}

    def _corner_values(self, ci, cj):
        key_arr = np.stack([ci, cj], axis=1)
        keys = [tuple(k) for k in key_arr]
        missing = [k for k in set(keys) if k not in self._corners]
        if missing:
            zs = np.array([complex(i * self.res, j * self.res)
                           for i, j in missing])
            vals = self.table.evaluate(zs)
            for k, val in zip(missing, vals):
                self._corners[k] = float(val)
        return np.array([self._corners[k] for k in keys])

    def evaluate(self, z):
        z = np.asarray(z)
        shape = z.shape
        zr = np.real(z).reshape(-1) / self.res
        zi = np.imag(z).reshape(-1) / self.res
        i0 = np.floor(zr).astype(np.int64)
        j0 = np.floor(zi).astype(np.int64)
        fx = zr - i0
        fy = zi - j0
        out = np.zeros(zr.shape)
        for di, dj, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                            (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
            out += wgt * self._corner_values(i0 + di, j0 + dj)
        return out.reshape(shape)


def isotropic_weight_profile(V, d, u_nodes):
    """I(Z_M(u)) on a 1D grid of u values at the β=1 Maxwellian.

    Z at Maxwellian is direction-independent and conjugate-even, so a 1D
    profile is the whole radial-weight story for the equilibrium coefficient
    field.  Returned as (u_nodes, I_values) for interpolation.
    """
    table = RadialWeightTable(V, d)
    vals = table.evaluate(maxwellian_z(np.asarray(u_nodes, dtype=float)))
    return np.asarray(u_nodes, dtype=float), vals


def _denominator_floor(rwt, z):
    """min |1 + V̂Z|² over the quadrature nodes and a batch of Z values:
    the discrete Penrose margin the radial weights actually see."""
    z = np.asarray(z).reshape(-1)
    floor = np.inf
    for lo in range(0, z.size, 8192):
        chunk = z[lo:lo + 8192]
        den = (1.0 + rwt.vh * np.real(chunk)[:, None]) ** 2 \
            + (rwt.vh * np.imag(chunk)[:, None]) ** 2
        floor = min(floor, float(den.min()))
    return floor


def equilibrium_weight_tables(grid, V, n_u=8001, circle_nodes=32):
    """Isotropic (mode 2) radial-weight bundle for Maxwellian screening.

    The 1D profile I(Z_M(|u|)) is tabulated on n_u nodes spanning every u
    the grid can produce, pre-scaled by the (2π)^{-d} measure factor.  The
    bundle carries the discrete Penrose margin it was built with.
    """
    from ._pairsum import WeightTables

    d = grid.d
    umax = grid.extent * math.sqrt(d) + 1.0
    u1 = np.linspace(0.0, umax, n_u)
    rwt = RadialWeightTable(V, d)
    zvals = maxwellian_z(u1)
    ivals = rwt.evaluate(zvals)
    wt = WeightTables(mode=2, d=d,
                      utab=ivals * (2.0 * math.pi) ** (-d),
                      du1=u1[1] - u1[0], circle_nodes=circle_nodes)
    wt.penrose_min = _denominator_floor(rwt, zvals)
    return wt


def landau_weight_tables(grid, V, circle_nodes=32):
    """Landau-mode (mode 0) bundle: ε ≡ 1, strength landau_constant(V, d)."""
    from ._pairsum import WeightTables

    wt = WeightTables(mode=0, d=grid.d, lconst=landau_constant(V, grid.d),
                      circle_nodes=circle_nodes)
    wt.penrose_min = 1.0
    return wt


def screening_weight_tables(table, V, rwt=None, circle_nodes=32,
                            floor=DEGENERACY_FLOOR):
    """Directional (mode 1) bundle from a ScreeningTable of the evolving
    field.  Raises DispersionDegeneracyError when any tabulated screening
    value drives |1 + V̂Z| below the floor."""
    from ._pairsum import WeightTables

    d = table.dirs.d
    if rwt is None:
        rwt = RadialWeightTable(V, d)
    ivals = rwt.evaluate(table.z, floor=floor)
    wt = WeightTables(
        mode=1, d=d,
        itab=ivals * (2.0 * math.pi) ** (-d),
        step=2.0 * math.pi / len(table.dirs) if d == 2 else 0.0,
        u0=float(table.ugrid.nodes[0]), du=table.ugrid.du,
        ring_polar=table.dirs.ring_polar if d == 3 else None,
        n_azimuth=table.dirs.n_azimuth if d == 3 else 0,
        circle_nodes=circle_nodes)
    wt.penrose_min = _denominator_floor(rwt, table.z)
    return wt


def _interp_z(table, khat, u):
    """Z(k̂, u) by spherical interpolation on the table's DirectionSet plus
    linear interpolation (with far tail) along u."""
    dirs = table.dirs
    if dirs.d == 2:
        ndirs = len(dirs)
        step = 2.0 * math.pi / ndirs
        theta = math.atan2(khat[1], khat[0]) % (2.0 * math.pi)
        pos = theta / step - 0.5
        i0 = int(math.floor(pos))
        frac = pos - i0
        z0 = table.z_at(i0 % ndirs, u)
        z1 = table.z_at((i0 + 1) % ndirs, u)
        return (1.0 - frac) * z0 + frac * z1
    # d=3: bilinear on the (polar ring, azimuth) product grid
    theta = math.acos(max(-1.0, min(1.0, khat[2])))
    phi = math.atan2(khat[1], khat[0]) % (2.0 * math.pi)
    polar = dirs.ring_polar
    na = dirs.n_azimuth
    astep = 2.0 * math.pi / na
    apos = phi / astep - 0.5
    a0 = int(math.floor(apos))
    fa = apos - a0
    ir = int(np.searchsorted(polar, theta)) - 1
    if ir < 0:
        rows = (0, 0)
        fr = 0.0
    elif ir >= len(polar) - 1:
        rows = (len(polar) - 1, len(polar) - 1)
        fr = 0.0
    else:
        rows = (ir, ir + 1)
        fr = (theta - polar[ir]) / (polar[ir + 1] - polar[ir])
    out = 0.0
    for row, wr in ((rows[0], 1.0 - fr), (rows[1], fr)):
        if wr == 0.0:
            continue
        for col, wa in ((a0 % na, 1.0 - fa), ((a0 + 1) % na, fa)):
            out = out + (wr * wa) * table.z_at(row * na + col, u)
    return out


def assemble_kernel(v, vstar, table, V, circle_nodes=32, weights=None,
                    unscreened=False):
    """Collision-kernel tensor B(v, v−v*; ∇F) for one velocity pair.

    Parameters
    ----------
    v, vstar : velocities (d,)
    table : ScreeningTable
        Screening values of the field the kernel linearizes around.
        Ignored when unscreened=True.
    V : RadialSpectrum
    circle_nodes : int
        Trapezoid nodes on the unit circle in w⊥ (d=3 only).
    weights : ZMemo or RadialWeightTable, optional
        Radial-weight evaluator to reuse across calls; a fresh
        RadialWeightTable is built when omitted.
    unscreened : bool
        Force ε ≡ 1 (Landau reduction); B then equals
        (L/|w|)(Id − ŵ⊗ŵ) to quadrature accuracy.

    The pair is canonicalized (lexicographic order) before any arithmetic,
    so B(v, v−v*) and B(v*, v*−v) are computed by the *identical* sequence
    of operations and compare bitwise equal — the pair-symmetry contract the
    conservative weak form relies on.
    """
    v = np.asarray(v, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    d = v.shape[0]
    if tuple(vstar) > tuple(v):
        v, vstar = vstar, v
    w = v - vstar
    wnorm = float(np.linalg.norm(w))
    if wnorm == 0.0:
        raise ValueError("coincident velocities: kernel has no finite value")
    if weights is None:
        weights = RadialWeightTable(V, d)
    what = w / wnorm
    pref = (2.0 * math.pi) ** (-d) / wnorm

    if d == 2:
        k0 = np.array([-what[1], what[0]])
        u = float(k0 @ v)
        if unscreened:
            ii = 2.0 * weights.unscreened
        else:
            zp = _interp_z(table, k0, np.asarray(u))
            zm = _interp_z(table, -k0, np.asarray(-u))
            ii = float(weights.evaluate(np.array([zp, zm])).sum())
        entries = pref * ii * np.outer(k0, k0)
        return KernelMatrix(entries=entries, w=w)

    # d=3: orthonormal frame in w⊥ from the axis least aligned with w
    axis = int(np.argmin(np.abs(what)))
    e1 = np.zeros(3)
    e1[axis] = 1.0
    e1 -= (e1 @ what) * what
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(what, e1)
    ang = 2.0 * math.pi * (np.arange(circle_nodes) + 0.5) / circle_nodes
    khats = np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2)
    if unscreened:
        ivals = np.full(circle_nodes, weights.unscreened)
    else:
        us = khats @ v
        zs = np.array([_interp_z(table, khats[c], np.asarray(us[c]))
                       for c in range(circle_nodes)])
        ivals = weights.evaluate(zs)
    entries = np.einsum("c,ci,cj->ij", ivals, khats, khats)
    entries *= pref * (2.0 * math.pi / circle_nodes)
    return KernelMatrix(entries=entries, w=w)


def landau_kernel(w, L):
    """Landau kernel (L/|w|)(Id − ŵ⊗ŵ): trace L(d−1)/|w|, null vector w."""
    w = np.asarray(w, dtype=float)
    wnorm = float(np.linalg.norm(w))
    if wnorm == 0.0:
        raise ValueError("coincident velocities: kernel has no finite value")
    what = w / wnorm
    d = w.shape[0]
    entries = (L / wnorm) * (np.eye(d) - np.outer(what, what))
    return KernelMatrix(entries=entries, w=w)


@dataclass(frozen=True)
class CoefficientField:
    """Equilibrium elliptic coefficients A(v) = Σ_j w_j B(v, v−v_j; ∇μ) μ_j.

    A(v) = λ₁(v) P_v + λ₂(v) P_v⊥ by isotropy; λ₁ decays like ⟨v⟩^{−3} and
    λ₂ like ⟨v⟩^{−1} (the bands are measured, not asserted).
    """

    grid: object
    A: np.ndarray          # (N, d, d)
    lambda1: np.ndarray    # grid shape
    lambda2: np.ndarray    # grid shape

    @property
    def lambda2_max(self):
        return float(self.lambda2.max())


def equilibrium_coefficients(grid, V, beta_folded=True):
    """Coefficient field A at the discrete β=1 Maxwellian.

    Uses the closed-form Maxwellian screening (no table error): for the
    pair (v_i, v_j), the hyperplane directions see Z_M(k̂·v_i), and the
    radial weight is the 1D even profile I(Z_M(u)).  The pair sum excludes
    the diagonal, mirroring the collision operator's quadrature.

    β must already be folded into V (fold_temperature); the flag is an
    assertion of that contract, not a switch.
    """
    if not beta_folded:
        raise ValueError("fold beta into V first (potential.fold_temperature)")
    from .grid import maxwellian  # local import to avoid a cycle at import time

    d, nodes, wq = grid.d, grid.nodes, grid.weight
    mu = maxwellian(grid).reshape(-1)
    umax = grid.extent * math.sqrt(d) + 1.0
    u_nodes = np.linspace(0.0, umax, 2048)
    _, iprof = isotropic_weight_profile(V, d, u_nodes)

    N = nodes.shape[0]
    A = np.zeros((N, d, d))
    pref = (2.0 * math.pi) ** (-d)
    if d == 2:
        for i in range(N):
            wvec = nodes[i] - nodes                   # (N, 2)
            wn = np.hypot(wvec[:, 0], wvec[:, 1])
            ok = wn > 0.0
            k0 = np.stack([-wvec[:, 1], wvec[:, 0]], axis=1)
            k0[ok] /= wn[ok, None]
            u = k0 @ nodes[i]
            ivals = np.interp(np.abs(u), u_nodes, iprof)
            c = np.zeros(N)
            c[ok] = wq * mu[ok] * pref * 2.0 * ivals[ok] / wn[ok]
            A[i] = np.einsum("j,ja,jb->ab", c, k0, k0)
    else:
        m_circ = 16
        ang = 2.0 * math.pi * (np.arange(m_circ) + 0.5) / m_circ
        ca, sa = np.cos(ang), np.sin(ang)
        for i in range(N):
            wvec = nodes[i] - nodes
            wn = np.linalg.norm(wvec, axis=1)
            ok = wn > 0.0
            what = np.zeros_like(wvec)
            what[ok] = wvec[ok] / wn[ok, None]
            axis = np.argmin(np.abs(what), axis=1)
            e1 = np.eye(3)[axis]
            e1 -= np.sum(e1 * what, axis=1)[:, None] * what
            nrm = np.linalg.norm(e1, axis=1)
            e1[ok] /= nrm[ok, None]
            e2 = np.cross(what, e1)
            # khats: (N, m_circ, 3)
            khats = ca[None, :, None] * e1[:, None, :] \
                + sa[None, :, None] * e2[:, None, :]
            us = khats @ nodes[i]
            ivals = np.interp(np.abs(us), u_nodes, iprof)
            c = np.zeros(N)
            c[ok] = wq * mu[ok] * pref * (2.0 * math.pi / m_circ) / wn[ok]
            A[i] = np.einsum("j,jc,jca,jcb->ab", c, ivals, khats, khats)

    speed = np.sqrt(np.sum(nodes ** 2, axis=1))
    vhat = np.zeros_like(nodes)
    nz = speed > 0.0
    vhat[nz] = nodes[nz] / speed[nz, None]
    vhat[~nz, 0] = 1.0
    lam1 = np.einsum("ia,iab,ib->i", vhat, A, vhat)
    lam2 = (np.einsum("iaa->i", A) - lam1) / (d - 1)
    return CoefficientField(grid=grid, A=A,
                            lambda1=lam1.reshape(grid.shape),
                            lambda2=lam2.reshape(grid.shape))
