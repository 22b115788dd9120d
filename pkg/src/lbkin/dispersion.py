"""The dispersion function ε(k, k·v; ∇F) and its screening tables.

Central algorithmic fact: ε factorizes as

    ε(k, k·v; ∇F) = 1 + V̂(|k|) · Z(k̂, u),      u = k̂·v,
    Z(k̂, u) = p.v.∫ M'(y)/(u − y) dy + iπ M'(u),

where M is the directional marginal of F along k̂.  Z does not depend on
|k| at all, so a table of Z over (k̂, u) plus the radial profile V̂ gives ε
everywhere.  The imaginary part is the Plemelj (−i0 prescription) term; the
sign convention is pinned by the Maxwellian closed form below (Im ε < 0 for
u > 0 at equilibrium) and enforced by a cross-check test, not by a comment.

At the β=1 Maxwellian the marginal is the unit Gaussian and everything is
closed-form in the Dawson function:

    Re Z(u) = 2(1 − 2u·D(u)),   Im Z(u) = −2√π·u·e^{−u²},

equivalently ε = 1 + 2V̂·H(w) − i√(2π)·V̂·w·e^{−w²/2} with w = √2·u and
H(x) = 1 − √2·x·D(x/√2).

Grid path (build_screening_table), per direction k̂:

  1. The marginal of the sampled field is the line measure
     Σ_i w_i F_i δ(u − k̂·v_i); its Fourier coefficients on the u-window,
     M̂(ξ) = Σ_i w_i F_i e^{−iξ k̂·v_i}, are evaluated *exactly*.  The
     tensor-product grid makes the sum separable, so this costs a couple of
     small matrix products per direction — no binning, no deposition kernel,
     and hence no deposition bias to deconvolve.
  2. A cos² low-pass window keeps ξ up to 0.75·π/h and rolls off to zero at
     the velocity-lattice Nyquist π/h.  Beyond the window the lattice sum is
     dominated by aliases of the v-lattice (for directions near low-order
     rational angles the projected lattice is commensurate and carries
     full-strength combs — the reason a binned marginal cannot reach the
     dual-path tolerance); inside it, the nearest lattice image of a smooth
     field sits at least 1.25·π/h away in k-space, so in-band contamination
     dies like exp(−c/h²) — faster than any power of h.
  3. Inverse FFT gives M' at the u-nodes (for Im Z = πM') and at the
     staggered midpoints.
  4. Re Z by the odd-kernel midpoint rule: Re Z(u_j) = Σ_m M'_mid[m]/(j−m−½).
     The singularity always falls between samples, making this a true
     midpoint rule on an even, smooth integrand — spectrally accurate (a
     node-centred punctured sum would be first-order accurate; staggering is
     what makes the dual-path tolerance reachable).
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve
import scipy.special

__all__ = [
    "dawson",
    "h_screening",
    "eps_maxwellian",
    "eps_maxwellian_abs2",
    "maxwellian_z",
    "ScreeningTable",
    "build_screening_table",
    "maxwellian_screening_table",
    "marginal_spectrum",
    "pv_convolution_direct",
    "pv_convolution_fft",
    "penrose_scan",
    "PenroseScan",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def dawson(x):
    """Dawson integral D(x) = e^{−x²}∫₀ˣe^{t²}dt (odd, |D| ≤ 0.5411)."""
    return scipy.special.dawsn(x)


def h_screening(x):
    """H(x) = 1 − √2·x·D(x/√2): the real screening factor at Maxwellian.

    H(0) = 1; H decays like −1/x² for large |x| (and is negative there);
    H ≥ 0 on |x| ≤ 1.
    """
    x = np.asarray(x, dtype=float)
    return 1.0 - _SQRT2 * x * scipy.special.dawsn(x / _SQRT2)


def eps_maxwellian(w, vhat):
    """Closed-form dispersion function at the β=1 Maxwellian.

    ε = 1 + 2·vhat·H(w) − i·√(2π)·vhat·w·e^{−w²/2},  w = √2·(k̂·v).

    Conjugate symmetry: eps(−w) = conj(eps(w)).
    """
    w = np.asarray(w, dtype=float)
    re = 1.0 + 2.0 * vhat * h_screening(w)
    im = -_SQRT_2PI * vhat * w * np.exp(-0.5 * w * w)
    return re + 1j * im


def eps_maxwellian_abs2(w, vhat):
    """|ε|² at the Maxwellian: (1 + 2·vhat·H(w))² + 2π·vhat²·w²·e^{−w²}."""
    w = np.asarray(w, dtype=float)
    re = 1.0 + 2.0 * vhat * h_screening(w)
    return re * re + 2.0 * math.pi * (vhat * w) ** 2 * np.exp(-w * w)


def maxwellian_z(u):
    """Closed-form Z(u) at the β=1 Maxwellian (independent of k̂).

    Z(u) = 2(1 − 2u·D(u)) − 2i√π·u·e^{−u²}; satisfies Z(−u) = conj(Z(u))
    and 1 + vhat·Z(u) = eps_maxwellian(√2·u, vhat).
    """
    u = np.asarray(u, dtype=float)
    re = 2.0 * (1.0 - 2.0 * u * scipy.special.dawsn(u))
    im = -2.0 * _SQRT_PI * u * np.exp(-u * u)
    return re + 1j * im


@dataclass(frozen=True)
class ScreeningTable:
    """Z(k̂, u) tabulated on a DirectionSet × u-grid.

    mass is the marginal mass (equal to the total mass of F for every
    direction, exactly); it feeds the far-field tail Re Z ~ −mass/u²,
    Im Z = 0 used for |u| beyond the table.  provenance is a content hash
    of the field the table was built from.
    """

    dirs: object            # DirectionSet
    ugrid: object           # UGrid
    z: np.ndarray           # (ndirs, nu) complex
    mass: float
    provenance: str

    @property
    def u_edge(self):
        return float(self.ugrid.nodes[-1])

    def z_at(self, dir_index, u):
        """Z at arbitrary u for a table direction: linear interpolation
        inside the table, −mass/u² (real) tail outside."""
        u = np.asarray(u, dtype=float)
        nodes = self.ugrid.nodes
        zrow = self.z[dir_index]
        re = np.interp(u, nodes, zrow.real)
        im = np.interp(u, nodes, zrow.imag)
        out = np.asarray(re + 1j * im, dtype=complex)
        outside = np.abs(u) > nodes[-1]
        if np.any(outside):
            out[outside] = -self.mass / np.square(u[outside])
        return out


def _field_hash(values, grid):
    hsh = hashlib.sha1()
    hsh.update(np.ascontiguousarray(values, dtype="<f8").tobytes())
    hsh.update(f"{grid.d}:{grid.n}:{grid.extent!r}".encode())
    return hsh.hexdigest()[:16]


def marginal_spectrum(grid, F, khat, xi):
    """Exact Fourier coefficients Σ_i w_i F_i e^{−iξ(k̂·v_i)} of the sampled
    marginal, via the separable tensor-product factorization."""
    F = np.asarray(F)
    phases = [np.exp(-1j * np.outer(xi, khat[a] * grid.axis))
              for a in range(grid.d)]
    if grid.d == 2:
        acc = phases[0] @ F                       # (nxi, n)
        out = np.einsum("kj,kj->k", acc, phases[1])
    else:
        acc = np.tensordot(phases[0], F, axes=(1, 0))      # (nxi, n, n)
        acc = np.einsum("kj,kjl->kl", phases[1], acc)      # (nxi, n)
        out = np.einsum("kl,kl->k", phases[2], acc)
    return grid.weight * out


def _lowpass_window(xi, h, pass_frac):
    """cos² window: 1 up to pass_frac·(π/h), zero from the lattice Nyquist
    π/h on, smooth in between."""
    xi_stop = math.pi / h
    xi_pass = pass_frac * xi_stop
    window = np.zeros_like(xi)
    window[xi <= xi_pass] = 1.0
    roll = (xi > xi_pass) & (xi < xi_stop)
    window[roll] = np.cos(0.5 * math.pi * (xi[roll] - xi_pass)
                          / (xi_stop - xi_pass)) ** 2
    return window


def _pv_kernel_matrix(nu):
    """Dense (nu, nu-1) matrix K[j, m] = 1/(j - m - 1/2).

    Re Z_j = Σ_m M'_mid[m] · K[j, m]: the Δu from the quadrature cancels
    against the Δu in the kernel denominator, leaving pure half-integer
    reciprocals.
    """
    col = 1.0 / (np.arange(nu) - 0.5)            # m = 0
    row = 1.0 / (-np.arange(nu - 1) - 0.5)       # j = 0
    return toeplitz(col, row)


def pv_convolution_direct(mprime_mid):
    """p.v. sums Σ_m a[m]/(j−m−1/2) for all j, dense-matrix path (O(N²))."""
    a = np.atleast_2d(np.asarray(mprime_mid, dtype=float))
    nu = a.shape[1] + 1
    out = a @ _pv_kernel_matrix(nu).T
    return out[0] if np.ndim(mprime_mid) == 1 else out


def pv_convolution_fft(mprime_mid):
    """Same sums via zero-padded FFT convolution (O(N log N)).

    Agrees with the direct path to round-off; used for large tables.
    """
    a = np.atleast_2d(np.asarray(mprime_mid, dtype=float))
    nm = a.shape[1]
    nu = nm + 1
    q = np.arange(-(nm - 1), nu)                  # j - m range
    kern = 1.0 / (q - 0.5)
    full = fftconvolve(a, kern[None, :], mode="full", axes=1)
    out = full[:, nm - 1:nm - 1 + nu]
    return out[0] if np.ndim(mprime_mid) == 1 else out


def build_screening_table(field, dirs, ugrid, pass_frac=0.75, pv_fft_above=4096):
    """Tabulate Z(k̂, u) for a density field over a DirectionSet × u-grid.

    See the module docstring for the per-direction pipeline.  The direct
    O(N²) principal-value kernel is used up to pv_fft_above u-points, FFT
    convolution beyond.
    """
    grid = field.grid
    F = field.values
    du, nu = ugrid.du, ugrid.nu
    ndirs = len(dirs)
    xi = 2.0 * math.pi * np.fft.rfftfreq(nu, du)
    window = _lowpass_window(xi, grid.h, pass_frac)
    # the irfft below indexes samples from u0, so anchor the phases there
    anchor = np.exp(1j * xi * ugrid.u0) * window
    half_shift = np.exp(1j * xi * (0.5 * du))

    mprime = np.empty((ndirs, nu))
    mprime_mid = np.empty((ndirs, nu - 1))
    for m in range(ndirs):
        spec = marginal_spectrum(grid, F, dirs.vectors[m], xi) * anchor
        dspec = spec * (1j * xi)
        mprime[m] = np.fft.irfft(dspec, n=nu) / du
        mprime_mid[m] = np.fft.irfft(dspec * half_shift, n=nu)[:-1] / du

    if nu <= pv_fft_above:
        rez = pv_convolution_direct(mprime_mid)
    else:
        rez = pv_convolution_fft(mprime_mid)
    z = rez + 1j * (math.pi * mprime)
    mass = float(grid.weight * F.sum())
    return ScreeningTable(dirs=dirs, ugrid=ugrid, z=z, mass=mass,
                          provenance=_field_hash(F, grid))


def maxwellian_screening_table(dirs, ugrid):
    """ScreeningTable filled with the closed-form Maxwellian Z (every
    direction identical).  Used by the equilibrium coefficient field and as
    the reference in dual-path tests."""
    zrow = maxwellian_z(ugrid.nodes)
    z = np.broadcast_to(zrow, (len(dirs), ugrid.nu)).copy()
    return ScreeningTable(dirs=dirs, ugrid=ugrid, z=z, mass=1.0,
                          provenance="maxwellian-closed-form")


@dataclass(frozen=True)
class PenroseScan:
    """Result of a |ε| minimum scan over the sampled (k̂, r, u) lattice."""

    min_abs: float
    min_abs2: float
    khat: np.ndarray
    r: float
    u: float

    @property
    def degenerate(self):
        return self.min_abs < 1e-8


def penrose_scan(table, V, r_nodes):
    """Minimum of |ε| = |1 + V̂(r)·Z(k̂,u)| over the sampled lattice.

    The scan always includes the endpoints r = 0 and r = r_max (where
    V̂ ≈ 0 forces |ε| → 1, so minima are interior in r).  A minimum near
    zero is a legitimate answer (linearly unstable / degenerate field);
    callers decide whether to abort.
    """
    r_nodes = np.unique(np.concatenate([
        np.asarray(r_nodes, dtype=float), [0.0, V.r_max]]))
    vh = V(r_nodes)
    best = (math.inf, 0, 0.0, 0.0)
    for ir, vhat in enumerate(vh):
        a2 = np.abs(1.0 + vhat * table.z) ** 2
        flat = int(np.argmin(a2))
        val = float(a2.flat[flat])
        if val < best[0]:
            m, j = np.unravel_index(flat, a2.shape)
            best = (val, int(m), float(r_nodes[ir]), float(table.ugrid.nodes[j]))
    min2, m, r, u = best
    return PenroseScan(min_abs=math.sqrt(min2), min_abs2=min2,
                       khat=table.dirs.vectors[m].copy(), r=r, u=u)
