"""Uniform tensor-product velocity grids and the discrete calculus on them.

The whole library works on a cube [-extent, extent]^d sampled with an odd
number n of nodes per axis (h = 2*extent/(n-1), node weights h^d).  Odd n
keeps the origin on the grid, which matters for the symmetry of equilibria.

Design notes baked into this module:

* the discrete gradient D is second-order central differences in the
  interior and one-sided second-order stencils on the faces.  D is exact on
  affine functions and on |v|^2/2, which is what makes the weak-form
  collision operator conserve mass, momentum and energy to round-off;
* the discrete divergence is minus the adjoint of D in the (uniform-weight)
  l2 inner product, so summation by parts holds *exactly*, with no boundary
  remainder — this is the "zero flux through the outer face" boundary
  condition in operator form;
* directional marginals deposit node masses onto a finer u-grid with a
  triangle (cloud-in-cell) kernel whose width equals the lattice spacing h.
  The triangle's Fourier transform vanishes at the lattice frequencies
  2*pi*m/h, so lattice-aligned directions do not produce comb artifacts, and
  the sampled triangle sums to exactly one per deposit, so the marginal mass
  identity sum_j du*M_j = sum_i w_i F_i holds to round-off.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VelocityGrid",
    "DensityField",
    "DirectionSet",
    "UGrid",
    "make_grid",
    "make_directions",
    "make_u_grid",
    "maxwellian",
    "central_gradient",
    "divergence",
    "directional_marginal",
]


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform tensor grid on [-extent, extent]^d with n nodes per axis."""

    d: int
    n: int
    extent: float
    h: float
    axis: np.ndarray          # (n,) shared 1D node coordinates
    nodes: np.ndarray         # (N, d) node coordinates, C-order flattening
    weight: float             # uniform quadrature weight h**d
    diff1: np.ndarray = field(repr=False, default=None)  # (n, n) 1D gradient matrix

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n ** self.d

    def speed(self):
        """|v| at every node, in grid shape."""
        return np.sqrt(np.sum(self.nodes ** 2, axis=1)).reshape(self.shape)


@dataclass
class DensityField:
    """Grid samples of a velocity density, tagged by representation.

    kind is "absolute" for F itself or "perturbation" for f in the
    near-equilibrium split F = mu + sqrt(mu) f.
    """

    grid: VelocityGrid
    values: np.ndarray
    kind: str = "absolute"

    def __post_init__(self):
        if self.kind not in ("absolute", "perturbation"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self):
        return DensityField(self.grid, self.values.copy(), self.kind)


@dataclass(frozen=True)
class DirectionSet:
    """Unit vectors on S^{d-1} with quadrature weights.

    For d=2 the angles are uniform with a half-step offset so no direction is
    exactly lattice-aligned.  For d=3 the set is a product of Gauss-Legendre
    rings in the polar cosine and uniform azimuths; ring_index/ring_polar
    record the ring structure for interpolation.
    """

    d: int
    vectors: np.ndarray       # (ndirs, d)
    weights: np.ndarray       # (ndirs,), sums to |S^{d-1}|
    angles: np.ndarray = None         # d=2: (ndirs,) angles in [0, 2pi)
    ring_polar: np.ndarray = None     # d=3: (nrings,) polar angles theta
    n_azimuth: int = 0                # d=3: azimuths per ring

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class UGrid:
    """Uniform 1D grid for directional marginals, symmetric about 0."""

    du: float
    nodes: np.ndarray

    @property
    def nu(self):
        return self.nodes.shape[0]

    @property
    def u0(self):
        return self.nodes[0]


def make_grid(d, extent, n):
    """Build the velocity grid.

    Parameters
    ----------
    d : int
        Velocity dimension, 2 or 3.
    extent : float
        Half-width of the cube; nodes span [-extent, extent].
    n : int
        Nodes per axis; odd and >= 5.
    """
    if d not in (2, 3):
        raise ValueError(f"velocity dimension must be 2 or 3, got {d}")
    if n < 5 or n % 2 == 0:
        raise ValueError(f"n must be odd and >= 5, got {n}")
    if not extent > 0:
        raise ValueError("extent must be positive")
    h = 2.0 * extent / (n - 1)
    c = (n - 1) // 2
    # (i - c) * h keeps nodes exactly symmetric and the origin exactly zero.
    axis = (np.arange(n) - c) * h
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return VelocityGrid(
        d=d, n=n, extent=float(extent), h=h, axis=axis, nodes=nodes,
        weight=h ** d, diff1=_gradient_matrix(n, h),
    )


def _gradient_matrix(n, h):
    """1D differentiation matrix: central interior, one-sided 2nd order ends."""
    D = np.zeros((n, n))
    inv2h = 1.0 / (2.0 * h)
    for i in range(1, n - 1):
        D[i, i - 1] = -inv2h
        D[i, i + 1] = inv2h
    D[0, 0], D[0, 1], D[0, 2] = -3.0 * inv2h, 4.0 * inv2h, -1.0 * inv2h
    D[n - 1, n - 1], D[n - 1, n - 2], D[n - 1, n - 3] = (
        3.0 * inv2h, -4.0 * inv2h, 1.0 * inv2h,
    )
    return D


def maxwellian(grid, beta=1.0, mean=None):
    """Maxwellian (beta/pi)^{d/2} exp(-beta|v-mean|^2) sampled on the grid."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if mean is None:
        mean = np.zeros(grid.d)
    mean = np.asarray(mean, dtype=float)
    sq = np.sum((grid.nodes - mean) ** 2, axis=1).reshape(grid.shape)
    return (beta / math.pi) ** (grid.d / 2.0) * np.exp(-beta * sq)


def central_gradient(grid, F):
    """Discrete gradient, shape (d,) + grid.shape.

    Second-order everywhere; exact on constants, affine functions and
    quadratics (in particular on |v|^2/2, giving DF = v node-wise).
    """
    F = np.asarray(F)
    if F.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    D = grid.diff1
    out = np.empty((grid.d,) + grid.shape)
    for a in range(grid.d):
        out[a] = np.moveaxis(np.tensordot(D, F, axes=([1], [a])), 0, a)
    return out


def divergence(grid, H):
    """Discrete divergence, minus the adjoint of central_gradient.

    Summation by parts sum_i w F_i (div H)_i = -sum_i w (DF)_i . H_i holds
    exactly by construction (uniform weights), which is the no-flux boundary
    condition in disguise.
    """
    H = np.asarray(H)
    if H.shape != (grid.d,) + grid.shape:
        raise ValueError("flux shape must be (d,) + grid shape")
    Dt = grid.diff1.T
    out = np.zeros(grid.shape)
    for a in range(grid.d):
        out -= np.moveaxis(np.tensordot(Dt, H[a], axes=([1], [a])), 0, a)
    return out


def make_directions(d, n_dirs=64, n_polar=16, n_azimuth=32):
    """Direction set on the unit sphere.

    d=2: n_dirs angles 2*pi*(m+1/2)/n_dirs (n_dirs even so the set is closed
    under k -> -k).  d=3: n_polar Gauss-Legendre rings x n_azimuth offset
    azimuths.  Weights sum to |S^{d-1}|.
    """
    if d == 2:
        if n_dirs % 2:
            raise ValueError("n_dirs must be even so antipodes are in the set")
        ang = 2.0 * np.pi * (np.arange(n_dirs) + 0.5) / n_dirs
        vec = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        wts = np.full(n_dirs, 2.0 * np.pi / n_dirs)
        return DirectionSet(d=2, vectors=vec, weights=wts, angles=ang)
    if d == 3:
        x, gw = np.polynomial.legendre.leggauss(n_polar)
        order = np.argsort(-x)          # polar angle increasing from the pole
        x, gw = x[order], gw[order]
        theta = np.arccos(x)
        phi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
        st = np.sin(theta)
        vec = np.empty((n_polar * n_azimuth, 3))
        wts = np.empty(n_polar * n_azimuth)
        for i in range(n_polar):
            sl = slice(i * n_azimuth, (i + 1) * n_azimuth)
            vec[sl, 0] = st[i] * np.cos(phi)
            vec[sl, 1] = st[i] * np.sin(phi)
            vec[sl, 2] = x[i]
            wts[sl] = gw[i] * 2.0 * np.pi / n_azimuth
        return DirectionSet(
            d=3, vectors=vec, weights=wts, ring_polar=theta, n_azimuth=n_azimuth,
        )
    raise ValueError(f"velocity dimension must be 2 or 3, got {d}")


def make_u_grid(grid, margin_cells=4):
    """u-grid for directional marginals: du = h/2, covering |u| <= extent*sqrt(d)
    plus a deposit margin."""
    du = grid.h / 2.0
    reach = grid.extent * math.sqrt(grid.d) + grid.h
    half = int(math.ceil(reach / du)) + margin_cells
    nodes = (np.arange(2 * half + 1) - half) * du
    return UGrid(du=du, nodes=nodes)


def directional_marginal(grid, F, khat, ugrid):
    """Marginal of F along khat: M(u) ~ integral of F over the plane khat.v = u.

    Cloud-in-cell deposition with a triangle kernel of half-width h (the
    velocity lattice spacing).  h must be an integer multiple of du; then the
    sampled triangle sums to exactly 1 per node and

        sum_j du * M_j = sum_i w_i F_i        (mass identity, exact)

    Accuracy for smooth F is O(h^2) (triangle smoothing bias); the screening
    table corrects that bias spectrally, see dispersion.build_screening_table.
    """
    F = np.asarray(F)
    khat = np.asarray(khat, dtype=float)
    du = ugrid.du
    m = int(round(grid.h / du))
    if m < 1 or abs(grid.h - m * du) > 1e-12 * grid.h:
        raise ValueError("u-grid spacing must divide the lattice spacing h")
    s = grid.nodes @ khat
    rel = (s - ugrid.u0) / du
    base = np.floor(rel).astype(np.int64)
    if base.min() - m + 1 < 0 or base.max() + m >= ugrid.nu:
        raise ValueError("u-grid does not cover the projected node range")
    mass = (grid.weight / grid.h) * F.reshape(-1)
    M = np.zeros(ugrid.nu)
    for off in range(-m + 1, m + 1):
        j = base + off
        w = 1.0 - np.abs(rel - j) / m
        np.maximum(w, 0.0, out=w)
        M += np.bincount(j, weights=mass * w, minlength=ugrid.nu)
    return M
