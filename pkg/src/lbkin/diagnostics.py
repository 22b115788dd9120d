"""Conserved quantities, entropies, norms, and structure probes.

All functionals use the plain lattice quadrature w_q Σ_i (midpoint rule on
the velocity box), matching the quadrature the collision operator itself
is built on; a functional evaluated here is *exactly* the one the discrete
dynamics conserve or dissipate, not a better approximation of the
continuum value.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _pairsum
from .grid import central_gradient, divergence, maxwellian

__all__ = [
    "moments",
    "EntropyValue",
    "boltzmann_entropy",
    "relative_entropy",
    "matched_maxwellian",
    "entropy_dissipation",
    "collision_invariant_basis",
    "pi0_project",
    "WeightSpec",
    "weighted_l2",
    "sobolev_norm",
    "dissipation_norm",
    "CoercivityProbe",
    "coercivity_probe",
]

ENTROPY_FLOOR = 1e-300


def moments(field):
    """(mass, momentum, kinetic energy) under the lattice quadrature.

    Energy is ∫ |v|²/2 F, so the β=1 Maxwellian has energy d/4.
    """
    grid = field.grid
    F = field.values.reshape(-1)
    wq = grid.weight
    mass = wq * float(F.sum())
    mom = wq * (F @ grid.nodes)
    energy = 0.5 * wq * float(F @ np.sum(grid.nodes ** 2, axis=1))
    return mass, mom, energy


@dataclass(frozen=True)
class EntropyValue:
    """Entropy with the quality of its evaluation.

    n_floored counts nodes at or below the positivity floor whose
    contribution was dropped (the x log x → 0 limit); min_value is the
    smallest field value encountered.  A large n_floored or a negative
    min_value flags that the entropy is being read on a field outside the
    regime where the continuous functional is meaningful.
    """

    value: float
    n_floored: int
    min_value: float

    def __float__(self):
        return self.value


def boltzmann_entropy(field, floor=ENTROPY_FLOOR):
    """H(F) = ∫ F log F with an explicit positivity floor."""
    grid = field.grid
    F = field.values.reshape(-1)
    ok = F > floor
    val = grid.weight * float(F[ok] @ np.log(F[ok]))
    return EntropyValue(value=val, n_floored=int(np.sum(~ok)),
                        min_value=float(F.min()))


def matched_maxwellian(field):
    """The Maxwellian sharing the field's discrete mass, momentum, energy."""
    from .grid import DensityField

    grid = field.grid
    rho, mom, energy = moments(field)
    if rho <= 0.0:
        raise ValueError("cannot match a Maxwellian to nonpositive mass")
    mean = mom / rho
    temp = (2.0 * energy / rho - float(mean @ mean)) / grid.d
    if temp <= 0.0:
        raise ValueError("cannot match a Maxwellian to nonpositive temperature")
    diff = grid.nodes - mean
    vals = rho * (2.0 * math.pi * temp) ** (-grid.d / 2.0) \
        * np.exp(-np.sum(diff ** 2, axis=1) / (2.0 * temp))
    return DensityField(grid=grid, values=vals.reshape(grid.shape))


def relative_entropy(field, reference=None, floor=ENTROPY_FLOOR):
    """H(F|M) = ∫ [F log(F/M) − F + M] against the matched Maxwellian.

    The Csiszár form is pointwise nonnegative, so small mass defects do not
    produce spurious negative values.  Floored nodes contribute their M
    mass (the F → 0 limit of the integrand).
    """
    if reference is None:
        reference = matched_maxwellian(field)
    grid = field.grid
    F = field.values.reshape(-1)
    M = reference.values.reshape(-1)
    ok = F > floor
    integrand = np.where(
        ok, F * np.log(np.where(ok, F, 1.0) / M) - F + M, M)
    val = grid.weight * float(integrand.sum())
    return EntropyValue(value=val, n_floored=int(np.sum(~ok)),
                        min_value=float(F.min()))


def entropy_dissipation(field, nslabs=1, floor=ENTROPY_FLOOR):
    """Landau-form relative Fisher information of the field:

        D(F) = ½ Σ_{i≠j} w_q² (F_i F_j / |w_ij|) |Π_ŵ(P_i − P_j)|²,

    with P = ∇F/F and Π_ŵ the projection off the relative velocity.  This
    is the entropy-production functional of the unit-strength Landau
    kernel: a fixed reference scale for how far the field is from
    equilibrium, independent of the potential.
    """
    grid = field.grid
    F = field.values.reshape(-1)
    DF = central_gradient(grid, field.values)
    DF = np.moveaxis(DF, 0, -1).reshape(-1, grid.d)
    P = np.zeros_like(DF)
    ok = F > floor
    P[ok] = DF[ok] / F[ok, None]
    Fpos = np.where(ok, F, 0.0)
    raw = _pairsum.landau_entropy_dissipation(grid.nodes, Fpos, P, nslabs)
    return grid.weight ** 2 * raw


def collision_invariant_basis(grid):
    """Orthonormal basis of the √μ-weighted collision invariants.

    Columns span {√μ, v_1 √μ, …, v_d √μ, |v|² √μ}, orthonormalized by
    modified Gram-Schmidt in the lattice inner product w_q Σ a b.  For a
    perturbation f (F = μ + √μ f), the kernel of the linearized operator
    is exactly this span.
    """
    mu = maxwellian(grid).reshape(-1)
    sq = np.sqrt(mu)
    cols = [sq]
    for a in range(grid.d):
        cols.append(grid.nodes[:, a] * sq)
    cols.append(np.sum(grid.nodes ** 2, axis=1) * sq)
    basis = np.stack(cols, axis=1)
    wq = grid.weight
    for k in range(basis.shape[1]):
        for m in range(k):
            basis[:, k] -= (wq * (basis[:, m] @ basis[:, k])) * basis[:, m]
        nrm = math.sqrt(wq * float(basis[:, k] @ basis[:, k]))
        basis[:, k] /= nrm
    return basis


def pi0_project(grid, f):
    """(projection, residual) of f onto the collision-invariant span."""
    f = np.asarray(f, dtype=float).reshape(-1)
    basis = collision_invariant_basis(grid)
    coeffs = grid.weight * (basis.T @ f)
    proj = basis @ coeffs
    return proj, f - proj


@dataclass(frozen=True)
class WeightSpec:
    """Parameters of a ⟨v⟩^ℓ e^{K⟨v⟩^θ} weight.

    θ = 0 collapses the exponential into a constant factor e^K, θ = 2 is
    the Gaussian-confining extreme; values outside [0, 2] put the weight
    outside the family the decay estimates cover.
    """

    ell: float = 0.0
    theta: float = 0.0
    K: float = 0.0

    def __post_init__(self):
        if self.ell < 0.0:
            raise ValueError("weight order ell must be nonnegative")
        if not 0.0 <= self.theta <= 2.0:
            raise ValueError("stretching exponent theta must lie in [0, 2]")
        if self.K < 0.0:
            raise ValueError("weight strength K must be nonnegative")

    def label(self):
        if self.K == 0.0:
            return f"l{self.ell:g}"
        return f"l{self.ell:g}_t{self.theta:g}_K{self.K:g}"


def weighted_l2(field, ell=0.0, theta=0.0, K=0.0):
    """‖⟨v⟩^ℓ e^{K⟨v⟩^θ} F‖ in the lattice L² norm.

    Refuses weights that overflow double precision on this grid (the
    largest exponent K⟨v⟩^θ must stay below 700).
    """
    grid = field.grid
    av2 = 1.0 + np.sum(grid.nodes ** 2, axis=1)
    if K != 0.0:
        peak = K * float(av2.max()) ** (theta / 2.0)
        if peak > 700.0:
            raise ValueError(
                f"weight exponent K⟨v⟩^θ reaches {peak:.3g} > 700 on this "
                "grid; the weighted norm would overflow")
    wt = av2 ** (ell / 2.0)
    if K != 0.0:
        wt = wt * np.exp(K * av2 ** (theta / 2.0))
    F = field.values.reshape(-1)
    return math.sqrt(grid.weight * float(np.sum((wt * F) ** 2)))


def sobolev_norm(field, s=1):
    """Discrete H^s norm (s ∈ {0, 1, 2}) built from repeated applications
    of the lattice gradient."""
    if s not in (0, 1, 2):
        raise ValueError("s must be 0, 1, or 2")
    grid = field.grid
    wq = grid.weight
    total = wq * float(np.sum(field.values ** 2))
    if s >= 1:
        G = central_gradient(grid, field.values)
        total += wq * float(np.sum(G ** 2))
        if s == 2:
            for a in range(grid.d):
                G2 = central_gradient(grid, G[a])
                total += wq * float(np.sum(G2 ** 2))
    return math.sqrt(total)


def dissipation_norm(grid, coef, f):
    """Anisotropic dissipation norm of a perturbation:

        |||f|||² = ∫ (∇f)·A(v)(∇f) + ∫ f² v·A(v)v,

    with A the equilibrium coefficient field.  Accepts a CoefficientField
    or a raw (N, d, d) array.
    """
    A = getattr(coef, "A", coef)
    f = np.asarray(f, dtype=float)
    Df = central_gradient(grid, f.reshape(grid.shape))
    Df = np.moveaxis(Df, 0, -1).reshape(-1, grid.d)
    grad_part = np.einsum("ia,iab,ib->i", Df, A, Df)
    vav = np.einsum("ia,iab,ib->i", grid.nodes, A, grid.nodes)
    zero_part = f.reshape(-1) ** 2 * vav
    return math.sqrt(grid.weight * float(np.sum(grad_part + zero_part)))


@dataclass(frozen=True)
class CoercivityProbe:
    """Dirichlet form of the linearized operator, measured two ways.

    quadratic_form is −⟨f, L f⟩ through the operator (divergence) route;
    double_sum is the symmetrized pair sum ½ ΣΣ w_q² ξ·Bξ.  The two are
    the same quantity by summation by parts, so their difference is a
    round-off meter; the pair sum is the one that is nonnegative term by
    term.  dissipation is |||f||| for forming coercivity quotients, and
    pi0_norm records how much collision-invariant component the probe
    field carried.
    """

    quadratic_form: float
    double_sum: float
    dissipation: float
    pi0_norm: float

    @property
    def agreement(self):
        scale = max(abs(self.quadratic_form), abs(self.double_sum), 1e-300)
        return abs(self.quadratic_form - self.double_sum) / scale


def coercivity_probe(grid, f, wt, nslabs=1):
    """Probe the linearized collision operator at equilibrium with f.

    wt is the equilibrium WeightTables bundle (kernel.equilibrium_weight_tables
    for the screened operator, kernel.landau_weight_tables for ε ≡ 1).
    """
    f = np.asarray(f, dtype=float).reshape(-1)
    mu = maxwellian(grid).reshape(-1)
    sqmu = np.sqrt(mu)
    wq = grid.weight

    Df = central_gradient(grid, f.reshape(grid.shape))
    Df = np.moveaxis(Df, 0, -1).reshape(-1, grid.d)
    eta = Df + grid.nodes * f[:, None]

    Apk, G = _pairsum.moment_fields(grid.nodes, mu, sqmu[:, None] * eta,
                                    wt, nslabs)
    A = wq * _pairsum.unpack_symmetric(Apk, grid.d)
    G = wq * G
    phi = np.einsum("iab,ib->ia", A, eta) - sqmu[:, None] * G
    phi_grid = np.moveaxis(phi.reshape(grid.shape + (grid.d,)), -1, 0)
    Lf = divergence(grid, phi_grid).reshape(-1) \
        - np.einsum("ia,ia->i", grid.nodes, phi)
    s_op = -wq * float(f @ Lf)

    raw = _pairsum.screened_quadratic_form(grid.nodes, sqmu, eta, wt, nslabs)
    s_dd = wq ** 2 * raw

    grad_part = np.einsum("ia,iab,ib->i", Df, A, Df)
    vav = np.einsum("ia,iab,ib->i", grid.nodes, A, grid.nodes)
    dis = math.sqrt(wq * float(np.sum(grad_part + f ** 2 * vav)))

    proj, _ = pi0_project(grid, f)
    pi0 = math.sqrt(wq * float(proj @ proj))
    return CoercivityProbe(quadratic_form=s_op, double_sum=s_dd,
                           dissipation=dis, pi0_norm=pi0)
