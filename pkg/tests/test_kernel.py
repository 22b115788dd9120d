"""Collision-kernel assembly, radial weights, the Landau reduction."""
import math

import numpy as np
import pytest

from lbkin import (
    make_grid, make_directions, make_u_grid, maxwellian,
    assemble_kernel, landau_kernel, landau_constant,
    maxwellian_screening_table, gaussian_spectrum,
    equilibrium_coefficients, DispersionDegeneracyError,
)
from lbkin.kernel import (
    radial_kernel_weight, RadialWeightTable, ZMemo, KernelMatrix,
    isotropic_weight_profile,
)
from lbkin.dispersion import maxwellian_z


@pytest.fixture(scope="module")
def table2():
    g = make_grid(2, 6.0, 21)
    return maxwellian_screening_table(make_directions(2, 32), make_u_grid(g))


@pytest.fixture(scope="module")
def table3():
    g = make_grid(3, 5.0, 11)
    return maxwellian_screening_table(make_directions(3, None, 12, 24),
                                      make_u_grid(g))


class TestRadialWeights:
    def test_unscreened_closed_form_d2(self, vgauss):
        """I(0) = π ∫ r² e^{−r²} dr = π^{3/2}/4."""
        val = radial_kernel_weight(vgauss, 0.0, 2)
        assert val == pytest.approx(math.pi ** 1.5 / 4.0, rel=1e-8)

    def test_unscreened_closed_form_d3(self, vgauss):
        """I(0) = π ∫ r³ e^{−r²} dr = π/2."""
        val = radial_kernel_weight(vgauss, 0.0, 3)
        assert val == pytest.approx(math.pi / 2.0, rel=1e-8)

    def test_screening_reduces_weight(self, vgauss):
        """Positive static screening (real Z > 0) inflates |ε| and so
        shrinks I below its unscreened value."""
        z = maxwellian_z(np.array([0.0]))[0]      # Z = 2, purely real
        assert z.real == pytest.approx(2.0) and z.imag == 0.0
        screened = radial_kernel_weight(vgauss, z, 2)
        bare = radial_kernel_weight(vgauss, 0.0, 2)
        assert screened < bare

    def test_gauss_table_matches_adaptive(self, vgauss, rng):
        """Fixed 192-node Gauss-Legendre table vs adaptive quadrature on
        random screening values: two independent quadrature routes."""
        tab = RadialWeightTable(vgauss, 2)
        zs = rng.standard_normal(6) * 0.8 + 1j * rng.standard_normal(6) * 0.8
        got = tab.evaluate(zs, check_degeneracy=False)
        want = [radial_kernel_weight(vgauss, z, 2) for z in zs]
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_degeneracy_raises(self, vgauss):
        """Z = −1/V̂(r₀) at some interior r zeroes the denominator."""
        with pytest.raises(DispersionDegeneracyError):
            radial_kernel_weight(vgauss, complex(-1.25, 0.0), 2)
        tab = RadialWeightTable(vgauss, 2)
        with pytest.raises(DispersionDegeneracyError):
            tab.evaluate(np.array([complex(-1.25, 0.0)]))

    def test_memo_accuracy(self, vgauss, rng):
        """Bilinear memo vs direct table evaluation: a few parts in 1e5
        relative, worst where strong screening bends I(Z) hardest."""
        memo = ZMemo(vgauss, 2)
        tab = RadialWeightTable(vgauss, 2)
        zs = (rng.standard_normal(64) * 0.9
              + 1j * rng.standard_normal(64) * 0.9)
        got = memo.evaluate(zs)
        want = tab.evaluate(zs, check_degeneracy=False)
        np.testing.assert_allclose(got, want, rtol=5e-5)

    def test_memo_reuses_corners(self, vgauss):
        memo = ZMemo(vgauss, 2)
        memo.evaluate(np.array([0.5 + 0.5j]))
        n1 = len(memo._corners)
        memo.evaluate(np.array([0.5001 + 0.5001j]))  # same cell
        assert len(memo._corners) == n1

    def test_isotropic_profile_even(self, vgauss):
        u, vals = isotropic_weight_profile(vgauss, 2, np.linspace(-3, 3, 13))
        np.testing.assert_allclose(vals, vals[::-1], rtol=1e-12)


class TestKernelMatrix:
    def test_landau_reduction_d2(self, table2, vgauss, rng):
        """unscreened=True must reproduce (L/|w|)(Id − ŵ⊗ŵ)."""
        L = landau_constant(vgauss, 2)
        for _ in range(25):
            v, vs = rng.standard_normal(2), rng.standard_normal(2)
            B = assemble_kernel(v, vs, table2, vgauss, unscreened=True)
            ref = landau_kernel(v - vs, L)
            np.testing.assert_allclose(B.entries, ref.entries, rtol=1e-9,
                                       atol=1e-14)

    def test_landau_reduction_d3(self, table3, vgauss, rng):
        L = landau_constant(vgauss, 3)
        for _ in range(10):
            v, vs = rng.standard_normal(3), rng.standard_normal(3)
            B = assemble_kernel(v, vs, table3, vgauss, unscreened=True)
            ref = landau_kernel(v - vs, L)
            np.testing.assert_allclose(B.entries, ref.entries, rtol=1e-9,
                                       atol=1e-14)

    def test_rank_one_in_d2(self, table2, vgauss):
        """The d=2 hyperplane is two points: B is rank one, so its
        smaller eigenvalue is exactly zero and w is the null vector."""
        B = assemble_kernel(np.array([1.0, 0.3]), np.array([-0.4, 0.8]),
                            table2, vgauss)
        eig = np.linalg.eigvalsh(B.entries)
        assert abs(eig[0]) < 1e-16 * eig[1]
        assert eig[1] > 0.0
        assert B.null_defect < 1e-14

    def test_psd_and_null_vector_d3(self, table3, vgauss, rng):
        for _ in range(10):
            v, vs = rng.standard_normal(3), rng.standard_normal(3)
            B = assemble_kernel(v, vs, table3, vgauss)
            eig = np.linalg.eigvalsh(B.entries)
            assert eig.min() > -1e-15
            assert B.null_defect < 1e-12

    def test_pair_symmetry_bitwise(self, table2, vgauss, rng):
        """B(v, v*) and B(v*, v) follow the identical instruction stream
        after canonicalization, so the entries agree bit for bit."""
        for _ in range(10):
            v, vs = rng.standard_normal(2), rng.standard_normal(2)
            B1 = assemble_kernel(v, vs, table2, vgauss)
            B2 = assemble_kernel(vs, v, table2, vgauss)
            assert np.array_equal(B1.entries, B2.entries)

    def test_coincident_rejected(self, table2, vgauss):
        v = np.array([0.5, 0.5])
        with pytest.raises(ValueError):
            assemble_kernel(v, v, table2, vgauss)
        with pytest.raises(ValueError):
            landau_kernel(np.zeros(2), 1.0)

    def test_landau_kernel_trace(self):
        w = np.array([3.0, 0.0, 4.0])
        K = landau_kernel(w, 2.0)
        assert np.trace(K.entries) == pytest.approx(2.0 * 2 / 5.0)
        np.testing.assert_allclose(K.entries @ w, 0.0, atol=1e-15)

    def test_array_protocol(self):
        K = landau_kernel(np.array([1.0, 0.0]), 1.0)
        assert np.asarray(K).shape == (2, 2)

    def test_circle_quadrature_converges(self, table3, vgauss):
        """Screened d=3 kernel: raising circle_nodes 16 → 64 moves the
        entries by less than the 16-node error, and 32 vs 64 agree to a
        few parts in 1e4 (trapezoid on a smooth periodic integrand)."""
        v, vs = np.array([1.2, -0.3, 0.5]), np.array([-0.7, 0.9, 0.1])
        B16 = assemble_kernel(v, vs, table3, vgauss, circle_nodes=16).entries
        B32 = assemble_kernel(v, vs, table3, vgauss, circle_nodes=32).entries
        B64 = assemble_kernel(v, vs, table3, vgauss, circle_nodes=64).entries
        e16 = np.abs(B16 - B64).max()
        e32 = np.abs(B32 - B64).max()
        assert e32 < e16
        assert e32 < 1e-3 * np.abs(B64).max()


class TestEquilibriumCoefficients:
    def test_isotropy_split(self, grid2, vgauss):
        """A(v) = λ₁ P_v + λ₂ P_v⊥ exactly, by rotational symmetry of the
        Maxwellian pair sum."""
        coef = equilibrium_coefficients(grid2, vgauss)
        nodes = grid2.nodes
        r2 = (nodes ** 2).sum(axis=1)
        i = int(np.argmax(r2))             # farthest node off the axes
        v = nodes[i]
        P = np.outer(v, v) / r2[i]
        A = coef.A[i]
        recon = (coef.lambda1.reshape(-1)[i] * P
                 + coef.lambda2.reshape(-1)[i] * (np.eye(2) - P))
        np.testing.assert_allclose(A, recon, atol=1e-12)

    def test_positive_definite(self, coef2):
        eig = np.linalg.eigvalsh(coef2.A)
        assert eig.min() > 0.0

    def test_lambda_ordering(self, coef2):
        """λ₂ ≥ λ₁ pointwise: motion across w is less suppressed than
        motion along it."""
        assert np.all(coef2.lambda2 - coef2.lambda1 > -1e-15)
        assert coef2.lambda2_max == pytest.approx(coef2.lambda2.max())

    def test_rotation_equivariance(self, grid2, vgauss, coef2):
        """A(Rv) = R A(v) Rᵀ for the lattice symmetry R = 90° rotation."""
        R = np.array([[0.0, -1.0], [1.0, 0.0]])
        nodes = grid2.nodes
        A = coef2.A.reshape(grid2.shape + (2, 2))
        # v = (x, y) at index (i, j); Rv = (−y, x) at index (n−1−j, i)
        n = grid2.n
        worst = 0.0
        for (i, j) in ((3, 7), (0, 10), (15, 2)):
            Av = A[i, j]
            Arv = A[n - 1 - j, i]
            worst = max(worst, float(np.abs(Arv - R @ Av @ R.T).max()))
        assert worst < 1e-10
