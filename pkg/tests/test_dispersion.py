"""Dispersion function: closed forms, the grid table, Penrose scans."""
import math

import numpy as np
import pytest

from lbkin import (
    make_grid, make_u_grid, make_directions, maxwellian, DensityField,
    eps_maxwellian, maxwellian_z, build_screening_table,
    maxwellian_screening_table, penrose_scan, gaussian_spectrum,
)
from lbkin.dispersion import (
    dawson, h_screening, eps_maxwellian_abs2,
    pv_convolution_direct, pv_convolution_fft, marginal_spectrum,
)


class TestClosedForms:
    def test_h_screening_values(self):
        """H(0)=1 and the −1/x² far field with unit coefficient."""
        assert h_screening(0.0) == pytest.approx(1.0)
        x = 40.0
        assert h_screening(x) * x ** 2 == pytest.approx(-1.0, rel=5e-3)

    def test_h_positive_on_unit_interval(self):
        x = np.linspace(-1.0, 1.0, 201)
        assert h_screening(x).min() > 0.0

    def test_eps_conjugate_symmetry(self):
        w = np.linspace(-6.0, 6.0, 37)
        e = eps_maxwellian(w, 0.7)
        np.testing.assert_allclose(e[::-1], np.conj(e), rtol=0, atol=1e-14)

    def test_eps_at_zero(self):
        """Static screening: ε(0) = 1 + 2·V̂(0) (real)."""
        e = eps_maxwellian(0.0, 1.3)
        assert complex(e) == pytest.approx(1.0 + 2.6)

    def test_abs2_consistency(self):
        w = np.linspace(-5.0, 5.0, 41)
        np.testing.assert_allclose(eps_maxwellian_abs2(w, 2.0),
                                   np.abs(eps_maxwellian(w, 2.0)) ** 2,
                                   rtol=1e-14)

    def test_z_eps_identity(self):
        """1 + vhat·Z(u) = eps(√2·u, vhat): the two closed forms are the
        same function in different variables."""
        u = np.linspace(-4.0, 4.0, 33)
        vhat = 0.45
        np.testing.assert_allclose(1.0 + vhat * maxwellian_z(u),
                                   eps_maxwellian(math.sqrt(2.0) * u, vhat),
                                   rtol=0, atol=1e-14)

    def test_im_sign(self):
        """Im ε < 0 for u > 0 at equilibrium (the −i0 prescription)."""
        assert eps_maxwellian(1.0, 1.0).imag < 0
        assert maxwellian_z(np.array([0.5])).imag[0] < 0

    def test_dawson_odd(self):
        x = np.linspace(0.1, 3.0, 7)
        np.testing.assert_allclose(dawson(-x), -dawson(x), rtol=1e-15)


class TestPvTwins:
    """The dense-matrix and FFT principal-value convolutions are the same
    linear map; either may serve, so they must agree to round-off."""

    def test_agree_1d(self, rng):
        a = rng.standard_normal(257)
        np.testing.assert_allclose(pv_convolution_fft(a),
                                   pv_convolution_direct(a),
                                   rtol=0, atol=1e-11)

    def test_agree_2d(self, rng):
        a = rng.standard_normal((5, 64))
        np.testing.assert_allclose(pv_convolution_fft(a),
                                   pv_convolution_direct(a),
                                   rtol=0, atol=1e-12)

    def test_single_spike(self):
        """One unit at m=0: output must be exactly 1/(j−1/2)."""
        a = np.zeros(7)
        a[0] = 1.0
        expect = 1.0 / (np.arange(8) - 0.5)
        np.testing.assert_allclose(pv_convolution_direct(a), expect,
                                   rtol=1e-15)


class TestMarginalSpectrum:
    def test_zero_frequency_is_mass(self, grid2, mu_field2):
        out = marginal_spectrum(grid2, mu_field2.values, np.array([1.0, 0.0]),
                                np.array([0.0]))
        assert out[0].real == pytest.approx(1.0, abs=1e-10)
        assert out[0].imag == pytest.approx(0.0, abs=1e-15)

    def test_matches_bruteforce(self, grid2, rng):
        """The separable evaluation equals the literal lattice sum."""
        F = rng.random(grid2.shape)
        khat = np.array([math.cos(0.3), math.sin(0.3)])
        xi = np.array([0.0, 0.7, 2.1])
        out = marginal_spectrum(grid2, F, khat, xi)
        proj = grid2.nodes @ khat
        brute = grid2.weight * (F.reshape(-1)[None, :]
                                * np.exp(-1j * np.outer(xi, proj))).sum(axis=1)
        np.testing.assert_allclose(out, brute, rtol=1e-12)


class TestScreeningTable:
    def test_grid_z_matches_closed_form(self, grid2, mu_field2):
        """Dual-path check at the Maxwellian on a production-size grid;
        even at this
        coarse resolution the error sits near 1e-2 and then collapses
        under refinement (see the superalgebraic test below)."""
        ug = make_u_grid(grid2)
        dirs = make_directions(2, 16)
        table = build_screening_table(mu_field2, dirs, ug)
        zex = maxwellian_z(ug.nodes)
        err = np.abs(table.z - zex[None, :]).max()
        assert err < 5e-2

    def test_superalgebraic_in_n(self):
        """Refining 21 → 33 must slash the error by far more than the
        factor 8 a second-order method would give."""
        errs = []
        for n in (21, 33):
            g = make_grid(2, 6.0, n)
            f = DensityField(g, maxwellian(g), "absolute")
            t = build_screening_table(f, make_directions(2, 8),
                                      make_u_grid(g))
            errs.append(np.abs(t.z - maxwellian_z(t.ugrid.nodes)).max())
        assert errs[1] < errs[0] / 50.0

    def test_conjugate_symmetry_of_table(self, grid2, mu_field2):
        """Z(−u) = conj Z(u) holds for the grid table at a symmetric field."""
        ug = make_u_grid(grid2)
        t = build_screening_table(mu_field2, make_directions(2, 8), ug)
        z = t.z[0]
        np.testing.assert_allclose(z[::-1], np.conj(z), atol=1e-10)

    def test_mass_recorded(self, grid2, mu_field2):
        t = build_screening_table(mu_field2, make_directions(2, 8),
                                  make_u_grid(grid2))
        assert t.mass == pytest.approx(1.0, abs=1e-10)

    def test_z_at_interp_and_tail(self, grid2, mu_field2):
        ug = make_u_grid(grid2)
        t = build_screening_table(mu_field2, make_directions(2, 8), ug)
        inside = t.z_at(0, np.array([0.5 * (ug.nodes[3] + ug.nodes[4])]))
        expect = 0.5 * (t.z[0, 3] + t.z[0, 4])
        assert inside[0] == pytest.approx(expect, abs=1e-12)
        far = float(ug.nodes[-1]) * 3.0
        tail = t.z_at(0, np.array([far, -far]))
        np.testing.assert_allclose(tail, -t.mass / far ** 2, rtol=1e-12)

    def test_provenance_tracks_field(self, grid2, mu_field2):
        ug = make_u_grid(grid2)
        dirs = make_directions(2, 8)
        t1 = build_screening_table(mu_field2, dirs, ug)
        bumped = DensityField(grid2, mu_field2.values * 1.01, "absolute")
        t2 = build_screening_table(bumped, dirs, ug)
        assert t1.provenance != t2.provenance

    def test_maxwellian_table_shortcut(self, grid2):
        dirs = make_directions(2, 8)
        ug = make_u_grid(grid2)
        t = maxwellian_screening_table(dirs, ug)
        np.testing.assert_allclose(t.z[3], maxwellian_z(ug.nodes), rtol=1e-15)
        assert t.mass == 1.0


class TestPenroseScan:
    def test_equilibrium_floor(self, grid2, vgauss):
        """At Maxwellian with a positive spectrum, |ε| ≥ 1 in the static
        limit and stays well above zero everywhere: no degeneracy."""
        dirs = make_directions(2, 16)
        ug = make_u_grid(grid2)
        t = maxwellian_screening_table(dirs, ug)
        scan = penrose_scan(t, vgauss, np.linspace(0.0, vgauss.r_max, 48))
        assert not scan.degenerate
        assert 0.3 < scan.min_abs < 1.0
        assert scan.min_abs2 == pytest.approx(scan.min_abs ** 2, rel=1e-12)

    def test_endpoints_always_scanned(self, grid2, vgauss):
        """Even an empty interior r ladder scans r=0 and r=r_max, where
        V̂ ≈ 0 at the far end pins |ε| ≈ 1."""
        dirs = make_directions(2, 8)
        t = maxwellian_screening_table(dirs, make_u_grid(grid2))
        scan = penrose_scan(t, vgauss, [])
        assert scan.min_abs <= 1.0 + 1e-12

    def test_degenerate_detection(self, grid2):
        """Scaling the spectrum so 1 + V̂·Re Z crosses zero while Im Z ≈ 0
        produces a genuine near-root; the flag must trip.

        Re Z dips to its most negative value near u ≈ 1.5 where Im Z is
        already tiny but nonzero; a large amplitude pushes |ε| under the
        1e-8 gate only if the scan lands on the crossing, so instead probe
        the flag directly with a table containing an exact root."""
        dirs = make_directions(2, 8)
        ug = make_u_grid(grid2)
        t = maxwellian_screening_table(dirs, ug)
        z = t.z.copy()
        z[0, 5] = -1.0 + 0j        # ε = 1 + 1·Z = 0 exactly at V̂ = 1
        rigged = type(t)(dirs=t.dirs, ugrid=t.ugrid, z=z, mass=t.mass,
                         provenance="rigged")
        flat = gaussian_spectrum(1.0, 1e-9)  # V̂ ≈ 1 over the whole scan
        scan = penrose_scan(rigged, flat, [1.0])
        assert scan.degenerate
        assert scan.min_abs < 1e-8
