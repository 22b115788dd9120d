"""Time integration: conservation, entropy, guards, reproducibility."""
import math

import numpy as np
import pytest

from lbkin import (
    make_grid, maxwellian, DensityField, SolverConfig, CollisionOperator,
    run, gaussian_spectrum, load_checkpoint, moments, boltzmann_entropy,
    SolverAbort,
)
from lbkin.harness import two_maxwellians


def bump_field(grid):
    vals = two_maxwellians(grid, [[-1.1, 0.0], [1.1, 0.0]], [1.25, 1.25],
                           [0.5, 0.5])
    return DensityField(grid, vals, "absolute")


@pytest.fixture(scope="module")
def gridm():
    return make_grid(2, 6.0, 21)


@pytest.fixture(scope="module")
def gridf():
    """Fine enough that the log form's positivity survives the far tail
    (at h = 0.6 the gradient noise there outruns values of order 1e-40)."""
    return make_grid(2, 6.0, 33)


@pytest.fixture(scope="module")
def vpot():
    return gaussian_spectrum(1.0, 1.0)


def drift(rows, col):
    vals = [r[col] for r in rows]
    scale = max(1.0, abs(vals[0]))
    return max(abs(v - vals[0]) for v in vals) / scale


class TestConservation:
    """Mass, momentum and energy are exact invariants of the pair-sum weak
    form; over a run they may move only by round-off accumulation."""

    def test_direct_form(self, gridm, vpot):
        cfg = SolverConfig(form="direct", screening="dynamic",
                           n_steps=20, dt=0.4, entropy_guard=False)
        res = run(gridm, vpot, bump_field(gridm), cfg)
        assert not res.aborted, res.abort_reason
        for col in ("mass", "mom_x", "mom_y", "energy"):
            assert drift(res.rows, col) < 1e-12, col

    def test_log_form(self, gridf, vpot):
        cfg = SolverConfig(form="log", screening="dynamic",
                           n_steps=12, dt=0.4, entropy_guard=False)
        res = run(gridf, vpot, bump_field(gridf), cfg)
        assert not res.aborted, res.abort_reason
        for col in ("mass", "mom_x", "mom_y", "energy"):
            assert drift(res.rows, col) < 1e-12, col

    def test_perturbative_formulation(self, gridm, vpot):
        """The linearized flow conserves the π₀ moments of f against the
        Maxwellian weight (the same telescoping weak form)."""
        from lbkin.harness import hermite_bump
        f0 = hermite_bump(gridm, eta=0.2, seed=5)
        cfg = SolverConfig(formulation="perturbative_f", form="direct",
                           screening="equilibrium", n_steps=12, dt=0.4,
                           entropy_guard=False)
        res = run(gridm, vpot,
                  DensityField(gridm, f0.reshape(gridm.shape),
                               "perturbation"), cfg)
        assert not res.aborted
        # moments of F = mu + sqrt(mu) f track the invariants
        for col in ("mass", "mom_x", "mom_y", "energy"):
            assert drift(res.rows, col) < 1e-12, col


class TestEntropyAndFixedPoint:
    def test_log_form_entropy_monotone(self, gridf, vpot):
        cfg = SolverConfig(form="log", screening="dynamic",
                           n_steps=12, dt=0.4, entropy_guard=False)
        res = run(gridf, vpot, bump_field(gridf), cfg)
        assert not res.aborted, res.abort_reason
        ent = [r["entropy"] for r in res.rows]
        diffs = np.diff(ent)
        assert diffs.max() <= 1e-12

    def test_log_form_maxwellian_fixed_point(self, gridm, vpot):
        """log μ is linear in v², so the centered gradient is exact and
        the antisymmetrized flux vanishes identically: μ is a fixed point
        of the log-form dynamics to round-off."""
        cfg = SolverConfig(form="log", screening="equilibrium",
                           n_steps=5, dt=0.4, entropy_guard=False)
        mu = maxwellian(gridm)
        res = run(gridm, vpot, DensityField(gridm, mu, "absolute"), cfg)
        assert np.abs(res.values - mu).max() < 1e-14

    def test_direct_form_residual_second_order(self, vpot):
        """The direct form sees μ as a fixed point only up to the O(h²)
        gradient error; the residual must shrink under refinement."""
        resid = []
        for n in (21, 31):
            g = make_grid(2, 6.0, n)
            cfg = SolverConfig(form="direct", screening="equilibrium")
            op = CollisionOperator(g, vpot, cfg)
            resid.append(float(np.abs(op.rate(maxwellian(g))).max()))
        assert resid[1] < resid[0]

    def test_relative_entropy_decays(self, gridf, vpot):
        cfg = SolverConfig(form="log", screening="dynamic",
                           n_steps=15, dt=0.4, entropy_guard=False)
        res = run(gridf, vpot, bump_field(gridf), cfg)
        rel = [r["rel_entropy"] for r in res.rows]
        assert rel[-1] < rel[0]
        assert all(r >= -1e-13 for r in rel)


class TestGuards:
    def test_negativity_guard(self, gridm, vpot):
        """A perturbation with large negative excursions drives F < 0
        within a step; the run must stop with a reason, not overflow."""
        mu = maxwellian(gridm)
        bad = mu.copy()
        bad[gridm.n // 2, gridm.n // 2] *= -0.5    # already dips negative
        cfg = SolverConfig(form="direct", screening="equilibrium",
                           n_steps=10, dt=5.0, entropy_guard=False)
        res = run(gridm, vpot, DensityField(gridm, bad, "absolute"), cfg)
        assert res.aborted
        assert "negativity" in res.abort_reason or "SolverAbort" \
            in res.abort_reason

    def test_log_form_rejects_nonpositive(self, gridm, vpot):
        mu = maxwellian(gridm)
        bad = mu.copy()
        bad[0, 0] = 0.0
        cfg = SolverConfig(form="log", screening="equilibrium", n_steps=2,
                           dt=0.1, entropy_guard=False)
        res = run(gridm, vpot, DensityField(gridm, bad, "absolute"), cfg)
        assert res.aborted
        assert "positive" in res.abort_reason

    def test_entropy_guard_halves_dt(self, gridm, vpot):
        """With a deliberately unstable dt the guard must halve its way
        back to stability (or abort), never silently march on."""
        cfg = SolverConfig(form="direct", screening="equilibrium",
                           n_steps=4, dt=80.0, entropy_guard=True,
                           max_halvings=12)
        res = run(gridm, vpot, bump_field(gridm), cfg)
        assert res.halvings > 0 or res.aborted

    def test_boundary_rejection(self, vpot):
        """Feeding a field with boundary support is a configuration error
        (the zero-flux weak form silently loses its invariants there)."""
        g = make_grid(2, 3.0, 15)    # domain far too small
        vals = two_maxwellians(g, [[-2.0, 0.0], [2.0, 0.0]], [1.0, 1.0],
                               [0.5, 0.5])
        cfg = SolverConfig(n_steps=1, dt=0.1)
        with pytest.raises(ValueError, match="boundary"):
            run(g, vpot, DensityField(g, vals, "absolute"), cfg)

    def test_formulation_kind_mismatch(self, gridm, vpot):
        mu = maxwellian(gridm)
        cfg = SolverConfig(formulation="perturbative_f", n_steps=1, dt=0.1)
        with pytest.raises(ValueError, match="perturbation"):
            run(gridm, vpot, DensityField(gridm, mu, "absolute"), cfg)


class TestSchemes:
    def test_picard_matches_rk4(self, gridm, vpot):
        """Semi-implicit Picard and explicit RK4 integrate the same flow;
        over a short horizon they agree to the scheme error, far tighter
        than the field scale."""
        base = dict(form="direct", screening="equilibrium", n_steps=8,
                    dt=0.2, entropy_guard=False)
        r1 = run(gridm, vpot, bump_field(gridm),
                 SolverConfig(scheme="rk4", **base))
        r2 = run(gridm, vpot, bump_field(gridm),
                 SolverConfig(scheme="picard", **base))
        assert not r1.aborted and not r2.aborted
        scale = np.abs(r1.values).max()
        assert np.abs(r1.values - r2.values).max() < 1e-3 * scale

    def test_scheme_aliases(self):
        assert SolverConfig(scheme="explicit_rk4").scheme == "rk4"
        assert SolverConfig(
            scheme="picard_semi_implicit").scheme == "picard"

    def test_stable_dt_scales_with_h2(self, vpot):
        dts = []
        for n in (15, 29):
            g = make_grid(2, 6.0, n)
            op = CollisionOperator(g, vpot, SolverConfig())
            dts.append(op.stable_dt())
        # h halves, dt must fall by about 4
        assert dts[1] < 0.35 * dts[0]

    def test_config_validation(self):
        with pytest.raises(ValueError, match="scheme"):
            SolverConfig(scheme="leapfrog").validate()
        with pytest.raises(ValueError, match="form"):
            SolverConfig(form="weak").validate()
        with pytest.raises(ValueError, match="dt"):
            SolverConfig(dt=-0.1).validate()
        with pytest.raises(ValueError, match="Picard"):
            SolverConfig(scheme="picard", form="log").validate()
        with pytest.raises(ValueError, match="threads"):
            SolverConfig(threads=0).validate()


class TestReproducibilityAndIO:
    def test_bitwise_determinism(self, gridm, vpot):
        cfg = SolverConfig(form="direct", screening="dynamic", n_steps=6,
                           dt=0.4, entropy_guard=False)
        r1 = run(gridm, vpot, bump_field(gridm), cfg)
        r2 = run(gridm, vpot, bump_field(gridm), cfg)
        assert np.array_equal(r1.values, r2.values)

    def test_thread_count_invariance(self, gridm, vpot):
        """Slab-decomposed pair sums are reassociated differently per
        thread count; the contract bounds the effect at 1e-13 relative."""
        rows = {}
        for threads in (1, 3):
            cfg = SolverConfig(form="direct", screening="dynamic",
                               n_steps=6, dt=0.4, entropy_guard=False,
                               threads=threads)
            rows[threads] = run(gridm, vpot, bump_field(gridm), cfg).values
        scale = np.abs(rows[1]).max()
        assert np.abs(rows[1] - rows[3]).max() < 1e-13 * scale

    def test_csv_manifest_checkpoint_resume(self, tmp_path, gridm, vpot):
        """A run interrupted at its midpoint checkpoint and resumed must
        land where the uninterrupted run lands (same stepper, same dt)."""
        cfg = SolverConfig(form="direct", screening="dynamic", n_steps=8,
                           dt=0.4, entropy_guard=False, checkpoint_every=4)
        full = run(gridm, vpot, bump_field(gridm), cfg,
                   out_dir=str(tmp_path), label="full")
        assert (tmp_path / "full.csv").exists()
        assert (tmp_path / "full.json").exists()

        field, side = load_checkpoint(tmp_path / "full_step000004")
        assert side["step"] == 4
        cfg2 = SolverConfig(form="direct", screening="dynamic", n_steps=4,
                            dt=0.4, entropy_guard=False)
        tail = run(gridm, vpot, field, cfg2, t0=side["t"])
        assert np.abs(tail.values - full.values).max() \
            < 1e-12 * np.abs(full.values).max()

    def test_csv_columns_match_manifest(self, tmp_path, gridm, vpot):
        import json
        cfg = SolverConfig(n_steps=2, dt=0.3, entropy_guard=False)
        run(gridm, vpot, bump_field(gridm), cfg, out_dir=str(tmp_path),
            label="cols")
        header = (tmp_path / "cols.csv").read_text().splitlines()[0]
        manifest = json.loads((tmp_path / "cols.json").read_text())
        assert header.split(",") == manifest["columns"]
        assert manifest["config_sha256"]

    def test_snapshots(self, gridm, vpot):
        cfg = SolverConfig(n_steps=4, dt=0.3, entropy_guard=False)
        res = run(gridm, vpot, bump_field(gridm), cfg, keep_snapshots=True)
        assert len(res.snapshots) == len(res.rows)
        t, vals = res.snapshots[-1]
        assert np.array_equal(vals, res.values)


class TestLandauMode:
    def test_landau_flag_uses_unscreened_weights(self, gridm, vpot):
        """landau=True must give different dynamics from the screened
        operator (V̂(0) > 0 means screening genuinely suppresses the
        rate) while keeping the same invariants."""
        base = dict(form="direct", n_steps=6, dt=0.3, entropy_guard=False)
        rs = run(gridm, vpot, bump_field(gridm),
                 SolverConfig(screening="equilibrium", **base))
        rl = run(gridm, vpot, bump_field(gridm),
                 SolverConfig(landau=True, **base))
        assert not rs.aborted and not rl.aborted
        for col in ("mass", "energy"):
            assert drift(rl.rows, col) < 1e-12
        assert np.abs(rs.values - rl.values).max() \
            > 1e-6 * np.abs(rs.values).max()

    def test_screened_rate_below_landau(self, gridm, vpot):
        """At equilibrium screening the entropy dissipation of a bump is
        weaker than in the Landau mode: |ε| ≥ ε_min > 1 near u = 0 where
        the marginal mass sits."""
        f = bump_field(gridm)
        cfg_s = SolverConfig(screening="equilibrium")
        cfg_l = SolverConfig(landau=True)
        rate_s = CollisionOperator(gridm, vpot, cfg_s).rate(f.values)
        rate_l = CollisionOperator(gridm, vpot, cfg_l).rate(f.values)
        assert np.abs(rate_s).max() < np.abs(rate_l).max()
