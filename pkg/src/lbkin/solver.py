"""Time integration of the collision dynamics.

Two formulations share one driver:

  absolute_F       ∂t F = ∇·Q(F), the full nonlinear collision rate in
                   weak (flux-divergence) form;
  perturbative_f   the same dynamics written in the perturbation variable
                   f with F = μ + √μ f: the stepper reconstructs F,
                   evaluates the full rate, and maps back, so absolute and
                   perturbative runs from matching data agree to round-off.

The operator linearized at the discrete Maxwellian is exposed separately
(`CollisionOperator.linearized_rate`) for spectral probes; it is not a
time-integration mode.

The nonlinear flux can be assembled from the gradient of F (direct form)
or of log F (log form); the log form makes the discrete entropy
nonincreasing by construction and requires a positive field.

Schemes: classical RK4 with a stability step from the equilibrium
coefficient field (dt = c_stab h²/max λ₂), or a semi-implicit Picard step
(coefficients 𝔸 = Σ B F_j and 𝔹 = Σ B (∇F)_j frozen per inner iteration,
implicit Euler solved matrix-free with BiCGStab) that tolerates much
larger steps.

Runtime guards, never silent: an entropy-increase guard that halves dt a
bounded number of times before aborting, a negativity guard on F, and the
dispersion-degeneracy guard raised by the screening refresh.  A guarded
failure ends the run with an `aborted` result carrying the reason.
"""

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field as _dcfield, asdict

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab

from . import _pairsum, diagnostics
from .dispersion import build_screening_table
from .fieldio import save_checkpoint
from .grid import (DensityField, central_gradient, divergence,
                   make_directions, make_u_grid, maxwellian)
from .kernel import (DispersionDegeneracyError, RadialWeightTable,
                     equilibrium_weight_tables, landau_weight_tables,
                     screening_weight_tables)

__all__ = [
    "SolverAbort",
    "SolverConfig",
    "CollisionOperator",
    "RunResult",
    "run",
]


class SolverAbort(RuntimeError):
    """A runtime guard stopped the integration."""


_SCHEMES = ("rk4", "picard")
_SCHEME_ALIASES = {"explicit_rk4": "rk4", "picard_semi_implicit": "picard"}
_FORMS = ("direct", "log")
_FORMULATIONS = ("absolute_F", "perturbative_f")
_SCREENINGS = ("dynamic", "equilibrium")

# Fields must be negligible on the outermost node shell for the zero-flux
# boundary to be consistent; larger values are a configuration error.
BOUNDARY_TOL = 1e-12


@dataclass
class SolverConfig:
    """Integration controls; defaults give the explicit nonlinear solver
    with per-step screening refresh."""

    scheme: str = "rk4"
    form: str = "direct"
    formulation: str = "absolute_F"
    screening: str = "dynamic"
    landau: bool = False
    t_final: float = 1.0
    n_steps: int | None = None
    dt: float | None = None
    c_stab: float = 0.5
    eps_refresh_every: int = 1
    n_dirs: int = 64
    n_polar: int = 16
    n_azimuth: int = 32
    circle_nodes: int = 32
    entropy_guard: bool = True
    entropy_tol: float = 1e-10
    max_halvings: int = 8
    picard_inner: int = 2
    bicg_tol: float = 1e-10
    threads: int = 1
    out_every: int = 1
    checkpoint_every: int = 0
    degeneracy_floor: float = 1e-8

    def __post_init__(self):
        self.scheme = _SCHEME_ALIASES.get(self.scheme, self.scheme)

    def validate(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}")
        if self.form not in _FORMS:
            raise ValueError(f"form must be one of {_FORMS}")
        if self.formulation not in _FORMULATIONS:
            raise ValueError(f"formulation must be one of {_FORMULATIONS}")
        if self.screening not in _SCREENINGS:
            raise ValueError(f"screening must be one of {_SCREENINGS}")
        if self.t_final <= 0.0 and self.n_steps is None:
            raise ValueError("t_final must be positive (or give n_steps)")
        if self.dt is not None and self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.n_steps is not None and self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.eps_refresh_every < 1:
            raise ValueError("eps_refresh_every must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.scheme == "picard" and self.form == "log":
            raise ValueError("the Picard scheme is defined for the direct form")
        if self.scheme == "picard" and self.formulation == "perturbative_f":
            raise ValueError("the Picard scheme integrates the absolute field")
        if self.degeneracy_floor <= 0.0:
            raise ValueError("degeneracy_floor must be positive")
        return self


class CollisionOperator:
    """Discrete collision operator bound to a grid and a potential.

    Precomputes the equilibrium radial-weight bundle, the equilibrium
    coefficient field (for the stability step and dissipation norms), and,
    for dynamic screening, the direction set and u-grid used to rebuild
    the screening table from the evolving field.
    """

    def __init__(self, grid, V, config):
        self.grid = grid
        self.V = V
        self.cfg = config.validate()
        d = grid.d

        if config.landau:
            self.wt_static = landau_weight_tables(grid, V,
                                                  config.circle_nodes)
        else:
            self.wt_static = equilibrium_weight_tables(
                grid, V, circle_nodes=config.circle_nodes)
        self.penrose_min = self.wt_static.penrose_min

        mu = maxwellian(grid).reshape(-1)
        self.mu = mu
        self.sqmu = np.sqrt(mu)
        Apk, _ = _pairsum.moment_fields(
            grid.nodes, mu, np.zeros_like(grid.nodes), self.wt_static,
            nslabs=config.threads)
        self.A_eq = grid.weight * _pairsum.unpack_symmetric(Apk, d)
        speed2 = np.sum(grid.nodes ** 2, axis=1)
        lam1 = np.einsum("ia,iab,ib->i", grid.nodes, self.A_eq, grid.nodes)
        lam1 = np.divide(lam1, speed2, out=np.einsum("iaa->i", self.A_eq) / d,
                         where=speed2 > 0)
        self.lambda2_max = float(
            ((np.einsum("iaa->i", self.A_eq) - lam1) / (d - 1)).max())

        self._wt_dynamic = None
        if self.dynamic_screening:
            if d == 2:
                self.dirs = make_directions(d, n_dirs=config.n_dirs)
            else:
                self.dirs = make_directions(d, n_polar=config.n_polar,
                                            n_azimuth=config.n_azimuth)
            self.ugrid = make_u_grid(grid)
            self.rwt = RadialWeightTable(V, d)

    @property
    def dynamic_screening(self):
        return self.cfg.screening == "dynamic" and not self.cfg.landau

    def absolute_values(self, values):
        """The physical field F for either formulation (grid-shaped)."""
        if self.cfg.formulation == "perturbative_f":
            return (self.mu + self.sqmu * values.reshape(-1)).reshape(
                self.grid.shape)
        return values

    def refresh_screening(self, values):
        """Rebuild the directional weight table from the current field."""
        field = DensityField(grid=self.grid, values=self.absolute_values(values))
        table = build_screening_table(field, self.dirs, self.ugrid)
        self._wt_dynamic = screening_weight_tables(
            table, self.V, self.rwt, self.cfg.circle_nodes,
            floor=self.cfg.degeneracy_floor)
        self.penrose_min = self._wt_dynamic.penrose_min

    @property
    def weight_tables(self):
        if self.dynamic_screening and self._wt_dynamic is not None:
            return self._wt_dynamic
        return self.wt_static

    def collision_rate(self, values):
        """∇·Q(F) for the absolute formulation, on grid-shaped values."""
        grid = self.grid
        F = values.reshape(-1)
        if self.cfg.form == "log":
            if F.min() <= 0.0:
                raise SolverAbort(
                    "log form requires a strictly positive field "
                    f"(min F = {F.min():.3e})")
            G = central_gradient(grid, np.log(values))
        else:
            G = central_gradient(grid, values)
        G = np.moveaxis(G, 0, -1).reshape(-1, grid.d)
        Q = _pairsum.pair_flux(grid.nodes, F, G, self.weight_tables,
                               nslabs=self.cfg.threads,
                               log_form=(self.cfg.form == "log"))
        flux = np.moveaxis((grid.weight * Q).reshape(grid.shape + (grid.d,)),
                           -1, 0)
        return divergence(grid, flux)

    def linearized_rate(self, values):
        """L f at the discrete equilibrium, on grid-shaped perturbation
        values: L f = ∇·Φ − v·Φ with Φ = A η − √μ G, η = ∇f + v f."""
        grid = self.grid
        f = values.reshape(-1)
        Df = central_gradient(grid, values)
        Df = np.moveaxis(Df, 0, -1).reshape(-1, grid.d)
        eta = Df + grid.nodes * f[:, None]
        Apk, G = _pairsum.moment_fields(
            grid.nodes, self.mu, self.sqmu[:, None] * eta, self.wt_static,
            nslabs=self.cfg.threads)
        A = grid.weight * _pairsum.unpack_symmetric(Apk, grid.d)
        G = grid.weight * G
        phi = np.einsum("iab,ib->ia", A, eta) - self.sqmu[:, None] * G
        phi_grid = np.moveaxis(phi.reshape(grid.shape + (grid.d,)), -1, 0)
        return (divergence(grid, phi_grid)
                - np.einsum("ia,ia->i", grid.nodes, phi).reshape(grid.shape))

    def rate(self, values):
        if self.cfg.formulation == "perturbative_f":
            rate_abs = self.collision_rate(self.absolute_values(values))
            return rate_abs / self.sqmu.reshape(self.grid.shape)
        return self.collision_rate(values)

    def stable_dt(self):
        h = self.grid.h
        return self.cfg.c_stab * h * h / self.lambda2_max


def _rk4_step(op, values, dt):
    k1 = op.rate(values)
    k2 = op.rate(values + (0.5 * dt) * k1)
    k3 = op.rate(values + (0.5 * dt) * k2)
    k4 = op.rate(values + dt * k3)
    return values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _bicgstab(linop, b, x0, rtol):
    try:
        x, info = bicgstab(linop, b, x0=x0, rtol=rtol, atol=0.0)
    except TypeError:  # older scipy spells the relative tolerance "tol"
        x, info = bicgstab(linop, b, x0=x0, tol=rtol, atol=0.0)
    return x, info


def _picard_step(op, values, dt):
    """Semi-implicit step: freeze 𝔸, 𝔹 at the current iterate, take an
    implicit Euler step, refresh the coefficients picard_inner times."""
    grid = op.grid
    cfg = op.cfg
    wt = op.weight_tables
    shape = grid.shape
    n = values.size
    Fn = values.reshape(-1).copy()
    Fk = Fn.copy()
    for _ in range(cfg.picard_inner):
        DFk = central_gradient(grid, Fk.reshape(shape))
        DFk = np.moveaxis(DFk, 0, -1).reshape(-1, grid.d)
        Apk, Bv = _pairsum.moment_fields(grid.nodes, Fk, DFk, wt,
                                         nslabs=cfg.threads)
        A = grid.weight * _pairsum.unpack_symmetric(Apk, grid.d)
        Bv = grid.weight * Bv

        def matvec(g):
            Dg = central_gradient(grid, g.reshape(shape))
            Dg = np.moveaxis(Dg, 0, -1).reshape(-1, grid.d)
            flux = np.einsum("iab,ib->ia", A, Dg) - g[:, None] * Bv
            flux = np.moveaxis(flux.reshape(shape + (grid.d,)), -1, 0)
            rate = divergence(grid, flux).reshape(-1)
            return g - dt * rate

        linop = LinearOperator((n, n), matvec=matvec)
        x, info = _bicgstab(linop, Fn, Fk, cfg.bicg_tol)
        if info != 0:
            raise SolverAbort(f"BiCGStab failed to converge (info={info})")
        Fk = x
    return Fk.reshape(shape)


@dataclass
class RunResult:
    """Everything a run produced; `rows` mirrors the CSV."""

    grid: object
    config: SolverConfig
    dt: float
    n_steps: int
    times: list = _dcfield(default_factory=list)
    rows: list = _dcfield(default_factory=list)
    values: np.ndarray | None = None
    snapshots: list = _dcfield(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""
    halvings: int = 0
    csv_path: str | None = None
    manifest_path: str | None = None
    wall_seconds: float = 0.0

    @property
    def final_field(self):
        kind = ("perturbation"
                if self.config.formulation == "perturbative_f"
                else "absolute")
        return DensityField(grid=self.grid, values=self.values, kind=kind)


def _csv_columns(d):
    cols = ["t", "mass"] + [f"mom_{ax}" for ax in "xyz"[:d]]
    cols += ["energy", "entropy", "rel_entropy", "entropy_dissipation",
             "l2_f", "dissipation_norm", "min_F", "penrose_min"]
    return cols


def _diag_row(op, values, t, mu_ref, sqmu_ref, nslabs):
    grid = op.grid
    if op.cfg.formulation == "perturbative_f":
        Fabs = mu_ref + sqmu_ref * values.reshape(-1)
        f = values.reshape(-1)
    else:
        Fabs = values.reshape(-1)
        f = (Fabs - mu_ref) / sqmu_ref
    field = DensityField(grid=grid, values=Fabs.reshape(grid.shape))
    mass, mom, energy = diagnostics.moments(field)
    ent = diagnostics.boltzmann_entropy(field)
    rel = diagnostics.relative_entropy(
        field, DensityField(grid=grid, values=mu_ref.reshape(grid.shape)))
    dis = diagnostics.entropy_dissipation(field, nslabs=nslabs)
    l2f = math.sqrt(grid.weight * float(f @ f))
    dnorm = diagnostics.dissipation_norm(grid, op.A_eq, f)
    row = {"t": t, "mass": mass}
    for ax, m in zip("xyz", mom):
        row[f"mom_{ax}"] = float(m)
    row.update({
        "energy": energy,
        "entropy": ent.value,
        "rel_entropy": rel.value,
        "entropy_dissipation": dis,
        "l2_f": l2f,
        "dissipation_norm": dnorm,
        "min_F": float(Fabs.min()),
        "penrose_min": op.penrose_min,
    })
    return row


def _boundary_check(grid, values_abs):
    """Zero-flux consistency: the field must be negligible on the outermost
    node shell.  Violation is a configuration error (domain too small)."""
    vals = np.asarray(values_abs).reshape(grid.shape)
    peak = float(np.abs(vals).max())
    if peak == 0.0:
        return
    worst = 0.0
    for ax in range(grid.d):
        for edge in (0, -1):
            sl = [slice(None)] * grid.d
            sl[ax] = edge
            worst = max(worst, float(np.abs(vals[tuple(sl)]).max()))
    if worst > BOUNDARY_TOL * peak:
        raise ValueError(
            f"initial field is {worst / peak:.3e} of its peak on the domain "
            f"boundary (limit {BOUNDARY_TOL:g}); enlarge the velocity extent")


def _config_digest(grid, V, config):
    payload = {
        "config": asdict(config),
        "grid": {"d": grid.d, "n": grid.n, "extent": grid.extent},
        "potential": {"family": V.family, "r_max": V.r_max,
                      "params": dict(sorted(V.params.items()))},
    }
    blob = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest(), payload


def run(grid, V, initial, config, out_dir=None, label="run",
        keep_snapshots=False, snapshot_times=None, t0=0.0):
    """Integrate the dynamics from `initial` and record diagnostics.

    Writes <label>.csv and <label>.json (the manifest) into out_dir when
    given, plus periodic checkpoints if config.checkpoint_every is set.
    Returns a RunResult; guarded failures return with aborted=True rather
    than raising, so partial output is preserved.

    keep_snapshots stores a copy of the state at every output step (or at
    the times listed in snapshot_times) for in-memory comparisons.  t0
    offsets the clock, for runs resumed from a checkpoint: integration
    covers [t0, t_final].
    """
    t_start = time.perf_counter()
    op = CollisionOperator(grid, V, config)
    cfg = op.cfg

    if cfg.formulation == "perturbative_f":
        if initial.kind != "perturbation":
            raise ValueError("perturbative_f expects a perturbation field")
    elif initial.kind != "absolute":
        raise ValueError("absolute_F expects an absolute field")
    values = np.array(initial.values, dtype=float, copy=True)
    if t0 == 0.0:
        # the boundary contract vets the *datum*; a resumed field is the
        # solver's own output and re-enters on trust (it carries whatever
        # boundary mass the zero-flux form itself produced)
        _boundary_check(grid, op.absolute_values(values))

    span = cfg.t_final - t0
    if span <= 0.0 and cfg.n_steps is None:
        raise ValueError(f"nothing to integrate: t_final = {cfg.t_final} "
                         f"with start time {t0}")
    dt = cfg.dt if cfg.dt is not None else op.stable_dt()
    if cfg.n_steps is not None:
        n_steps = cfg.n_steps
    else:
        n_steps = max(1, math.ceil(span / dt - 1e-12))
        dt = span / n_steps

    mu_ref = maxwellian(grid).reshape(-1)
    if cfg.formulation == "absolute_F":
        mu_ref = diagnostics.matched_maxwellian(initial).values.reshape(-1)
    sqmu_ref = np.sqrt(mu_ref)

    result = RunResult(grid=grid, config=cfg, dt=dt, n_steps=n_steps)
    csv_file = None
    columns = _csv_columns(grid.d)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.csv_path = f"{out_dir}/{label}.csv"
        csv_file = open(result.csv_path, "w")
        csv_file.write(",".join(columns) + "\n")

    snap_times = None
    if snapshot_times is not None:
        snap_times = sorted(float(s) for s in snapshot_times)

    def emit(step, t, vals):
        row = _diag_row(op, vals, t, mu_ref, sqmu_ref, cfg.threads)
        result.times.append(t)
        result.rows.append(row)
        if csv_file is not None:
            csv_file.write(",".join("%.17g" % row[c] for c in columns) + "\n")
            csv_file.flush()
        if keep_snapshots and snap_times is None:
            result.snapshots.append((t, vals.copy()))

    digest, payload = _config_digest(grid, V, config)

    def checkpoint(step, t, vals):
        if out_dir is None or cfg.checkpoint_every <= 0:
            return
        if step % cfg.checkpoint_every != 0 and step != n_steps:
            return
        kind = ("perturbation" if cfg.formulation == "perturbative_f"
                else "absolute")
        field = DensityField(grid=grid, values=vals, kind=kind)
        save_checkpoint(f"{out_dir}/{label}_step{step:06d}", field, t, step,
                        meta={"config_sha256": digest, "label": label})

    stepper = _picard_step if cfg.scheme == "picard" else _rk4_step
    t = t0
    next_snap = 0
    steps_done = 0
    try:
        if op.dynamic_screening:
            op.refresh_screening(values)
        emit(0, t0, values)
        H_prev = None
        if cfg.entropy_guard:
            H_prev = diagnostics.boltzmann_entropy(
                DensityField(grid=grid, values=op.absolute_values(values))).value
        for step in range(1, n_steps + 1):
            if op.dynamic_screening and (step - 1) % cfg.eps_refresh_every == 0:
                op.refresh_screening(values)
            attempt = 0
            while True:
                new_values = stepper(op, values, dt)
                if not cfg.entropy_guard:
                    break
                H_new = diagnostics.boltzmann_entropy(
                    DensityField(grid=grid,
                                 values=op.absolute_values(new_values))).value
                if H_new - H_prev <= cfg.entropy_tol * max(1.0, abs(H_prev)):
                    H_prev = H_new
                    break
                attempt += 1
                result.halvings += 1
                if attempt > cfg.max_halvings:
                    raise SolverAbort(
                        f"entropy increased by {H_new - H_prev:.3e} at "
                        f"t={t:.6g} despite {cfg.max_halvings} dt halvings")
                dt *= 0.5
            values = new_values
            t = t + dt
            vabs = op.absolute_values(values)
            mn = float(vabs.min())
            mx = float(vabs.max())
            if mn < -0.01 * mx:
                raise SolverAbort(
                    f"negativity guard: min F = {mn:.3e} vs max F = "
                    f"{mx:.3e} at t={t:.6g}")
            steps_done = step
            if step % cfg.out_every == 0 or step == n_steps:
                emit(step, t, values)
            if snap_times is not None and next_snap < len(snap_times) \
                    and t >= snap_times[next_snap] - 1e-12:
                result.snapshots.append((t, values.copy()))
                next_snap += 1
            checkpoint(step, t, values)
    except (SolverAbort, DispersionDegeneracyError) as exc:
        result.aborted = True
        result.abort_reason = f"{type(exc).__name__}: {exc}"
    finally:
        if csv_file is not None:
            csv_file.close()

    result.values = values
    result.wall_seconds = time.perf_counter() - t_start
    if out_dir is not None:
        manifest = {
            "label": label,
            "columns": columns,
            "config_sha256": digest,
            "dt": result.dt,
            "n_steps": n_steps,
            "steps_completed": steps_done,
            "t0": t0,
            "aborted": result.aborted,
            "abort_reason": result.abort_reason,
            "halvings": result.halvings,
            "penrose_min": op.penrose_min,
            "wall_seconds": result.wall_seconds,
            **payload,
        }
        result.manifest_path = f"{out_dir}/{label}.json"
        with open(result.manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=repr)
    return result
