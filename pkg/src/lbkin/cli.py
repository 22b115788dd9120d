"""Command-line entry point.

    lbkin run            --config cfg.toml [--resume ckpt] [--out-dir D]
    lbkin relaxation     --config cfg.toml       decay study (also the
                                                 weighted-norm variant)
    lbkin landau-limit   --config cfg.toml       rescaling sweep
    lbkin convergence    --config cfg.toml       observed-order ladder
    lbkin dispersion-scan --config cfg.toml      ε tables to CSV
    lbkin kernel-dump    --config cfg.toml       kernel tensors on sample
                                                 pairs to JSON
    lbkin field PATH                             inspect a saved .lbkf field

Exit codes: 0 success, 2 configuration error (bad or missing config,
invalid values), 3 numerical abort (screening degeneracy, guard
failure), 4 I/O error.  `--threads N` overrides the config's slab
count; `--verbose` echoes progress to stderr.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import diagnostics
from .fieldio import load_checkpoint, load_field
from .grid import make_grid, make_directions, make_u_grid
from .dispersion import maxwellian_screening_table
from .harness import load_experiment, run_experiment
from .kernel import (DispersionDegeneracyError, assemble_kernel,
                     landau_kernel)
from .potential import landau_constant
from .solver import SolverAbort, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_EXPERIMENT_COMMANDS = {
    "relaxation": ("relaxation", "weighted_decay"),
    "landau-limit": ("landau_limit",),
    "convergence": ("convergence_study",),
    "dispersion-scan": ("dispersion_scan",),
}


def _parser():
    p = argparse.ArgumentParser(prog="lbkin",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True,
                            help="TOML experiment description")
        sp.add_argument("--out-dir", default=None,
                        help="output directory (overrides the config)")
        sp.add_argument("--threads", type=int, default=None,
                        help="pair-sum slab count (overrides the config)")
        sp.add_argument("--verbose", action="store_true")

    sp = sub.add_parser("run", help="single solver run")
    common(sp)
    sp.add_argument("--resume", default=None, metavar="CKPT",
                    help="checkpoint base path (without .lbkf) to restart "
                         "from; the config still supplies the solver setup")

    for name in _EXPERIMENT_COMMANDS:
        common(sub.add_parser(name))

    sp = sub.add_parser("kernel-dump",
                        help="kernel tensors on sample pairs to JSON")
    common(sp)
    sp.add_argument("--pairs", type=int, default=8)

    sp = sub.add_parser("field", help="inspect a saved .lbkf field")
    sp.add_argument("path")
    sp.add_argument("--verbose", action="store_true")
    return p


def _load(args, kinds):
    spec = load_experiment(args.config, out_dir=args.out_dir,
                           threads=args.threads)
    if spec.kind not in kinds:
        raise ValueError(
            f"config kind {spec.kind!r} does not match this subcommand "
            f"(expected one of {list(kinds)})")
    return spec


def _cmd_run(args):
    spec = _load(args, ("run",))
    if args.resume is None:
        report = run_experiment(spec)
    else:
        try:
            field, side = load_checkpoint(args.resume)
        except OSError as exc:
            raise _IOFailure(str(exc)) from exc
        grid = make_grid(spec.d, spec.extent, spec.n)
        if field.grid.shape != grid.shape:
            raise ValueError("checkpoint grid does not match the config")
        if args.verbose and side.get("config_sha256"):
            print(f"resuming from step {side['step']} at t={side['t']:.6g}",
                  file=sys.stderr)
        res = run(grid, spec.spectrum(), field, spec.solver,
                  out_dir=spec.out_dir, label=f"{spec.label}_resumed",
                  t0=float(side["t"]))
        report = {"aborted": res.aborted, "abort_reason": res.abort_reason,
                  "csv": res.csv_path, "resumed_from": args.resume,
                  "t0": side["t"]}
    if report.get("aborted"):
        print(f"run aborted: {report['abort_reason']}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.verbose:
        print(json.dumps({k: v for k, v in report.items()
                          if not isinstance(v, (list, dict))}, indent=2),
              file=sys.stderr)
    return EXIT_OK


def _cmd_experiment(args, kinds):
    spec = _load(args, kinds)
    report = run_experiment(spec)
    poisoned = report.get("poisoned") or report.get("aborted")
    if poisoned:
        print("experiment completed with aborted runs; report retains "
              "partial data", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.verbose:
        print(f"report written under {spec.out_dir}", file=sys.stderr)
    return EXIT_OK


def _cmd_kernel_dump(args):
    spec = _load(args, ("run",) + sum(_EXPERIMENT_COMMANDS.values(), ()))
    V = spec.spectrum()
    grid = make_grid(spec.d, spec.extent, spec.n)
    dirs = make_directions(spec.d, spec.solver.n_dirs, spec.solver.n_polar,
                           spec.solver.n_azimuth)
    table = maxwellian_screening_table(dirs, make_u_grid(grid))
    L = landau_constant(V, spec.d)
    rng = np.random.default_rng(spec.seed)
    out = {"d": spec.d, "landau_constant": L, "pairs": []}
    for _ in range(args.pairs):
        v = rng.uniform(-2.0, 2.0, size=spec.d)
        vs = rng.uniform(-2.0, 2.0, size=spec.d)
        if np.linalg.norm(v - vs) < 0.2:
            vs = vs + 0.5
        B = assemble_kernel(v, vs, table, V,
                            circle_nodes=spec.solver.circle_nodes)
        BL = landau_kernel(v - vs, L)
        eig = np.linalg.eigvalsh(B.entries)
        out["pairs"].append({
            "v": list(v), "vstar": list(vs),
            "kernel": [list(row) for row in B.entries],
            "eigenvalues": list(eig),
            "landau_reference": [list(row) for row in BL.entries],
            "max_rel_landau_diff": float(
                np.abs(B.entries - BL.entries).max()
                / max(np.abs(BL.entries).max(), 1e-300)),
        })
    os.makedirs(spec.out_dir, exist_ok=True)
    path = os.path.join(spec.out_dir, f"{spec.label}_kernels.json")
    try:
        with open(path, "w") as fh:
            json.dump(out, fh, indent=2)
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc
    print(path)
    return EXIT_OK


def _cmd_field(args):
    try:
        field = load_field(args.path)
    except OSError as exc:
        raise _IOFailure(str(exc)) from exc
    grid = field.grid
    mass, mom, energy = diagnostics.moments(field)
    ent = diagnostics.boltzmann_entropy(field)
    info = {
        "path": args.path,
        "d": grid.d, "n": grid.n, "extent": grid.extent, "h": grid.h,
        "kind": field.kind,
        "mass": mass, "momentum": list(mom), "energy": energy,
        "entropy": ent.value, "min": float(field.values.min()),
        "max": float(field.values.max()),
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


class _IOFailure(Exception):
    pass


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command in _EXPERIMENT_COMMANDS:
            return _cmd_experiment(args, _EXPERIMENT_COMMANDS[args.command])
        if args.command == "kernel-dump":
            return _cmd_kernel_dump(args)
        if args.command == "field":
            return _cmd_field(args)
        raise AssertionError(f"unhandled command {args.command}")
    except _IOFailure as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as exc:
        # a missing config or field path is a configuration error
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverAbort, DispersionDegeneracyError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
