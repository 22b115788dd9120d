"""Command-line interface: exit codes, subcommands, file outputs.

Everything runs in-process through cli.main(argv) so the tests stay
fast and the exit paths are exercised without a subprocess.  The
contract: 0 success, 2 configuration error, 3 numerical abort, 4 I/O
error.
"""
import json
import os

import numpy as np

from lbkin import cli, make_grid, maxwellian, save_field
from lbkin.fieldio import DensityField


def cfg(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


RUN_CFG = """
kind = "run"
label = "demo"

[grid]
d = 2
extent = 6.0
n = 15

[solver]
n_steps = 2
dt = 0.05
screening = "equilibrium"
entropy_guard = false
out_every = 1

[initial]
type = "two_maxwellians"
"""

SCAN_CFG = """
kind = "dispersion_scan"
label = "scan"

[grid]
d = 2
extent = 6.0
n = 15

[solver]
n_steps = 1
dt = 0.1

[dispersion_scan]
u_min = -3.0
u_max = 3.0
nu = 21
r_values = [0.5, 1.0]
"""


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        rc = cli.main(["run", "--config", str(tmp_path / "nope.toml")])
        assert rc == 2

    def test_invalid_value(self, tmp_path):
        bad = RUN_CFG.replace("dt = 0.05", "dt = -1.0")
        rc = cli.main(["run", "--config", cfg(tmp_path, bad)])
        assert rc == 2

    def test_kind_mismatch(self, tmp_path):
        """A run config handed to the relaxation subcommand is refused."""
        rc = cli.main(["relaxation", "--config", cfg(tmp_path, RUN_CFG)])
        assert rc == 2

    def test_boundary_is_config_error(self, tmp_path):
        """Bumps parked against the box edge violate the boundary
        contract; the fix is a bigger extent, so this is exit 2."""
        bad = RUN_CFG.replace('extent = 6.0', 'extent = 3.0')
        bad += 'means = [[2.0, 0.0], [-2.0, 0.0]]\n'
        rc = cli.main(["run", "--config", cfg(tmp_path, bad),
                       "--out-dir", str(tmp_path / "out")])
        assert rc == 2

    def test_guard_abort(self, tmp_path, capsys):
        """A per-step entropy decrease no step can deliver exhausts the
        dt halvings; the run ends as a numerical abort, exit 3."""
        bad = RUN_CFG.replace("n_steps = 2", "n_steps = 1").replace(
            "entropy_guard = false",
            "entropy_guard = true\nentropy_tol = -10.0\nmax_halvings = 1")
        rc = cli.main(["run", "--config", cfg(tmp_path, bad),
                       "--out-dir", str(tmp_path / "out")])
        assert rc == 3
        assert "abort" in capsys.readouterr().err

    def test_missing_field_file(self, tmp_path):
        rc = cli.main(["field", str(tmp_path / "ghost.lbkf")])
        assert rc == 4


class TestRun:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(["run", "--config", cfg(tmp_path, RUN_CFG),
                       "--out-dir", str(out), "--verbose"])
        assert rc == 0
        csv = out / "demo.csv"
        assert csv.exists()
        header = csv.read_text().splitlines()[0]
        assert header.startswith("t,mass,")
        manifest = json.loads((out / "demo.json").read_text())
        assert manifest["columns"] == header.split(",")

    def test_resume(self, tmp_path):
        """A checkpointed run restarts from the saved state and keeps
        appending to a fresh series under <label>_resumed."""
        text = RUN_CFG.replace("n_steps = 2",
                               "n_steps = 4\ncheckpoint_every = 2")
        out = tmp_path / "out"
        p = cfg(tmp_path, text)
        assert cli.main(["run", "--config", p, "--out-dir", str(out)]) == 0
        ckpts = sorted(out.glob("demo_step*.lbkf"))
        assert ckpts
        base = str(ckpts[0])[: -len(".lbkf")]
        rc = cli.main(["run", "--config", p, "--out-dir", str(out),
                       "--resume", base])
        assert rc == 0
        resumed = np.genfromtxt(out / "demo_resumed.csv", delimiter=",",
                                names=True)
        # the resumed series starts at the checkpoint time, not zero
        assert resumed["t"][0] > 0.0


class TestFieldInspect:
    def test_report(self, tmp_path, capsys):
        grid = make_grid(2, 6.0, 15)
        field = DensityField(grid=grid, values=maxwellian(grid))
        path = str(tmp_path / "mu.lbkf")
        save_field(path, field)
        assert cli.main(["field", path]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["d"] == 2 and info["n"] == 15
        assert info["kind"] == "absolute"
        assert abs(info["mass"] - 1.0) < 1e-10
        assert abs(info["energy"] - 0.5) < 1e-3


class TestKernelDump:
    def test_json_shape(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(["kernel-dump", "--config", cfg(tmp_path, RUN_CFG),
                       "--out-dir", str(out), "--pairs", "3"])
        assert rc == 0
        path = capsys.readouterr().out.strip()
        dump = json.loads(open(path).read())
        assert dump["d"] == 2
        assert dump["landau_constant"] > 0
        assert len(dump["pairs"]) == 3
        for pair in dump["pairs"]:
            assert len(pair["eigenvalues"]) == 2
            assert len(pair["kernel"]) == 2
            assert len(pair["landau_reference"]) == 2
            # screening only ever removes weight relative to Landau
            assert pair["max_rel_landau_diff"] < 1.0


class TestDispersionScan:
    def test_csv_and_report(self, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["dispersion-scan", "--config", cfg(tmp_path, SCAN_CFG),
                       "--out-dir", str(out)])
        assert rc == 0
        lines = (out / "scan.csv").read_text().splitlines()
        assert lines[0] == "khat_x,khat_y,r,u,re_eps,im_eps,abs_eps"
        assert len(lines) == 1 + 2 * 21
        report = json.loads((out / "scan_report.json").read_text())
        # equilibrium is Penrose stable: the margin is strictly positive
        assert report["report"]["penrose_min"] > 0.1
