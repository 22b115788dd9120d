"""Binary field snapshots and checkpoint pairs."""
import struct

import numpy as np
import pytest

from lbkin import make_grid, maxwellian, DensityField
from lbkin.fieldio import (
    save_field, load_field, save_checkpoint, load_checkpoint,
)


@pytest.fixture
def field(grid2, rng):
    vals = maxwellian(grid2) * (1.0 + 0.1 * rng.standard_normal(grid2.shape))
    return DensityField(grid2, vals, "absolute")


class TestFieldRoundtrip:
    def test_bit_exact(self, tmp_path, field):
        p = tmp_path / "f.lbkf"
        save_field(p, field)
        back = load_field(p)
        assert back.grid.d == field.grid.d
        assert back.grid.n == field.grid.n
        assert back.grid.extent == field.grid.extent
        assert np.array_equal(back.values, field.values)

    def test_kind_passthrough(self, tmp_path, field):
        p = tmp_path / "f.lbkf"
        save_field(p, field)
        assert load_field(p, kind="perturbation").kind == "perturbation"

    def test_header_layout(self, tmp_path, field):
        """First 32 bytes follow the documented fixed layout."""
        p = tmp_path / "f.lbkf"
        save_field(p, field)
        raw = p.read_bytes()
        assert len(raw) == 32 + 8 * field.grid.size
        magic, ver, d, n, extent = struct.unpack("<4sHHId12x", raw[:32])
        assert magic == b"LBKF" and ver == 1
        assert (d, n, extent) == (2, field.grid.n, field.grid.extent)

    def test_d3(self, tmp_path, grid3):
        f = DensityField(grid3, maxwellian(grid3), "absolute")
        p = tmp_path / "g.lbkf"
        save_field(p, f)
        assert np.array_equal(load_field(p).values, f.values)


class TestFieldErrors:
    def test_truncated_header(self, tmp_path):
        p = tmp_path / "bad.lbkf"
        p.write_bytes(b"LBKF\x01\x00")
        with pytest.raises(ValueError, match="truncated header"):
            load_field(p)

    def test_truncated_payload(self, tmp_path, field):
        p = tmp_path / "bad.lbkf"
        save_field(p, field)
        p.write_bytes(p.read_bytes()[:-16])
        with pytest.raises(ValueError, match="truncated payload"):
            load_field(p)

    def test_bad_magic(self, tmp_path, field):
        p = tmp_path / "bad.lbkf"
        save_field(p, field)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"NOPE"
        p.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="bad magic"):
            load_field(p)

    def test_bad_version(self, tmp_path, field):
        p = tmp_path / "bad.lbkf"
        save_field(p, field)
        raw = bytearray(p.read_bytes())
        raw[4:6] = struct.pack("<H", 7)
        p.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            load_field(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_field(tmp_path / "absent.lbkf")


class TestCheckpoint:
    def test_roundtrip_with_meta(self, tmp_path, field):
        base = tmp_path / "ck"
        save_checkpoint(base, field, t=1.5, step=42,
                        meta={"config_sha": "abc123"})
        back, side = load_checkpoint(base)
        assert np.array_equal(back.values, field.values)
        assert back.kind == "absolute"
        assert side["t"] == 1.5 and side["step"] == 42
        assert side["config_sha"] == "abc123"

    def test_accepts_lbkf_filename(self, tmp_path, field):
        """Users hand the .lbkf file the solver wrote; the sidecar is
        found by stripping the suffix."""
        base = tmp_path / "ck"
        save_checkpoint(base, field, t=0.0, step=0)
        back, side = load_checkpoint(str(base) + ".lbkf")
        assert np.array_equal(back.values, field.values)

    def test_kind_restored(self, tmp_path, grid2, rng):
        f = DensityField(grid2, rng.standard_normal(grid2.shape),
                         "perturbation")
        base = tmp_path / "pk"
        save_checkpoint(base, f, t=2.0, step=7)
        back, _ = load_checkpoint(base)
        assert back.kind == "perturbation"

    def test_missing_sidecar(self, tmp_path, field):
        p = tmp_path / "orphan.lbkf"
        save_field(p, field)
        with pytest.raises(FileNotFoundError):
            load_checkpoint(p)
