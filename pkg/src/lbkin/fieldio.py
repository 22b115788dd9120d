"""Binary snapshot format for density fields, plus run checkpoints.

Layout (little-endian), 32-byte header then payload:

    offset  size  field
    0       4     magic "LBKF"
    4       2     format version (u16, currently 1)
    6       2     velocity dimension d (u16)
    8       4     nodes per axis n (u32)
    12      8     extent (f64)
    20      12    reserved, zero
    32      -     n^d float64 values, C order

Checkpoints pair a snapshot with a small JSON sidecar carrying time, step
index and the config hash, so a run can be resumed or audited.
"""

import json
import struct

import numpy as np

from .grid import DensityField, make_grid

MAGIC = b"LBKF"
VERSION = 1
_HEADER = struct.Struct("<4sHHId12x")

__all__ = ["save_field", "load_field", "save_checkpoint", "load_checkpoint"]


def save_field(path, field):
    """Write a DensityField snapshot (absolute or perturbation values as-is)."""
    grid = field.grid
    header = _HEADER.pack(MAGIC, VERSION, grid.d, grid.n, grid.extent)
    values = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())


def load_field(path, kind="absolute"):
    """Read a snapshot back into a DensityField (grid rebuilt from the header)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, d, n, extent = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        grid = make_grid(d, extent, n)
        payload = fh.read(8 * grid.size)
        if len(payload) != 8 * grid.size:
            raise ValueError(f"{path}: truncated payload")
        values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape).copy()
    return DensityField(grid, values, kind)


def save_checkpoint(path_base, field, t, step, meta=None):
    """Write <base>.lbkf plus <base>.json with run position and metadata."""
    save_field(str(path_base) + ".lbkf", field)
    side = {"t": float(t), "step": int(step), "kind": field.kind}
    if meta:
        side.update(meta)
    with open(str(path_base) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path_base):
    """Read a checkpoint pair; returns (field, sidecar_dict).

    Accepts either the bare base path or the .lbkf filename itself.
    """
    base = str(path_base)
    if base.endswith(".lbkf"):
        base = base[:-5]
    with open(base + ".json") as fh:
        side = json.load(fh)
    field = load_field(base + ".lbkf", kind=side.get("kind", "absolute"))
    return field, side
