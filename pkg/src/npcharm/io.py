"""Map dumps and CSV tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .energy import EnergyField, MetricMap
from .errors import MapDimensionError, MapFormatError, SpaceTagMismatchError
from .grid import GridDomain, build_grid
from .targets import TargetSpace, space_from_descriptor

MAGIC = "NPCHARM-MAP"
VERSION = 1

__all__ = ["save_map", "load_map", "write_field_csv", "write_table_csv", "read_boundary_table"]


def _resolution(grid: GridDomain):
    kind = grid.descriptor.get("kind", "cube")
    return list(grid.shape) if kind == "cube" else grid.shape[0]


def save_map(u: MetricMap, path) -> None:
    """Text header, then little-endian float64 payload rows in C vertex order."""
    g = u.grid
    header = [
        MAGIC,
        f"version {VERSION}",
        f"n {g.dim}",
        "shape " + " ".join(str(s) for s in g.shape),
        f"h {float(g.spacing)!r}",
        "domain " + json.dumps(g.descriptor, sort_keys=True),
        "target " + json.dumps(u.space.descriptor(), sort_keys=True),
        f"tag {u.space.tag}",
        "DATA",
    ]
    data = np.ascontiguousarray(u.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(data)


def _read_header(fh):
    fields = {}
    first = fh.readline().decode(errors="replace").rstrip("\n")
    if first != MAGIC:
        raise MapFormatError(f"bad magic line {first[:40]!r}")
    for _ in range(32):
        line = fh.readline()
        if not line:
            raise MapFormatError("header ends before DATA marker")
        line = line.decode(errors="replace").rstrip("\n")
        if line == "DATA":
            return fields
        key, _, rest = line.partition(" ")
        fields[key] = rest
    raise MapFormatError("header too long")


def load_map(path, space: TargetSpace | None = None, dim: int | None = None, shape=None) -> MetricMap:
    """Inverse of save_map.

    ``space``, ``dim`` and ``shape`` are optional expectations; disagreement
    raises SpaceTagMismatchError or MapDimensionError.  Truncated or garbled
    files raise MapFormatError.
    """
    with open(path, "rb") as fh:
        hdr = _read_header(fh)
        blob = fh.read()
    try:
        version = int(hdr["version"])
        n = int(hdr["n"])
        shp = tuple(int(x) for x in hdr["shape"].split())
        h = float(hdr["h"])
        dom = json.loads(hdr["domain"])
        tdesc = json.loads(hdr["target"])
    except (KeyError, ValueError) as exc:
        raise MapFormatError(f"malformed header: {exc}") from None
    if version != VERSION:
        raise MapFormatError(f"unsupported dump version {version}")
    if len(shp) != n:
        raise MapFormatError("shape does not match dimension in header")
    if dim is not None and n != dim:
        raise MapDimensionError(f"dump has dimension {n}, expected {dim}")
    if shape is not None and tuple(shape) != shp:
        raise MapDimensionError(f"dump has shape {shp}, expected {tuple(shape)}")
    stored = space_from_descriptor(tdesc)
    if space is not None and space.tag != stored.tag:
        raise SpaceTagMismatchError(f"dump holds a map into {stored.tag}, expected {space.tag}")
    k = stored.payload_dim
    want = int(np.prod(shp)) * k * 8
    if len(blob) != want:
        raise MapFormatError(f"payload has {len(blob)} bytes, expected {want}")
    vals = np.frombuffer(blob, dtype="<f8").astype(float).reshape(shp + (k,))
    kind = dom.get("kind", "cube")
    res = list(shp) if kind == "cube" else shp[0]
    grid = build_grid(dom, res, h)
    if tuple(grid.shape) != shp:
        raise MapDimensionError(f"domain descriptor yields shape {grid.shape}, dump has {shp}")
    return MetricMap(grid, space or stored, vals)


def write_field_csv(path, field: EnergyField, name="value") -> None:
    """One row per defined vertex: physical coordinates then the value."""
    grid = field.grid
    X = grid.physical_coords()[field.mask]
    v = field.values[field.mask]
    cols = [f"x{i + 1}" for i in range(grid.dim)] + [name]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row, val in zip(X, v):
            w.writerow([repr(float(x)) for x in row] + [repr(float(val))])


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def read_boundary_table(path, grid: GridDomain, payload_dim: int):
    """Per-vertex boundary table: columns i1..in (vertex index) then payload."""
    path = Path(path)
    out = np.full(tuple(grid.shape) + (payload_dim,), np.nan)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MapFormatError(f"{path} is empty")
    body = rows[1:] if not rows[0][0].strip().lstrip("-").isdigit() else rows
    for r in body:
        if len(r) != grid.dim + payload_dim:
            raise MapFormatError(f"{path}: row {r} has {len(r)} columns, expected {grid.dim + payload_dim}")
        idx = tuple(int(x) for x in r[: grid.dim])
        out[idx] = [float(x) for x in r[grid.dim :]]
    return out
