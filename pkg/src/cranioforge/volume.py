"""CT volume representation, coordinate maps and the raw checkpoint container.

Scalars are stored as a C-ordered ``(nz, ny, nx)`` array so that the flat
buffer is x-fastest, then y, then z, matching the on-disk layout.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SidecarMismatch, TruncatedData, VolumeIOError

__all__ = [
    "Volume",
    "read_raw_volume",
    "write_raw_volume",
    "voxel_to_world",
    "world_to_voxel",
    "read_grid",
    "write_grid",
    "sidecar_paths",
]

_DTYPES = {"int16le": np.dtype("<i2"), "uint8": np.dtype("u1")}


def _triple(values, kind, name):
    out = tuple(kind(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(out)}")
    return out


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable scalar grid in Hounsfield units.

    Parameters
    ----------
    scalars : array_like, shape (nz, ny, nx)
        Intensities, cast to int16.
    spacing : (sx, sy, sz) mm per voxel.
    origin : (x, y, z) mm, world position of the centre of voxel (0, 0, 0).
    """

    scalars: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.scalars)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"scalars must be a non-empty 3D array, got shape {arr.shape}")
        if arr.dtype != np.int16:
            if arr.size and (arr.min() < -32768 or arr.max() > 32767):
                raise ValueError("HU values outside the int16 range")
            arr = arr.astype(np.int16)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        spacing = _triple(self.spacing, float, "spacing")
        if not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        origin = _triple(self.origin, float, "origin")
        object.__setattr__(self, "scalars", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        nz, ny, nx = self.scalars.shape
        return (nx, ny, nz)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and self.scalars.shape == other.scalars.shape
            and np.array_equal(self.scalars, other.scalars)
        )

    def __repr__(self):
        return f"Volume(dims={self.dims}, spacing={self.spacing}, origin={self.origin})"


def voxel_to_world(grid, index):
    """Map a (possibly fractional) voxel index ``(i, j, k)`` to mm."""
    idx = np.asarray(index, dtype=float)
    return np.asarray(grid.origin) + idx * np.asarray(grid.spacing)


def world_to_voxel(grid, point):
    """Inverse of :func:`voxel_to_world`; returns fractional indices."""
    p = np.asarray(point, dtype=float)
    return (p - np.asarray(grid.origin)) / np.asarray(grid.spacing)


def sidecar_paths(path, suffix):
    """Return ``(sidecar, raw)`` paths for ``<name>.<suffix>.json``."""
    path = Path(path)
    name = path.name
    tail = f".{suffix}.json"
    if name.endswith(tail):
        stem = name[: -len(tail)]
    elif name.endswith(f".{suffix}.raw"):
        stem = name[: -len(suffix) - 5]
    else:
        stem = name
    return path.with_name(stem + tail), path.with_name(f"{stem}.{suffix}.raw")


def write_grid(array, spacing, origin, path, dtype_tag, suffix):
    """Write a 3D array as raw little-endian bytes plus a JSON sidecar."""
    dtype = _DTYPES[dtype_tag]
    sidecar, raw = sidecar_paths(path, suffix)
    nz, ny, nx = array.shape
    meta = {
        "dims": [nx, ny, nz],
        "spacing_mm": list(spacing),
        "origin_mm": list(origin),
        "dtype": dtype_tag,
        "data": raw.name,
    }
    raw.parent.mkdir(parents=True, exist_ok=True)
    raw.write_bytes(np.ascontiguousarray(array, dtype=dtype).tobytes())
    sidecar.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return sidecar, raw


def read_grid(path, expected_dtype, suffix):
    """Read a sidecar + raw pair; returns ``(array, spacing, origin)``."""
    sidecar, _ = sidecar_paths(path, suffix)
    try:
        meta = json.loads(Path(sidecar).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise SidecarMismatch(f"{sidecar}: unreadable sidecar ({exc})") from exc
    required = {"dims", "spacing_mm", "origin_mm", "dtype", "data"}
    if not isinstance(meta, dict) or not required <= set(meta):
        raise SidecarMismatch(f"{sidecar}: sidecar must contain keys {sorted(required)}")
    if meta["dtype"] != expected_dtype:
        raise SidecarMismatch(f"{sidecar}: dtype {meta['dtype']!r}, expected {expected_dtype!r}")
    try:
        nx, ny, nz = (int(d) for d in meta["dims"])
        spacing = _triple(meta["spacing_mm"], float, "spacing_mm")
        origin = _triple(meta["origin_mm"], float, "origin_mm")
    except (TypeError, ValueError) as exc:
        raise SidecarMismatch(f"{sidecar}: {exc}") from exc
    if min(nx, ny, nz) < 1 or not all(s > 0 for s in spacing):
        raise SidecarMismatch(f"{sidecar}: dims and spacing must be positive")
    raw = Path(sidecar).parent / meta["data"]
    dtype = _DTYPES[expected_dtype]
    expected = nx * ny * nz * dtype.itemsize
    size = os.path.getsize(raw)
    if size < expected:
        raise TruncatedData(f"{raw}: {size} bytes, sidecar declares {expected}")
    if size != expected:
        raise SidecarMismatch(f"{raw}: {size} bytes, sidecar declares {expected}")
    array = np.fromfile(raw, dtype=dtype).reshape(nz, ny, nx)
    return array, spacing, origin


def write_raw_volume(volume, path):
    """Write ``volume`` as ``<name>.vol.json`` + ``<name>.vol.raw``."""
    return write_grid(volume.scalars, volume.spacing, volume.origin, path, "int16le", "vol")


def read_raw_volume(sidecar):
    try:
        array, spacing, origin = read_grid(sidecar, "int16le", "vol")
    except FileNotFoundError as exc:
        raise VolumeIOError(str(exc)) from exc
    return Volume(array.astype(np.int16), spacing, origin)
