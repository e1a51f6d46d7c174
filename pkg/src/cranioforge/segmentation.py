"""Binary bone mask: thresholding, connected components and scripted edits.

The interactive mask edits of a segmentation session (lasso removal,
3D erase, slice-by-slice drawing) are expressed as :class:`EditOp` values
collected in an :class:`EditScript`, which serializes to JSON and replays
deterministically.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar

import numpy as np
from scipy import ndimage

from .errors import (
    DegeneratePolygon,
    EditScriptError,
    EmptyMask,
    InvalidEditOp,
    InvalidRange,
    SegmentationError,
    SliceOutOfRange,
    VolumeIOError,
)
from .volume import read_grid, write_grid

logger = logging.getLogger(__name__)

BONE_LO_HU = 226
BONE_HI_HU = 3071
DEFAULT_CONNECTIVITY = 26

# in-plane (u, v) world axes for each projection axis; indices into (x, y, z)
PLANE_AXES = {"x": (1, 2), "y": (0, 2), "z": (0, 1)}
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean voxel grid sharing the geometry of its parent volume.

    ``bits`` has shape ``(nz, ny, nx)`` like :attr:`Volume.scalars`.
    """

    bits: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 3 or min(bits.shape) < 1:
            raise ValueError(f"mask must be a non-empty 3D array, got {bits.shape}")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self):
        nz, ny, nx = self.bits.shape
        return (nx, ny, nz)

    @property
    def count(self):
        return int(np.count_nonzero(self.bits))

    def with_bits(self, bits):
        return Mask(bits, self.spacing, self.origin)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and self.bits.shape == other.bits.shape
            and np.array_equal(self.bits, other.bits)
        )

    def __repr__(self):
        return f"Mask(dims={self.dims}, set={self.count}, spacing={self.spacing})"


def write_mask(mask, path):
    return write_grid(mask.bits.astype(np.uint8), mask.spacing, mask.origin, path, "uint8", "mask")


def read_mask(path):
    try:
        array, spacing, origin = read_grid(path, "uint8", "mask")
    except FileNotFoundError as exc:
        raise VolumeIOError(str(exc)) from exc
    return Mask(array != 0, spacing, origin)


def threshold(volume, lo=BONE_LO_HU, hi=BONE_HI_HU):
    """Voxels with ``lo <= HU <= hi``."""
    if lo > hi:
        raise InvalidRange(f"lower threshold {lo} exceeds upper threshold {hi}")
    s = volume.scalars
    return Mask((s >= lo) & (s <= hi), volume.spacing, volume.origin)


def _structure(connectivity):
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(mask, connectivity=DEFAULT_CONNECTIVITY):
    """Label the set voxels.

    Returns
    -------
    labels : ndarray of int32, shape of ``mask.bits``
        0 for background, ``1..n`` ordered by descending component size;
        equal sizes are ordered by smallest flat (x-fastest) voxel index.
    sizes : ndarray of int64, length n, descending.
    """
    raw, n = ndimage.label(mask.bits, structure=_structure(connectivity))
    if n == 0:
        return np.zeros(mask.bits.shape, np.int32), np.zeros(0, np.int64)
    flat = raw.ravel()
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    first = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    np.minimum.at(first, flat[nz], nz)
    order = np.lexsort((first[1:], -sizes))
    remap = np.zeros(n + 1, np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    return remap[raw], sizes[order].astype(np.int64)


def keep_largest_component(mask, connectivity=DEFAULT_CONNECTIVITY):
    labels, sizes = connected_components(mask, connectivity)
    if sizes.size == 0:
        raise EmptyMask("cannot keep the largest component of an empty mask")
    return mask.with_bits(labels == 1)


def remove_component_at(mask, seed, connectivity=DEFAULT_CONNECTIVITY):
    """Clear the component containing voxel ``seed = (i, j, k)``; no-op if unset."""
    i, j, k = (int(v) for v in seed)
    nx, ny, nz = mask.dims
    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
        raise SliceOutOfRange(f"seed {seed} outside mask dims {mask.dims}")
    if not mask.bits[k, j, i]:
        return mask
    labels, _ = connected_components(mask, connectivity)
    return mask.with_bits(mask.bits & (labels != labels[k, j, i]))


def _centers(mask, axis_index):
    n = mask.bits.shape[::-1][axis_index]
    return mask.origin[axis_index] + np.arange(n) * mask.spacing[axis_index]


def _check_polygon(polygon):
    poly = np.asarray(polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise DegeneratePolygon("polygon must be a list of 2D points")
    distinct = np.unique(poly, axis=0)
    x, y = poly[:, 0], poly[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    if len(distinct) < 3 or area <= 0:
        raise DegeneratePolygon(f"polygon needs >= 3 distinct, non-collinear vertices: {poly.tolist()}")
    return poly


def points_in_polygon(u, v, polygon):
    """Even-odd test for points ``(u, v)``; points on an edge count as outside."""
    poly = np.asarray(polygon, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = np.zeros(np.broadcast(u, v).shape, dtype=bool)
    on_edge = np.zeros_like(inside)
    n = len(poly)
    for a in range(n):
        (ua, va), (ub, vb) = poly[a], poly[(a + 1) % n]
        crosses = (va > v) != (vb > v)
        with np.errstate(divide="ignore", invalid="ignore"):
            ucross = ua + (v - va) * (ub - ua) / (vb - va)
        inside ^= crosses & (u < ucross)
        # boundary: collinear and within the segment's bounding box
        cross = (ub - ua) * (v - va) - (vb - va) * (u - ua)
        within = (
            (np.minimum(ua, ub) <= u) & (u <= np.maximum(ua, ub))
            & (np.minimum(va, vb) <= v) & (v <= np.maximum(va, vb))
        )
        on_edge |= (np.abs(cross) <= 1e-12 * max(1.0, abs(ub - ua) + abs(vb - va))) & within
    return inside & ~on_edge


def lasso_remove(mask, axis, polygon):
    """Clear every voxel whose centre projects strictly inside ``polygon``.

    The projection is orthographic along ``axis`` and the removal goes
    through the full depth of the volume.
    """
    if axis not in PLANE_AXES:
        raise InvalidEditOp(f"axis must be one of x, y, z, got {axis!r}")
    poly = _check_polygon(polygon)
    a_u, a_v = PLANE_AXES[axis]
    cu, cv = _centers(mask, a_u), _centers(mask, a_v)
    uu, vv = np.meshgrid(cu, cv, indexing="ij")
    footprint = points_in_polygon(uu, vv, poly)  # shape (n_u, n_v)
    bits = mask.bits.copy()
    # bits is indexed (z, y, x); expand the footprint over the beam axis
    if axis == "z":
        bits &= ~footprint.T[None, :, :]
    elif axis == "y":
        bits &= ~footprint.T[:, None, :]
    else:
        bits &= ~footprint.T[:, :, None]
    return mask.with_bits(bits)


def _ball(mask, center, radius):
    """Boolean grid of voxel centres within ``radius`` mm of ``center``."""
    gz, gy, gx = np.meshgrid(
        *(_centers(mask, a) - float(center[a]) for a in (2, 1, 0)), indexing="ij", sparse=True
    )
    return gx * gx + gy * gy + gz * gz <= float(radius) ** 2


def erase_brush(mask, center, radius):
    if radius <= 0:
        raise InvalidEditOp(f"radius must be positive, got {radius}")
    return mask.with_bits(mask.bits & ~_ball(mask, center, radius))


def _disk(mask, axis, slice_index, center, radius):
    if axis not in PLANE_AXES:
        raise InvalidEditOp(f"axis must be one of x, y, z, got {axis!r}")
    if radius <= 0:
        raise InvalidEditOp(f"radius must be positive, got {radius}")
    a = _AXIS_INDEX[axis]
    n = mask.dims[a]
    if not 0 <= slice_index < n:
        raise SliceOutOfRange(f"slice {slice_index} outside [0, {n}) along {axis}")
    a_u, a_v = PLANE_AXES[axis]
    du = _centers(mask, a_u) - float(center[0])
    dv = _centers(mask, a_v) - float(center[1])
    inside = (du[:, None] ** 2 + dv[None, :] ** 2) <= float(radius) ** 2  # (n_u, n_v)
    sel = np.zeros(mask.bits.shape, dtype=bool)
    if axis == "z":
        sel[slice_index] = inside.T
    elif axis == "y":
        sel[:, slice_index, :] = inside.T
    else:
        sel[:, :, slice_index] = inside.T
    return sel


def draw_disk(mask, axis, slice_index, center, radius):
    """Set the in-plane disk on one slice (the 2D ``Draw`` brush)."""
    return mask.with_bits(mask.bits | _disk(mask, axis, slice_index, center, radius))


def erase_disk(mask, axis, slice_index, center, radius):
    return mask.with_bits(mask.bits & ~_disk(mask, axis, slice_index, center, radius))


# --- edit script -----------------------------------------------------------

_OPS = {}


def _register(cls):
    _OPS[cls.name] = cls
    return cls


class EditOp:
    """Base class; subclasses are frozen dataclasses with an ``apply`` method."""

    name: ClassVar[str] = ""

    def apply(self, mask):
        raise NotImplementedError

    def to_dict(self):
        d = {"op": self.name}
        for key, value in self.__dict__.items():
            d[key] = list(map(list, value)) if key == "polygon" else (
                list(value) if isinstance(value, tuple) else value
            )
        return d


@_register
@dataclass(frozen=True)
class LassoRemove(EditOp):
    axis: str
    polygon: tuple
    name: ClassVar[str] = "lasso_remove"

    def __post_init__(self):
        object.__setattr__(self, "polygon", tuple(tuple(float(c) for c in p) for p in self.polygon))
        if self.axis not in PLANE_AXES:
            raise InvalidEditOp(f"axis must be x, y or z, got {self.axis!r}")
        _check_polygon(self.polygon)

    def apply(self, mask):
        return lasso_remove(mask, self.axis, self.polygon)


@_register
@dataclass(frozen=True)
class EraseBrush(EditOp):
    center: tuple
    radius: float
    name: ClassVar[str] = "erase_brush"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3:
            raise InvalidEditOp("erase_brush center must be a 3D point")
        if not self.radius > 0:
            raise InvalidEditOp(f"radius must be positive, got {self.radius}")

    def apply(self, mask):
        return erase_brush(mask, self.center, self.radius)


@dataclass(frozen=True)
class _DiskOp(EditOp):
    axis: str
    slice_index: int
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.axis not in PLANE_AXES:
            raise InvalidEditOp(f"axis must be x, y or z, got {self.axis!r}")
        if len(self.center) != 2:
            raise InvalidEditOp("disk center must be a 2D in-plane point")
        if not self.radius > 0:
            raise InvalidEditOp(f"radius must be positive, got {self.radius}")
        if int(self.slice_index) != self.slice_index or self.slice_index < 0:
            raise SliceOutOfRange(f"slice_index must be a non-negative integer, got {self.slice_index}")


@_register
@dataclass(frozen=True)
class DrawDisk(_DiskOp):
    name: ClassVar[str] = "draw_disk"

    def apply(self, mask):
        return draw_disk(mask, self.axis, int(self.slice_index), self.center, self.radius)


@_register
@dataclass(frozen=True)
class EraseDisk(_DiskOp):
    name: ClassVar[str] = "erase_disk"

    def apply(self, mask):
        return erase_disk(mask, self.axis, int(self.slice_index), self.center, self.radius)


@_register
@dataclass(frozen=True)
class KeepLargestComponent(EditOp):
    connectivity: int = DEFAULT_CONNECTIVITY
    name: ClassVar[str] = "keep_largest_component"

    def apply(self, mask):
        return keep_largest_component(mask, self.connectivity)


@_register
@dataclass(frozen=True)
class RemoveComponentAt(EditOp):
    seed: tuple
    connectivity: int = DEFAULT_CONNECTIVITY
    name: ClassVar[str] = "remove_component_at"

    def __post_init__(self):
        object.__setattr__(self, "seed", tuple(int(c) for c in self.seed))
        if len(self.seed) != 3:
            raise InvalidEditOp("seed must be a voxel index (i, j, k)")

    def apply(self, mask):
        return remove_component_at(mask, self.seed, self.connectivity)


def op_from_dict(d):
    if not isinstance(d, dict) or "op" not in d:
        raise InvalidEditOp(f"edit op must be an object with an 'op' field: {d!r}")
    fields = dict(d)
    name = fields.pop("op")
    fields.pop("note", None)
    try:
        cls = _OPS[name]
    except KeyError:
        raise InvalidEditOp(f"unknown edit op {name!r}; known: {sorted(_OPS)}") from None
    try:
        return cls(**fields)
    except TypeError as exc:
        raise InvalidEditOp(f"{name}: {exc}") from exc


@dataclass
class EditScript:
    """Ordered edit ops with an optional free-text note per op."""

    ops: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.ops = list(self.ops)
        self.notes = list(self.notes) + [None] * (len(self.ops) - len(self.notes))

    def append(self, op, note=None):
        self.ops.append(op)
        self.notes.append(note)
        return self

    def __add__(self, other):
        return EditScript(self.ops + other.ops, self.notes + other.notes)

    def __len__(self):
        return len(self.ops)

    def to_json(self):
        items = []
        for op, note in zip(self.ops, self.notes):
            d = op.to_dict()
            if note is not None:
                d["note"] = note
            items.append(d)
        return json.dumps(items, indent=2)

    @classmethod
    def from_list(cls, items):
        if not isinstance(items, list):
            raise InvalidEditOp("edit script must be a JSON array")
        script = cls()
        for i, item in enumerate(items):
            try:
                script.append(op_from_dict(item), item.get("note"))
            except SegmentationError as exc:
                raise EditScriptError(i, exc) from exc
        return script

    @classmethod
    def from_json(cls, text):
        try:
            items = json.loads(text)
        except ValueError as exc:
            raise InvalidEditOp(f"edit script is not valid JSON: {exc}") from exc
        return cls.from_list(items)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def apply_edit_script(mask, script):
    """Apply ``script`` left to right; the input mask is never modified."""
    for i, op in enumerate(script.ops):
        try:
            mask = op.apply(mask)
        except SegmentationError as exc:
            raise EditScriptError(i, exc) from exc
        logger.debug("edit op #%d %s -> %d voxels", i, op.name, mask.count)
    return mask
