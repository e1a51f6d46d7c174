"""Closed isosurface extraction from a binary mask.

Marching cubes over the full 256-configuration table. The table is not
hand-typed: it is generated at import time from one rule applied on each
cube face, namely that inside corners sharing only a face diagonal are kept
apart ("separated" resolution). Both cells that share a face therefore
derive the same segment on it, traversed in opposite directions, which is
what makes the output a closed, consistently oriented edge-manifold.
"""
from __future__ import annotations

import logging
import math

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, NegativeSigma
from .mesh import TriMesh

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.7
DEFAULT_ISO = 0.5
# keeps interpolated vertices off grid corners so no triangle degenerates
EDGE_MARGIN = 1e-3

# corner c <-> offset (c & 1, c >> 1 & 1, c >> 2 & 1) in (x, y, z)
CORNERS = np.array([[(c >> a) & 1 for a in range(3)] for c in range(8)])
# edge = (lower corner, axis); 12 of them
EDGES = [(c, a) for a in range(3) for c in range(8) if not (c >> a) & 1]
EDGE_INDEX = {e: i for i, e in enumerate(EDGES)}


def _edge_between(c0, c1):
    diff = c0 ^ c1
    axis = diff.bit_length() - 1
    return EDGE_INDEX[(min(c0, c1), axis)]


def _face_cycles():
    """Corner cycles of the 6 faces, counter-clockwise seen from outside."""
    faces = []
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, 1):
            ring = []
            for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                bits = {axis: side, u: du, v: dv}
                ring.append(bits[0] | bits[1] << 1 | bits[2] << 2)
            faces.append(ring if side == 1 else ring[::-1])
    return faces


FACES = _face_cycles()


def _polygons(config):
    """Directed crossing-edge cycles for one corner configuration."""
    inside = [(config >> c) & 1 for c in range(8)]
    successor = {}
    for ring in FACES:
        crossings = []  # (position, edge, leaves_inside)
        for i in range(4):
            a, b = ring[i], ring[(i + 1) % 4]
            if inside[a] != inside[b]:
                crossings.append((i, _edge_between(a, b), bool(inside[a])))
        for n, (_, edge, leaving) in enumerate(crossings):
            if leaving:
                # pair with the nearest crossing behind it: the inside arc between
                # them then contains no other crossing, so inside corners separate
                successor[edge] = crossings[n - 1][1]
    cycles = []
    seen = set()
    for start in sorted(successor):
        if start in seen:
            continue
        cycle = [start]
        seen.add(start)
        nxt = successor[start]
        while nxt != start:
            cycle.append(nxt)
            seen.add(nxt)
            nxt = successor[nxt]
        cycles.append(cycle)
    return cycles


def _edge_faces():
    faces = {}
    for f, ring in enumerate(FACES):
        for i in range(4):
            faces.setdefault(_edge_between(ring[i], ring[(i + 1) % 4]), set()).add(f)
    return faces


def _fan(cycle, edge_faces):
    """Fan triangulation whose diagonals never lie in a cube face.

    A diagonal inside a face could be produced by the neighbouring cell as
    well, giving an edge with four triangles.
    """
    n = len(cycle)
    for s in range(n):
        r = cycle[s:] + cycle[:s]
        if all(not (edge_faces[r[0]] & edge_faces[r[k]]) for k in range(2, n - 1)):
            return [(r[0], r[k], r[k + 1]) for k in range(1, n - 1)]
    raise AssertionError(f"no face-free fan for cycle {cycle}")


def _build_table():
    edge_faces = _edge_faces()
    tris = []
    for config in range(256):
        t = []
        for cycle in _polygons(config):
            t.extend(_fan(cycle, edge_faces))
        tris.append(t)
    width = max(len(t) for t in tris)
    table = np.full((256, max(width, 1), 3), -1, dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for config, t in enumerate(tris):
        counts[config] = len(t)
        if t:
            table[config, : len(t)] = t
    return table, counts


TRI_TABLE, TRI_COUNT = _build_table()


def _orientation_sign():
    """+1 if table triangles face away from inside corners, else -1."""
    # single inside corner 0: its triangle normal must point away from it
    e0, e1, e2 = TRI_TABLE[1, 0]
    pts = []
    for e in (e0, e1, e2):
        c, axis = EDGES[e]
        p = CORNERS[c].astype(float)
        p[axis] += 0.5
        pts.append(p)
    n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    return 1 if np.dot(n, pts[0] - CORNERS[0]) > 0 else -1


if _orientation_sign() < 0:
    TRI_TABLE = np.where(TRI_TABLE >= 0, TRI_TABLE[:, :, ::-1], TRI_TABLE)


def gaussian_kernel(sigma):
    """Normalised 1D Gaussian truncated at 3 sigma."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _mask_bits(mask):
    return mask.bits if hasattr(mask, "bits") else np.asarray(mask, dtype=bool)


def gaussian_smooth_field(mask, sigma):
    """Separable Gaussian blur of the 0/1 field; edges replicate.

    ``sigma`` is in voxels. Returns a float64 array shaped like ``mask.bits``.
    """
    if sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    field = _mask_bits(mask).astype(np.float64)
    if sigma == 0:
        return field
    kernel = gaussian_kernel(sigma)
    for axis in range(3):
        field = ndimage.convolve1d(field, kernel, axis=axis, mode="nearest")
    return field


def marching_cubes(field, iso=DEFAULT_ISO, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Contour a (nz, ny, nx) scalar grid; values > iso are inside.

    Grid point ``(i, j, k)`` maps to ``origin + (i, j, k) * spacing``. The
    result is closed only when the field is below ``iso`` on the border.
    Vertices are numbered by grid edge and triangles by cell, x fastest.
    """
    f = np.asarray(field)
    nz, ny, nx = f.shape
    inside = f > iso
    cz, cy, cx = nz - 1, ny - 1, nx - 1
    config = np.zeros((cz, cy, cx), dtype=np.uint8)
    for c in range(8):
        dx, dy, dz = CORNERS[c]
        config |= inside[dz : dz + cz, dy : dy + cy, dx : dx + cx].astype(np.uint8) << np.uint8(c)
    del inside
    flat_cfg = config.ravel()
    cells = np.flatnonzero(TRI_COUNT[flat_cfg] > 0)
    if len(cells) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
    cfg = flat_cfg[cells].astype(np.int64)
    del config, flat_cfg
    counts = TRI_COUNT[cfg]
    cell_of_tri = np.repeat(np.arange(len(cells)), counts)
    starts = np.cumsum(counts) - counts
    slot = np.arange(len(cell_of_tri)) - starts[cell_of_tri]
    local = TRI_TABLE[cfg[cell_of_tri], slot]  # (T, 3) cube edge ids

    # global edge id = 3 * (grid point of the edge's lower corner) + axis
    ci = cells % cx
    cj = (cells // cx) % cy
    ck = cells // (cx * cy)
    base = (ck * ny + cj) * nx + ci
    del ci, cj, ck
    corner_flat = CORNERS @ np.array([1, nx, nx * ny])
    edge_off = np.array([3 * corner_flat[EDGES[e][0]] + EDGES[e][1] for e in range(12)], dtype=np.int64)
    gid = 3 * base[cell_of_tri][:, None] + edge_off[local]
    del local, cell_of_tri
    uniq, tri = np.unique(gid.ravel(), return_inverse=True)
    tri = tri.reshape(-1, 3)

    point = uniq // 3
    axis = uniq % 3
    pi = point % nx
    pj = (point // nx) % ny
    pk = point // (nx * ny)
    step = np.array([1, nx, nx * ny])[axis]
    f_flat = f.reshape(-1)
    f0 = f_flat[point].astype(np.float64)
    f1 = f_flat[point + step].astype(np.float64)
    denom = f1 - f0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (iso - f0) / denom
    # exact ties on a corner snap to the midpoint; the rest stays off corners
    tie = (f0 == iso) | (f1 == iso) | (denom == 0)
    t = np.where(tie, 0.5, np.clip(t, EDGE_MARGIN, 1.0 - EDGE_MARGIN))
    idx = np.stack([pi, pj, pk], axis=1).astype(np.float64)
    idx[np.arange(len(axis)), axis] += t
    verts = np.asarray(origin, dtype=np.float64) + idx * np.asarray(spacing, dtype=np.float64)
    return TriMesh(verts, tri)


def extract_surface(mask, smooth_sigma=DEFAULT_SIGMA, iso=DEFAULT_ISO):
    """Closed, outward-oriented surface of a mask in world millimetres.

    The mask is padded with empty voxels (enough to contain the blur) so the
    surface always closes; ``smooth_sigma`` (voxels) blurs the 0/1 field
    before contouring at ``iso``.
    """
    if not 0.0 < iso < 1.0:
        raise ValueError(f"iso must lie in (0, 1), got {iso}")
    if smooth_sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {smooth_sigma}")
    bits = _mask_bits(mask)
    if not bits.any():
        raise EmptyMask("cannot extract a surface from an empty mask")
    pad = 1 + (int(math.ceil(3.0 * smooth_sigma)) if smooth_sigma > 0 else 0)
    padded = np.pad(bits, pad)
    if smooth_sigma > 0:
        field = gaussian_smooth_field(padded, smooth_sigma)
    else:
        field = padded.astype(np.float32)
    del padded
    grid = marching_cubes(field, iso)
    if grid.n_triangles == 0:
        raise EmptyMask(f"smoothed mask never exceeds iso={iso}; lower smooth_sigma")
    spacing = np.asarray(mask.spacing, dtype=np.float64)
    verts = (grid.vertices - pad) * spacing + np.asarray(mask.origin, dtype=np.float64)
    mesh = TriMesh(verts, grid.triangles)
    logger.info("extracted %d vertices, %d triangles", mesh.n_vertices, mesh.n_triangles)
    return mesh
