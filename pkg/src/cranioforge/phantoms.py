"""Synthetic CT volumes with analytically known geometry."""
import numpy as np

from .volume import Volume

BONE_HU = 1000
AIR_HU = -1000


def _grid(n, spacing, origin):
    n = (n, n, n) if np.isscalar(n) else tuple(n)  # (nx, ny, nz)
    sx, sy, sz = (spacing,) * 3 if np.isscalar(spacing) else spacing
    z = origin[2] + sz * np.arange(n[2])
    y = origin[1] + sy * np.arange(n[1])
    x = origin[0] + sx * np.arange(n[0])
    return n, (sx, sy, sz), np.meshgrid(z, y, x, indexing="ij")


def sphere_phantom(n=64, radius=20.0, spacing=1.0, center=None, origin=(0.0, 0.0, 0.0),
                   inside=BONE_HU, outside=AIR_HU):
    """Solid ball of ``inside`` HU in an ``outside`` background.

    The centre defaults to the middle of the grid. Voxel centres at distance
    ``<= radius`` are inside.
    """
    dims, sp, (z, y, x) = _grid(n, spacing, origin)
    if center is None:
        center = [origin[a] + sp[a] * (dims[a] - 1) / 2 for a in range(3)]
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    scalars = np.where(r2 <= radius * radius, inside, outside).astype(np.int16)
    return Volume(scalars, sp, tuple(float(o) for o in origin))


def shell_phantom(n=64, outer=20.0, inner=17.0, spacing=1.0, origin=(0.0, 0.0, 0.0),
                  inside=BONE_HU, outside=AIR_HU):
    """Hollow ball: bone between ``inner`` and ``outer`` radii."""
    dims, sp, (z, y, x) = _grid(n, spacing, origin)
    center = [origin[a] + sp[a] * (dims[a] - 1) / 2 for a in range(3)]
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    shell = (r2 <= outer * outer) & (r2 > inner * inner)
    return Volume(np.where(shell, inside, outside).astype(np.int16), sp, tuple(float(o) for o in origin))
