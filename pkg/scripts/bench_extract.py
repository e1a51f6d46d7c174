"""Time and memory of threshold + extract on an n^3 synthetic volume.

    python scripts/bench_extract.py --size 256 --kind shell
"""
import argparse
import resource
import time

import numpy as np

from cranioforge.isosurface import extract_surface
from cranioforge.phantoms import shell_phantom
from cranioforge.segmentation import threshold
from cranioforge.volume import Volume


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--kind", choices=("shell", "noise"), default="shell")
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    n = a.size
    if a.kind == "shell":
        vol = shell_phantom(n, 0.43 * n, 0.35 * n)
    else:
        rng = np.random.default_rng(a.seed)
        vol = Volume(np.where(rng.random((n, n, n)) < 0.3, 1000, -1000).astype(np.int16),
                     (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    t = time.perf_counter()
    mesh = extract_surface(threshold(vol))
    dt = time.perf_counter() - t
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
    print(f"{a.kind} {n}^3: {dt:.2f} s, {mesh.n_triangles} triangles, peak RSS {peak:.0f} MB")


if __name__ == "__main__":
    main()
