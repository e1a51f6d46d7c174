"""Write a synthetic CT phantom as a raw volume (<name>.vol.json + .vol.raw).

    python scripts/make_phantom.py --kind sphere --out work/sphere.vol.json
    python scripts/make_phantom.py --kind shell --size 128 --outer 50 --inner 44 --out work/shell.vol.json
"""
import argparse
from pathlib import Path

from cranioforge.phantoms import shell_phantom, sphere_phantom
from cranioforge.volume import write_raw_volume


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--kind", choices=("sphere", "shell"), default="sphere")
    p.add_argument("--size", type=int, default=64, help="voxels per axis")
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=20.0, help="sphere radius, mm")
    p.add_argument("--outer", type=float, default=20.0)
    p.add_argument("--inner", type=float, default=17.0)
    p.add_argument("--out", required=True)
    a = p.parse_args()
    if a.kind == "sphere":
        vol = sphere_phantom(a.size, a.radius, a.spacing)
    else:
        vol = shell_phantom(a.size, a.outer, a.inner, a.spacing)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    sidecar, raw = write_raw_volume(vol, a.out)
    print(f"wrote {sidecar} and {raw}: dims {vol.dims}, spacing {vol.spacing}")


if __name__ == "__main__":
    main()
