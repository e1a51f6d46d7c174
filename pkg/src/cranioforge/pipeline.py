"""Stage functions shared by the subcommands and ``run``.

Both entry points go through exactly these functions, and mesh checkpoints
are lossless OBJ, so chaining subcommands over checkpoints reproduces a
``run`` byte for byte.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import parse_loop_selector
from .dicom import read_dicom_series
from .isosurface import extract_surface
from .mesh import trace_loops, validate
from .meshio import write_mesh
from .printcheck import build_report
from .refine import decimate, relax, remesh
from .repair import bridge, fill_all_holes, fill_hole, refill_region, remove_region
from .segmentation import EditScript, apply_edit_script, threshold
from .shape import brush_displace, plane_cut
from .volume import read_raw_volume

logger = logging.getLogger(__name__)


def load_volume(path):
    """A DICOM series directory or a ``.vol.json`` raw volume."""
    path = Path(path)
    if path.is_dir():
        return read_dicom_series(path)
    return read_raw_volume(path)


def load_edit_script(source):
    if source is None:
        return EditScript()
    if isinstance(source, list):
        return EditScript.from_list(source)
    return EditScript.load(source)


def segment(volume, lo, hi):
    return threshold(volume, lo, hi)


def edit(mask, script):
    return apply_edit_script(mask, script)


def extract(mask, sigma, iso):
    return extract_surface(mask, sigma, iso)


def fill_selected(mesh, selector):
    """Fill the loops picked by a selector (see ``parse_loop_selector``)."""
    kind, value = parse_loop_selector(selector)
    if kind == "all":
        mesh, filled = fill_all_holes(mesh, value)
        logger.info("filled %d holes", filled)
        return mesh
    loops = trace_loops(mesh, strict=False)
    if not loops:
        return mesh
    if kind == "largest":
        loop = loops[0]
    else:
        seed = np.asarray(value)
        dist = [np.linalg.norm(mesh.vertices[list(l.vertices)] - seed, axis=1).min() for l in loops]
        loop = loops[int(np.argmin(dist))]
    return fill_hole(mesh, loop)


@dataclass
class StepContext:
    """Run-wide facts a step may default to (remesh target = voxel size)."""

    voxel_size_mm: float | None = None
    dry_run: bool = False


def apply_step(mesh, step, ctx=None):
    """Apply one :class:`Step`; returns the new mesh."""
    ctx = ctx or StepContext()
    p = step.params
    key = f"{step.stage}.{step.op}"
    if key == "repair.fill_holes":
        mesh = fill_selected(mesh, p["loops"])
    elif key == "repair.remove_region":
        mesh = remove_region(mesh, p["seed_mm"], float(p["radius_mm"])).compact()
    elif key == "repair.refill_region":
        mesh = refill_region(mesh, p["seed_mm"], float(p["radius_mm"])).compact()
    elif key == "repair.bridge":
        mesh = bridge(mesh, p["edge_a"], p["edge_b"])
    elif key == "refine.remesh":
        target = p.get("target_edge_mm") or ctx.voxel_size_mm
        if target is None:
            raise ValueError("remesh needs target_edge_mm (no voxel spacing known)")
        mesh = remesh(mesh, float(target), int(p["iterations"]))
    elif key == "refine.relax":
        mesh = relax(mesh, int(p["iterations"]), float(p["lambda"]), p["mode"], float(p["mu"]))
    elif key == "refine.decimate":
        if p.get("target_triangles") is not None:
            mesh = decimate(mesh, int(p["target_triangles"]))
        else:
            mesh = decimate(mesh, ratio=float(p["ratio"]))
    elif key == "shape.cut":
        keep = p["keep"]
        if p.get("emit_both") and not ctx.dry_run:
            other = "positive" if keep == "negative" else "negative"
            rest = plane_cut(mesh, p["point_mm"], p["normal"], other, bool(p["cap"]))
            write_mesh(rest, p["emit_both"])
        mesh = plane_cut(mesh, p["point_mm"], p["normal"], keep, bool(p["cap"]))
    elif key == "shape.sculpt":
        for s in p["ops"]:
            mesh = brush_displace(mesh, s["center_mm"], float(s["radius_mm"]), float(s["offset_mm"]))
    else:
        raise ValueError(f"unknown step {key}")
    return mesh


def check(mesh, print_config):
    return build_report(mesh, print_config)


def mesh_counts(mesh):
    r = validate(mesh)
    return {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles,
            "boundary_loops": r.boundary_loop_count, "watertight": r.is_watertight}


def mask_counts(mask):
    return {"voxels": int(mask.count), "dims": list(mask.dims)}

