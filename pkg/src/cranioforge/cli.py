"""``cranioforge`` command line: one subcommand per stage, plus ``run``.

Machine-readable status goes to stdout (one JSON line per stage), logs to
stderr. Exit codes: 0 ok, 1 print check failed, 2 bad input or flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import pipeline as P
from .config import PipelineConfig, Step, print_config_from_dict
from .errors import ConfigError, CranioforgeError
from .meshio import read_mesh, write_mesh
from .printcheck import PrintConfig
from .raycast import THREADS_ENV
from .segmentation import EditScript, read_mask, write_mask

logger = logging.getLogger("cranioforge")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_BAD_INPUT = 0, 1, 2


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _write_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json(), encoding="utf-8")


def _status(stage, input_, output, started, counts):
    line = {
        "stage": stage,
        "input": None if input_ is None else str(input_),
        "output": None if output is None else str(output),
        "elapsed_ms": int(round((time.perf_counter() - started) * 1000)),
        "counts": counts,
    }
    print(json.dumps(line), flush=True)


# --- per-stage commands ------------------------------------------------------

def cmd_segment(a):
    t = time.perf_counter()
    mask = P.segment(P.load_volume(a.input), a.lo, a.hi)
    write_mask(mask, a.output)
    _status("segment", a.input, a.output, t, P.mask_counts(mask))
    return EXIT_OK


def cmd_mask_edit(a):
    t = time.perf_counter()
    mask = P.edit(read_mask(a.input), EditScript.load(a.script))
    write_mask(mask, a.output)
    _status("edit", a.input, a.output, t, P.mask_counts(mask))
    return EXIT_OK


def cmd_extract(a):
    t = time.perf_counter()
    mesh = P.extract(read_mask(a.input), a.sigma, a.iso)
    write_mesh(mesh, a.output, a.stl_format)
    _status("extract", a.input, a.output, t, P.mesh_counts(mesh))
    return EXIT_OK


def _mesh_step(a, step):
    t = time.perf_counter()
    mesh = P.apply_step(read_mesh(a.input), step)
    write_mesh(mesh, a.output, a.stl_format)
    _status(step.stage, a.input, a.output, t, P.mesh_counts(mesh))
    return EXIT_OK


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def _loops_arg(text):
    if text is None:
        return None
    parts = text.split(",")
    return [float(x) for x in parts] if len(parts) == 3 else text


def cmd_repair(a):
    params = {
        "fill_holes": {"loops": _loops_arg(a.loops)},
        "remove_region": {"seed_mm": a.seed, "radius_mm": a.radius},
        "refill_region": {"seed_mm": a.seed, "radius_mm": a.radius},
        "bridge": {"edge_a": a.edge_a, "edge_b": a.edge_b},
    }[a.op]
    return _mesh_step(a, Step.from_dict({"stage": "repair", "op": a.op, **_drop_none(params)}, "repair"))


def cmd_refine(a):
    params = {
        "remesh": {"target_edge_mm": a.target_edge, "iterations": a.iterations},
        "relax": {"mode": a.mode, "lambda": a.lam, "mu": a.mu, "iterations": a.iterations},
        "decimate": {"target_triangles": a.target_triangles, "ratio": a.ratio},
    }[a.op]
    if a.op == "remesh" and a.target_edge is None:
        raise ConfigError("refine --op remesh needs --target-edge")
    return _mesh_step(a, Step.from_dict({"stage": "refine", "op": a.op, **_drop_none(params)}, "refine"))


def cmd_cut(a):
    params = {"point_mm": a.point, "normal": a.normal, "keep": a.keep, "cap": not a.no_cap,
              "emit_both": a.emit_both}
    return _mesh_step(a, Step.from_dict({"stage": "shape", "op": "cut", **_drop_none(params)}, "cut"))


def cmd_sculpt(a):
    if a.script:
        ops = json.loads(Path(a.script).read_text(encoding="utf-8"))
    elif a.center and a.radius is not None and a.offset is not None:
        ops = [{"op": "brush_displace", "center_mm": a.center, "radius_mm": a.radius, "offset_mm": a.offset}]
    else:
        raise ConfigError("sculpt needs --script or all of --center/--radius/--offset")
    return _mesh_step(a, Step.from_dict({"stage": "shape", "op": "sculpt", "ops": ops}, "sculpt"))


def _print_config(a):
    if a.print_config:
        d = json.loads(Path(a.print_config).read_text(encoding="utf-8"))
        return print_config_from_dict(d)
    return PrintConfig(
        min_wall_mm=a.min_wall, min_feature_mm=a.min_feature, thickness_sample_count=a.samples,
        rng_seed=a.seed, require_single_component=not a.allow_multiple_components,
    )


def _report(a, stage):
    t = time.perf_counter()
    report = P.check(read_mesh(a.input), _print_config(a))
    if a.output:
        _write_report(report, a.output)
    counts = {"verdict": report.verdict, "reasons": list(report.reasons)}
    _status(stage, a.input, a.output, t, counts)
    return report


def cmd_check(a):
    return EXIT_OK if _report(a, "check").passed else EXIT_CHECK_FAILED


def cmd_report(a):
    _report(a, "report")
    return EXIT_OK


# --- run -------------------------------------------------------------------

def plan_stages(cfg, checkpoints):
    """Ordered stage list with the checkpoint file each one would write."""
    stages = [("segment", None, ".mask.json")]
    if cfg.edit_script is not None:
        stages.append(("edit", None, ".mask.json"))
    stages.append(("extract", None, ".obj"))
    for step in cfg.steps:
        stages.append((step.stage, step, ".obj"))
    stages.append(("check", None, ".report.json"))
    plan = []
    for i, (name, step, ext) in enumerate(stages):
        label = name if step is None else f"{name}-{step.op}"
        entry = {"index": i, "stage": name, "checkpoint": None}
        if step is not None:
            entry["step"] = step.to_dict()
        if checkpoints is not None:
            entry["checkpoint"] = str(Path(checkpoints) / f"{i:02d}-{label}{ext}")
        plan.append(entry)
    return plan


def run_pipeline(cfg, checkpoints=None, dry_run=False):
    """Execute ``cfg``; returns ``(exit_code, report)``."""
    ckdir = checkpoints if checkpoints is not None else cfg.checkpoints
    plan = plan_stages(cfg, ckdir)
    if dry_run:
        print(json.dumps({"stage": "plan", "config": cfg.to_dict(), "plan": plan}), flush=True)
        return EXIT_OK, None
    if ckdir is not None:
        Path(ckdir).mkdir(parents=True, exist_ok=True)
    ctx = P.StepContext()
    artifact = None
    report = None
    source = cfg.input
    started_run = time.perf_counter()
    for entry in plan:
        name = entry["stage"]
        t = time.perf_counter()
        out = entry["checkpoint"]
        try:
            if name == "segment":
                volume = P.load_volume(cfg.input)
                ctx.voxel_size_mm = float(min(volume.spacing))
                artifact = P.segment(volume, *cfg.threshold)
                del volume
                counts = P.mask_counts(artifact)
            elif name == "edit":
                artifact = P.edit(artifact, P.load_edit_script(cfg.edit_script))
                counts = P.mask_counts(artifact)
            elif name == "extract":
                artifact = P.extract(artifact, cfg.extract.sigma, cfg.extract.iso)
                counts = P.mesh_counts(artifact)
            elif name == "check":
                report = P.check(artifact, cfg.printcheck)
                counts = {"verdict": report.verdict, "reasons": list(report.reasons)}
            else:
                artifact = P.apply_step(artifact, Step(entry["step"]["stage"], entry["step"]["op"],
                                                       {k: v for k, v in entry["step"].items()
                                                        if k not in ("stage", "op")}), ctx)
                counts = P.mesh_counts(artifact)
            if out is not None:
                if name == "check":
                    _write_report(report, out)
                elif name in ("segment", "edit"):
                    write_mask(artifact, out)
                else:
                    write_mesh(artifact, out)
        except (CranioforgeError, OSError, ValueError) as exc:
            raise StageError(name, exc) from exc
        _status(name, source, out, t, counts)
        source = out
    mesh = artifact
    o = cfg.outputs
    if o.stl:
        write_mesh(mesh, o.stl, o.stl_format)
    if o.obj:
        write_mesh(mesh, o.obj)
    if o.report:
        _write_report(report, o.report)
    _status("run", cfg.input, o.stl or o.obj or o.report, started_run,
            {"verdict": report.verdict, "stages": len(plan)})
    return (EXIT_OK if report.passed else EXIT_CHECK_FAILED), report


def cmd_run(a):
    cfg = PipelineConfig.load(a.config)
    code, _ = run_pipeline(cfg, a.checkpoints, a.dry_run)
    return code


# --- argument parsing ------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="cranioforge", description="CT volume to printable skull mesh pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def io(sp, mesh_out=True):
        sp.add_argument("--input", "-i", required=True)
        sp.add_argument("--output", "-o", required=True)
        if mesh_out:
            sp.add_argument("--stl-format", choices=("binary", "ascii"), default="binary")

    s = sub.add_parser("segment", help="threshold a volume into a mask")
    io(s, mesh_out=False)
    s.add_argument("--lo", type=int, default=226)
    s.add_argument("--hi", type=int, default=3071)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("mask-edit", help="apply an edit script to a mask")
    io(s, mesh_out=False)
    s.add_argument("--script", required=True)
    s.set_defaults(func=cmd_mask_edit)

    s = sub.add_parser("extract", help="contour a mask into a closed mesh")
    io(s)
    s.add_argument("--sigma", type=float, default=0.7)
    s.add_argument("--iso", type=float, default=0.5)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("repair", help="fill holes / excise and refill regions / bridge")
    io(s)
    s.add_argument("--op", choices=("fill_holes", "remove_region", "refill_region", "bridge"), default="fill_holes")
    s.add_argument("--loops", help="all | largest | all<=P | x,y,z (fill_holes)")
    s.add_argument("--seed", type=float, nargs=3)
    s.add_argument("--radius", type=float)
    s.add_argument("--edge-a", type=int, nargs=2)
    s.add_argument("--edge-b", type=int, nargs=2)
    s.set_defaults(func=cmd_repair)

    s = sub.add_parser("refine", help="remesh, relax or decimate")
    io(s)
    s.add_argument("--op", choices=("remesh", "relax", "decimate"), required=True)
    s.add_argument("--target-edge", type=float)
    s.add_argument("--iterations", type=int)
    s.add_argument("--mode", choices=("uniform", "taubin"))
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--mu", type=float)
    s.add_argument("--target-triangles", type=int)
    s.add_argument("--ratio", type=float)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("cut", help="plane cut with optional capping")
    io(s)
    s.add_argument("--point", type=float, nargs=3, required=True)
    s.add_argument("--normal", type=float, nargs=3, required=True)
    s.add_argument("--keep", choices=("positive", "negative"), default="negative")
    s.add_argument("--no-cap", action="store_true")
    s.add_argument("--emit-both", metavar="PATH", help="also write the discarded half here")
    s.set_defaults(func=cmd_cut)

    s = sub.add_parser("sculpt", help="brush displacement")
    io(s)
    s.add_argument("--script", help="JSON list of brush_displace ops")
    s.add_argument("--center", type=float, nargs=3)
    s.add_argument("--radius", type=float)
    s.add_argument("--offset", type=float)
    s.set_defaults(func=cmd_sculpt)

    for name, func, help_ in (("check", cmd_check, "print-readiness gate (exit 1 on fail)"),
                              ("report", cmd_report, "write the print report, never fail")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--input", "-i", required=True)
        s.add_argument("--output", "--report", "-o", dest="output")
        s.add_argument("--print-config", help="JSON object with printcheck settings")
        s.add_argument("--min-wall", type=float, default=1.0)
        s.add_argument("--min-feature", type=float, default=0.8)
        s.add_argument("--samples", type=int, default=10000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--allow-multiple-components", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("run", help="execute a pipeline config end to end")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoints")
    s.add_argument("--dry-run", action="store_true")
    s.set_defaults(func=cmd_run)
    return p


def _check_threads_env():
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return
    try:
        ok = int(raw) >= 0
    except ValueError:
        ok = False
    if not ok:
        raise ConfigError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        _check_threads_env()
        return args.func(args)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_BAD_INPUT
    except (CranioforgeError, OSError, ValueError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
